"""The StEN network and its target-attention BaseModel.

One class covers every variant: ``use_stpro``, ``use_stpre`` and ``use_stta``
switch the three spatiotemporal modules on top of the BaseModel (raw user and
item embeddings plus target attention with globally shared projections).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .blocks import FFN, Linear, ScalarGate, activation_unit
from .config import dataclass_from_kv, dataclass_to_kv
from .dataset import slice_by_period
from .errors import ConfigError, DimensionError
from .features import DEFAULT_PERIOD_STARTS, ITEM_FIELDS, PERIODS, SPATIAL_FIELDS, TEMPORAL_FIELDS, USER_FIELDS
from .features import FeatureEmbedder, validate_period_starts
from .params import ParameterStore
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    bce_with_logits,
    concat,
    exp_neg,
    leaky_relu,
    masked_mean_pool,
    matmul,
    mul,
    no_grad,
    reshape,
    scale,
    sigmoid,
    slice_last,
    softmax_masked,
    weighted_pool,
)
from .tensor import sum as tsum

ABLATIONS = ("stpro", "stpre", "stta")


@dataclass
class ModelConfig:
    embed_dim: int = 16
    table_size: int = 10007
    seq_len: int = 20
    ffn_hidden: int = 64
    attn_dim: int = 16
    tower: tuple[int, ...] = (128, 64, 32)
    period_starts: tuple[int, ...] = DEFAULT_PERIOD_STARTS
    t_clamp: float = 168.0
    use_stpro: bool = True
    use_stpre: bool = True
    use_stta: bool = True
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    init_seed: int = 0

    def __post_init__(self):
        self.tower = tuple(self.tower)
        self.period_starts = tuple(self.period_starts)
        self.validate()

    def validate(self):
        for name in ("embed_dim", "table_size", "seq_len", "ffn_hidden", "attn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.table_size < 2:
            raise ConfigError("table_size must be >= 2 (row 0 is the pad row)")
        if len(self.tower) != 3 or min(self.tower) < 1:
            raise ConfigError(f"tower needs three positive widths, got {self.tower}")
        if not self.t_clamp > 0:
            raise ConfigError("t_clamp must be positive")
        if not 0.0 <= self.bn_momentum < 1.0 or not self.bn_eps > 0:
            raise ConfigError("batch-norm momentum must be in [0, 1) and eps positive")
        validate_period_starts(self.period_starts)
        return self

    # derived dimensions
    @property
    def d_u(self):
        return len(USER_FIELDS) * self.embed_dim

    @property
    def d_i(self):
        return len(ITEM_FIELDS) * self.embed_dim

    @property
    def d_g(self):
        return len(SPATIAL_FIELDS) * self.embed_dim

    @property
    def d_st(self):
        return (len(SPATIAL_FIELDS) + len(TEMPORAL_FIELDS)) * self.embed_dim

    @property
    def d_o(self):
        return self.attn_dim

    @property
    def d_k(self):
        return self.attn_dim

    @property
    def n_gu(self):
        return self.d_g + self.d_u

    @property
    def variant(self):
        on = [a for a in ABLATIONS if getattr(self, f"use_{a}")]
        if len(on) == len(ABLATIONS):
            return "sten"
        return "base" if not on else "base+" + "+".join(on)

    def with_variant(self, enabled):
        """Copy with exactly the modules named in ``enabled`` switched on."""
        bad = set(enabled) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown module(s) {sorted(bad)}; valid: {', '.join(ABLATIONS)}")
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update({f"use_{a}": a in enabled for a in ABLATIONS})
        return ModelConfig(**kw)

    def to_kv(self):
        return dataclass_to_kv(self)

    @classmethod
    def from_kv(cls, mapping, strict=True):
        return dataclass_from_kv(cls, mapping, strict=strict)


@dataclass
class ForwardOutputs:
    u: Tensor = None
    m: Tensor = None
    st: Tensor = None
    att_u: Tensor = None
    att_m: Tensor = None
    h_u: Tensor = None
    h_m: Tensor = None
    h_stpro: Tensor = None
    f_te: Tensor = None
    w_te: Tensor = None
    att_tea: Tensor = None
    h_tea: Tensor = None
    mean_pb: Tensor = None
    mean_pl: Tensor = None
    mean_pt: Tensor = None
    mean_pd: Tensor = None
    mean_ps: Tensor = None
    h_tpf: Tensor = None
    q_spa: Tensor = None
    h_spa: Tensor = None
    h_stpre: Tensor = None
    Q_Param: Tensor = None
    K_Param: Tensor = None
    V_Param: Tensor = None
    Q: Tensor = None
    K: Tensor = None
    V: Tensor = None
    attn: Tensor = None
    h_ta: Tensor = None
    dense_0: Tensor = None
    dense_1: Tensor = None
    dense_2: Tensor = None
    dense_3: Tensor = None
    logit: Tensor = None
    prediction: Tensor = None

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


_MEAN_NAMES = ("mean_pb", "mean_pl", "mean_pt", "mean_pd", "mean_ps")


def _safe_softmax(logits, mask):
    """Masked softmax whose all-masked rows come out as exact zeros."""
    has = mask.any(axis=-1, keepdims=True)
    w = softmax_masked(logits, mask | ~has)
    return mul(w, has.astype(np.float64))


class StEN:
    def __init__(self, config: ModelConfig | None = None, params: ParameterStore | None = None):
        cfg = self.config = config or ModelConfig()
        cfg.validate()
        rng = np.random.default_rng(cfg.init_seed)
        store = self.params = ParameterStore()
        d_u, d_i, d_st, d_o, n_h = cfg.d_u, cfg.d_i, cfg.d_st, cfg.d_o, cfg.ffn_hidden

        self.embedder = FeatureEmbedder(store, cfg.table_size, cfg.embed_dim, rng)

        if cfg.use_stpro:
            self.gate_u = ScalarGate(store, "stpro/fc_u", d_st, d_u, rng)
            self.gate_m = ScalarGate(store, "stpro/fc_m", d_st, d_i, rng)
        if cfg.use_stpre:
            self.ffn_time = FFN(store, "tea/ffn_time", 1, n_h, rng)
            self.fc_t = Linear(store, "tea/fc_t", d_u, 1, rng)
            self.ffn_tea = FFN(store, "tea/ffn_act", d_i, n_h, rng)
            self.ffn_mean = FFN(store, "tea/ffn_mean", d_i, n_h, rng)
            self.w_m = store.add("tea/w_m", np.array([1.0]))
            self.w_tea = store.add("tea/w_tea", np.array([1.0]))
            self.ffn_tpf = FFN(store, "tpf/ffn", d_i, n_h, rng)
            self.w_tpf = store.add("tpf/w_tpf", np.array([0.1]))
            self.fc_q = Linear(store, "spa/fc_q", cfg.n_gu, 1, rng)
            self.ffn_spa = FFN(store, "spa/ffn", d_i, n_h, rng)
            self.w_spa = store.add("spa/w_spa", np.array([0.1]))
        if cfg.use_stta:
            width = d_i * d_o + d_o
            self.gen = {k: Linear(store, f"stta/gen_{k}", d_st, width, rng) for k in "qkv"}
        else:
            self.proj = {k: Linear(store, f"ta/proj_{k}", d_i, d_o, rng) for k in "qkv"}

        widths = (self.dense_input_dim,) + cfg.tower
        self.tower = []
        for i in range(3):
            fc = Linear(store, f"tower/fc_f{i}", widths[i], widths[i + 1], rng)
            gamma = store.add(f"tower/bn{i}/gamma", np.ones(widths[i + 1]))
            beta = store.add(f"tower/bn{i}/beta", np.zeros(widths[i + 1]))
            store.buffers[f"tower/bn{i}"] = BatchNormState(widths[i + 1], cfg.bn_momentum, cfg.bn_eps)
            self.tower.append((fc, gamma, beta, f"tower/bn{i}"))
        self.fc_out = Linear(store, "tower/fc_sigmoid", cfg.tower[-1], 1, rng)

        if params is not None:
            self.load_state(params)

    @property
    def dense_input_dim(self):
        cfg = self.config
        d = 4 * (cfg.d_u + cfg.d_i) if cfg.use_stpro else cfg.d_u + cfg.d_i
        if cfg.use_stpre:
            d += cfg.d_i
        return d + cfg.d_o

    def load_state(self, other: ParameterStore):
        if other.names() != self.params.names():
            raise ConfigError("parameter names do not match the model configuration")
        for name, p in other.items():
            own = self.params[name]
            if own.shape != p.shape:
                raise ConfigError(f"parameter {name!r}: shape {p.shape} vs expected {own.shape}")
            own.data[...] = p.data
        for name, state in other.buffers.items():
            self.params.buffers[name] = state

    # ------------------------------------------------------------------ blocks
    def stpro(self, u, m, st, out):
        out.att_u = self.gate_u(st, u)
        out.att_m = self.gate_m(st, m)
        out.h_u = activation_unit(u, out.att_u)
        out.h_m = activation_unit(m, out.att_m)
        out.h_stpro = concat([out.h_u, out.h_m], axis=-1)
        return out.h_stpro

    def tea(self, u, b, t_i, mask, out):
        n, L = mask.shape
        decay = exp_neg(Tensor(t_i))
        out.f_te = reshape(self.ffn_time(reshape(decay, (n, L, 1))), (n, L))
        out.w_te = _safe_softmax(out.f_te, mask)
        gate = reshape(sigmoid(self.fc_t(u)), (n, 1, 1))
        act = self.ffn_tea(mul(gate, b))
        out.att_tea = weighted_pool(out.w_te, act)
        pooled = masked_mean_pool(self.ffn_mean(b), mask)
        out.h_tea = add(mul(self.w_m, pooled), mul(self.w_tea, out.att_tea))
        return out.h_tea

    def tpf(self, b, slices, out):
        fb = self.ffn_tpf(b)
        n, L, d = fb.shape
        # all five slice means in one batched matmul against [n, P, L] weights
        sel = np.stack(slices, axis=1).astype(np.float64)
        sel /= np.maximum(sel.sum(axis=-1, keepdims=True), 1.0)
        means = reshape(matmul(Tensor(sel), fb), (n, len(slices) * d))
        for k, name in enumerate(_MEAN_NAMES):
            setattr(out, name, slice_last(means, k * d, (k + 1) * d))
        # fixed divisor: empty periods still count
        out.h_tpf = scale(tsum(reshape(means, (n, len(slices), d)), axis=1), 1.0 / len(PERIODS))
        return out.h_tpf

    def spa(self, g, u, b, mask, out):
        n = mask.shape[0]
        out.q_spa = sigmoid(self.fc_q(concat([g, u], axis=-1)))
        gated = mul(reshape(out.q_spa, (n, 1, 1)), b)
        out.h_spa = masked_mean_pool(self.ffn_spa(gated), mask)
        return out.h_spa

    def stpre(self, u, g, b, batch, out):
        h_tea = self.tea(u, b, batch.time_intervals, batch.mask, out)
        h_tpf = self.tpf(b, slice_by_period(batch), out)
        h_spa = self.spa(g, u, b, batch.mask, out)
        out.h_stpre = add(add(h_tea, mul(self.w_tpf, h_tpf)), mul(self.w_spa, h_spa))
        return out.h_stpre

    def generate(self, st, out=None):
        """Per-sample ``(W, b)`` for Q, K and V from the spatiotemporal vector."""
        cfg = self.config
        n = st.shape[0]
        split = cfg.d_i * cfg.d_o
        result = {}
        for k in "qkv":
            param = self.gen[k](st)
            if out is not None:
                setattr(out, f"{k.upper()}_Param", param)
            w = reshape(slice_last(param, 0, split), (n, cfg.d_i, cfg.d_o))
            bias = reshape(slice_last(param, split, split + cfg.d_o), (n, 1, cfg.d_o))
            result[k] = (w, bias)
        return result

    def target_attention(self, m, b, mask, st, out):
        cfg = self.config
        n, L = mask.shape
        if cfg.use_stta:
            gen = self.generate(st, out)
            out.Q = add(matmul(reshape(m, (n, 1, cfg.d_i)), gen["q"][0]), gen["q"][1])
            out.K = add(matmul(b, gen["k"][0]), gen["k"][1])
            out.V = add(matmul(b, gen["v"][0]), gen["v"][1])
        else:
            out.Q = reshape(self.proj["q"](m), (n, 1, cfg.d_o))
            out.K = self.proj["k"](b)
            out.V = self.proj["v"](b)
        logits = scale(reshape(matmul(out.K, reshape(out.Q, (n, cfg.d_o, 1))), (n, L)), 1.0 / math.sqrt(cfg.d_k))
        out.attn = _safe_softmax(logits, mask)
        out.h_ta = weighted_pool(out.attn, out.V)
        return out.h_ta

    def dense_tower(self, parts, train, out):
        x = out.dense_0 = concat(parts, axis=-1)
        for i, (fc, gamma, beta, state_name) in enumerate(self.tower):
            x = leaky_relu(batch_norm(fc(x), gamma, beta, self.params.buffers[state_name], train))
            setattr(out, f"dense_{i + 1}", x)
        out.logit = reshape(self.fc_out(x), (x.shape[0],))
        out.prediction = sigmoid(out.logit)
        return out.prediction

    # ----------------------------------------------------------------- forward
    def forward(self, batch, train=False) -> ForwardOutputs:
        cfg = self.config
        if batch.mask.ndim != 2 or batch.behavior_ids.shape[:2] != batch.mask.shape:
            raise DimensionError(f"behavior ids {batch.behavior_ids.shape} vs mask {batch.mask.shape}")
        out = ForwardOutputs()
        emb = self.embedder.embed(batch)
        u, m, g, st, b = emb["u"], emb["m"], emb["g"], emb["st"], emb["b"]
        out.u, out.m, out.st = u, m, st
        parts = [self.stpro(u, m, st, out) if cfg.use_stpro else concat([u, m], axis=-1)]
        if cfg.use_stpre:
            parts.append(self.stpre(u, g, b, batch, out))
        parts.append(self.target_attention(m, b, batch.mask, st, out))
        self.dense_tower(parts, train, out)
        return out

    def loss(self, batch, train=True):
        out = self.forward(batch, train=train)
        return bce_with_logits(out.logit, batch.labels), out

    def predict(self, batch, chunk=4096):
        scores = np.empty(len(batch))
        with no_grad():
            for lo in range(0, len(batch), chunk):
                idx = np.arange(lo, min(lo + chunk, len(batch)))
                scores[idx] = self.forward(batch.take(idx), train=False).prediction.data
        return scores


def build_model(config: ModelConfig | None = None, baseline=False, ablation=None):
    """StEN by default; ``baseline`` gives BaseModel, ``ablation`` adds the named modules to it."""
    config = config or ModelConfig()
    if baseline and ablation:
        raise ConfigError("--baseline and --ablation are mutually exclusive")
    if baseline:
        config = config.with_variant(())
    elif ablation:
        config = config.with_variant(tuple(ablation))
    return StEN(config)
