"""Loss, AdagradDecay optimizer, warm-up schedule and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import dataclass_from_kv, dataclass_to_kv
from .errors import ConfigError, NonFiniteGradientError
from .metrics import auc


@dataclass
class TrainConfig:
    batch_size: int = 256
    base_lr: float = 0.001
    peak_lr: float = 0.015
    warmup_steps: int = 1000
    total_steps: int = 5000
    accumulator_decay: float = 0.9999
    eps: float = 1e-6
    initial_accumulator: float = 0.1
    seed: int = 0
    eval_every: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if not 0 < self.base_lr <= self.peak_lr:
            raise ConfigError(f"need 0 < base_lr <= peak_lr, got {self.base_lr}, {self.peak_lr}")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.warmup_steps > self.total_steps:
            raise ConfigError(f"warmup_steps ({self.warmup_steps}) exceeds total_steps ({self.total_steps})")
        if not 0 < self.accumulator_decay <= 1 or self.eps < 0 or self.initial_accumulator < 0:
            raise ConfigError("accumulator_decay must be in (0, 1]; eps and initial_accumulator >= 0")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        return self

    def to_kv(self):
        return dataclass_to_kv(self)

    @classmethod
    def from_kv(cls, mapping, strict=True):
        return dataclass_from_kv(cls, mapping, strict=strict)


def bce_loss(p, y):
    """Mean cross-entropy of probabilities ``p`` against 0/1 labels ``y``.

    Evaluated through the logit so ``p`` at 0 or 1 with a matching label
    gives 0 rather than ``nan``.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log(p) - np.log1p(-p)
        pos = np.logaddexp(0.0, -z)  # -log p
        neg = np.logaddexp(0.0, z)  # -log(1 - p)
        # keep 0 * inf out of the hard-label cases
        loss = np.where(y == 1, pos, np.where(y == 0, neg, y * pos + (1 - y) * neg))
    return float(np.mean(loss))


def warmup_lr(step, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.peak_lr
    return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * (step / cfg.warmup_steps)


def adagrad_decay_step(params, lr, rho=0.9999, eps=1e-6):
    """``acc = rho*acc + g^2; theta -= lr*g/(sqrt(acc)+eps)`` for every parameter, in place.

    All gradients are checked before any parameter moves.
    """
    params = list(params)
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(p.name)
    for p in params:
        kernels.adagrad_decay_update(
            p.data.reshape(-1), p.grad.reshape(-1), p.accumulator.reshape(-1), float(lr), float(rho), float(eps)
        )


def format_log_line(step, lr, loss, val_auc=None):
    line = f"{int(step)}\t{float(lr)!r}\t{float(loss)!r}"
    if val_auc is not None:
        line += f"\t{float(val_auc)!r}"
    return line + "\n"


class BatchStream:
    """Endless fixed-seed mini-batches: one shuffled permutation per epoch."""

    def __init__(self, n, batch_size, seed):
        if n < 1:
            raise ConfigError("training dataset is empty")
        self.n = n
        self.size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._perm = self.rng.permutation(n)
        self._pos = 0

    def next_index(self):
        if self._pos + self.size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos : self._pos + self.size]
        self._pos += self.size
        return idx


def evaluate_auc(model, batch):
    scores = model.predict(batch)
    try:
        return auc(scores, batch.labels)
    except ValueError:
        return math.nan


def train_loop(model, dataset, cfg: TrainConfig, val=None, log=None, on_step=None):
    """Train ``model`` in place on a ``PaddedBatch``; returns the per-step losses.

    ``log`` (a text stream) receives one ``step lr loss [val_auc]`` line per
    step; ``val_auc`` appears every ``eval_every`` steps and after the last
    step when ``val`` is given.
    """
    cfg.validate()
    if dataset is None or len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    if len(dataset) < 2:
        raise ConfigError("training dataset needs at least 2 samples for batch norm")
    stream = BatchStream(len(dataset), cfg.batch_size, cfg.seed)
    params = list(model.params)
    # fresh optimizer state; a small positive start damps the first steps on rare ids
    for p in params:
        p.accumulator.fill(cfg.initial_accumulator)
    losses = np.empty(cfg.total_steps)
    for step in range(cfg.total_steps):
        lr = warmup_lr(step, cfg)
        model.params.zero_grad()
        loss, _ = model.loss(dataset.take(stream.next_index()), train=True)
        loss.backward()
        adagrad_decay_step(params, lr, cfg.accumulator_decay, cfg.eps)
        losses[step] = loss.item()
        val_auc = None
        last = step == cfg.total_steps - 1
        if val is not None and ((cfg.eval_every and (step + 1) % cfg.eval_every == 0) or last):
            val_auc = evaluate_auc(model, val)
        if log is not None:
            log.write(format_log_line(step, lr, losses[step], val_auc))
        if on_step is not None:
            on_step(step, lr, losses[step], val_auc)
    return losses
