"""Reusable blocks: linear layer, residual FFN, pooling, activation unit, scalar gate."""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DimensionError
from .params import xavier_uniform
from .tensor import affine, as_tensor, concat, leaky_relu, masked_mean_pool, mul, scale, sigmoid, sub
from .tensor import sum as tsum

__all__ = ["Linear", "FFN", "ScalarGate", "activation_unit", "masked_mean_pool"]


class Linear:
    def __init__(self, store, name, d_in, d_out, rng, zero=False):
        w = np.zeros((d_in, d_out)) if zero else xavier_uniform(rng, d_in, d_out)
        self.weight = store.add(f"{name}/W", w)
        self.bias = store.add(f"{name}/b", np.zeros(d_out))

    def __call__(self, x):
        return affine(x, self.weight, self.bias)


class FFN:
    """``FC2(LeakyReLU(FC1(x))) + x`` on the trailing axis.

    FC2 starts at zero so a fresh FFN is the identity map.
    """

    def __init__(self, store, name, in_dim, hidden_dim, rng, out_dim=None):
        out_dim = in_dim if out_dim is None else out_dim
        if out_dim != in_dim:
            raise ConfigError(f"FFN {name!r}: residual needs out_dim == in_dim, got {in_dim} -> {out_dim}")
        self.fc1 = Linear(store, f"{name}/fc1", in_dim, hidden_dim, rng)
        self.fc2 = Linear(store, f"{name}/fc2", hidden_dim, out_dim, rng, zero=True)

    def __call__(self, x):
        return self.fc2(leaky_relu(self.fc1(x))) + x


def activation_unit(u, att):
    """``concat(u, att, u - att, u * att)`` on the trailing axis."""
    u, att = as_tensor(u), as_tensor(att)
    if u.shape != att.shape:
        raise DimensionError(f"activation_unit: shapes {u.shape} and {att.shape} differ")
    return concat([u, att, sub(u, att), mul(u, att)], axis=-1)


class ScalarGate:
    """Scales ``v`` by ``sigmoid(FC(ctx) . v / sqrt(d_v))``, one scalar per row."""

    def __init__(self, store, name, d_ctx, d_v, rng):
        self.fc = Linear(store, name, d_ctx, d_v, rng)
        self.d_v = d_v

    def gate(self, ctx, v):
        logit = scale(tsum(mul(self.fc(ctx), v), axis=-1, keepdims=True), 1.0 / math.sqrt(self.d_v))
        return sigmoid(logit)

    def __call__(self, ctx, v):
        return mul(self.gate(ctx, v), v)
