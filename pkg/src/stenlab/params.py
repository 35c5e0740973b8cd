"""Named trainable parameters and their container."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import DTYPE, Tensor


class Parameter(Tensor):
    """A leaf tensor with a stable name and an optimizer accumulator."""

    __slots__ = ("accumulator",)

    def __init__(self, name, value):
        super().__init__(np.array(value, dtype=DTYPE, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.accumulator = np.zeros_like(self.data)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)


class ParameterStore:
    """Ordered registry of parameters plus non-trainable buffers (batch-norm stats)."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.buffers: dict[str, object] = {}

    def add(self, name, value):
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def num_elements(self):
        return int(np.sum([p.data.size for p in self._params.values()]))

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def values_snapshot(self):
        return {n: p.data.copy() for n, p in self._params.items()}


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
