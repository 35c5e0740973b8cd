"""Minimal tape-based reverse-mode autodiff over float64 numpy arrays.

Only the ops the StEN model needs are provided.  Each op builds its output
``Tensor`` with a closure that pushes the output gradient back to its parents;
``Tensor.backward`` replays the closures in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from . import kernels
from .errors import BatchTooSmallError, DegenerateRowError, DimensionError

DTYPE = np.float64
LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def _accum(self, g, fresh=False):
        # fresh: g is a new array no other tensor holds, so it can be adopted
        if self.grad is None:
            self.grad = g if fresh and g.dtype == DTYPE else np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def _grad_buffer(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def backward(self, grad=None):
        if not self.requires_grad:
            return
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate gradients are not needed after propagation
                    node.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, what):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{what}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape), fresh=True)
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(a.data * b.data, (a, b), backward)


def scale(x, c):
    """Multiply by a Python constant."""
    c = float(c)

    def backward(g):
        x._accum(g * c, fresh=True)

    return _make(x.data * c, (x,), backward)


def matmul(a, b):
    """``a @ b`` with numpy's batched semantics (both operands at least 2-d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape), fresh=True)
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape), fresh=True)

    return _make(a.data @ b.data, (a, b), backward)


def affine(x, weight, bias):
    """``x[..., d_in] @ weight[d_in, d_out] + bias[d_out]``."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"affine: input shape {x.shape} does not match weight shape {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"affine: bias shape {bias.shape} does not match weight shape {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, weight.shape[0])
    out = x2 @ weight.data
    out += bias.data
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        if x.requires_grad:
            x._accum((g2 @ weight.data.T).reshape(x.shape), fresh=True)
        if weight.requires_grad:
            weight._accum(x2.T @ g2, fresh=True)
        if bias.requires_grad:
            bias._accum(g2.sum(axis=0), fresh=True)

    return _make(out, (x, weight, bias), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def reshape(x, shape):
    def backward(g):
        x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def slice_last(x, lo, hi):
    """``x[..., lo:hi]``."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., lo:hi] = g
        x._accum(full, fresh=True)

    return _make(x.data[..., lo:hi], (x,), backward)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def sigmoid(x):
    out = _sigmoid_np(x.data)

    def backward(g):
        x._accum(g * out * (1.0 - out), fresh=True)

    return _make(out, (x,), backward)


def _sigmoid_np(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def leaky_relu(x, alpha=LEAKY_SLOPE):
    shape = x.shape
    flat = np.ascontiguousarray(x.data.reshape(-1))

    def backward(g):
        x._accum(kernels.leaky_relu_bwd(flat, np.ascontiguousarray(g.reshape(-1)), alpha).reshape(shape), fresh=True)

    return _make(kernels.leaky_relu_fwd(flat, alpha).reshape(shape), (x,), backward)


def exp_neg(x):
    out = np.exp(-x.data)

    def backward(g):
        x._accum(-g * out, fresh=True)

    return _make(out, (x,), backward)


def pointwise(x, kind, alpha=LEAKY_SLOPE):
    """Dispatch by name: ``sigmoid``, ``leaky_relu`` or ``exp_neg``."""
    x = as_tensor(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "exp_neg":
        return exp_neg(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def softmax_masked(logits, mask):
    """Softmax over the last axis restricted to ``mask``; masked outputs are exactly 0."""
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(f"softmax_masked: mask shape {mask.shape} vs logits shape {logits.shape}")
    L = logits.shape[-1]
    flat = np.ascontiguousarray(logits.data.reshape(-1, L))
    out, bad = kernels.masked_softmax_fwd(flat, mask.reshape(-1, L))
    if bad >= 0:
        raise DegenerateRowError(f"softmax_masked: row {bad} has no valid position")
    out = out.reshape(logits.shape)

    def backward(g):
        gi = kernels.masked_softmax_bwd(
            np.ascontiguousarray(out.reshape(-1, L)), np.ascontiguousarray(g.reshape(-1, L))
        )
        logits._accum(gi.reshape(logits.shape), fresh=True)

    return _make(out, (logits,), backward)


def masked_mean_pool(x, mask):
    """Mean over axis -2 of the valid positions; all-masked rows pool to zero."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"masked_mean_pool: mask shape {mask.shape} vs input shape {x.shape}")
    L, d = x.shape[-2:]
    m2 = np.ascontiguousarray(mask.reshape(-1, L))
    out = kernels.masked_mean_pool_fwd(np.ascontiguousarray(x.data.reshape(-1, L, d)), m2)

    def backward(g):
        gx = kernels.masked_mean_pool_bwd(np.ascontiguousarray(g.reshape(-1, d)), m2)
        x._accum(gx.reshape(x.shape), fresh=True)

    return _make(out.reshape(x.shape[:-2] + (d,)), (x,), backward)


def weighted_pool(w, x):
    """``out[n, :] = sum_l w[n, l] * x[n, l, :]`` as a batched matmul."""
    w, x = as_tensor(w), as_tensor(x)
    if w.ndim != 2 or x.ndim != 3 or x.shape[:2] != w.shape:
        raise DimensionError(f"weighted_pool: weights {w.shape} vs values {x.shape}")
    n, L = w.shape
    return reshape(matmul(reshape(w, (n, 1, L)), x), (n, x.shape[2]))


def gather_rows(table, index):
    """Embedding lookup: ``table[index]`` with scatter-add backward."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for table shape {table.shape}")
    out = table.data[index]

    def backward(g):
        buf = table._grad_buffer()
        kernels.scatter_add_rows(
            buf, np.ascontiguousarray(index.reshape(-1)), np.ascontiguousarray(g.reshape(-1, table.shape[1]))
        )

    return _make(out, (table,), backward)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, dim, momentum=0.99, eps=1e-5):
        self.running_mean = np.zeros(dim, dtype=DTYPE)
        self.running_var = np.ones(dim, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state, train):
    if x.ndim != 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm: input shape {x.shape} vs scale shape {gamma.shape}")
    n = x.shape[0]
    if train:
        if n < 2:
            raise BatchTooSmallError(f"batch_norm: train mode needs at least 2 rows, got {n}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        mom = state.momentum
        state.running_mean = mom * state.running_mean + (1.0 - mom) * mean
        state.running_var = mom * state.running_var + (1.0 - mom) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            if train:
                dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dx = dxhat * inv_std
            x._accum(dx)

    return _make(out, (x, gamma, beta), backward)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy computed from logits."""
    z = logits.data
    y = np.asarray(labels, dtype=DTYPE)
    if y.shape != z.shape:
        raise DimensionError(f"bce_with_logits: labels shape {y.shape} vs logits shape {z.shape}")
    n = z.size
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def backward(g):
        logits._accum(g * (_sigmoid_np(z) - y) / n)

    return _make(loss, (logits,), backward)


def inv_sqrt(d):
    return 1.0 / math.sqrt(d)
