"""Binary checkpoint: config block plus named little-endian float64 blobs.

Layout::

    STENLAB-CHECKPOINT 1\\n
    config <nbytes>\\n
    <nbytes of "key = value" text>
    tensors <count>\\n
    then per tensor: name\\tdtype\\tshape\\tnbytes\\n followed by the raw bytes

``shape`` is comma-separated (empty for scalars). Batch-norm running
statistics are stored as ``<layer>/running_mean`` and ``<layer>/running_var``.
"""
from __future__ import annotations

import os
import tempfile

import numpy as np

from .config import format_kv, parse_kv
from .errors import CompatibilityError, SchemaError
from .model import ModelConfig, StEN
from .tensor import BatchNormState

MAGIC = b"STENLAB-CHECKPOINT"
VERSION = 1
_DTYPE = "<f8"


def _tensors(model):
    out = [(name, p.data) for name, p in model.params.items()]
    for name, state in model.params.buffers.items():
        out.append((f"{name}/running_mean", state.running_mean))
        out.append((f"{name}/running_var", state.running_var))
    return out


def to_bytes(model):
    cfg = format_kv(model.config.to_kv()).encode("utf-8")
    chunks = [MAGIC + b" %d\n" % VERSION, b"config %d\n" % len(cfg), cfg]
    tensors = _tensors(model)
    chunks.append(b"tensors %d\n" % len(tensors))
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        chunks.append(f"{name}\t{_DTYPE}\t{shape}\t{len(raw)}\n".encode("utf-8"))
        chunks.append(raw)
    return b"".join(chunks)


def save_checkpoint(model, path):
    """Write atomically: the file appears complete or not at all."""
    data = to_bytes(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def line(self):
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise SchemaError("checkpoint truncated (missing newline)")
        out = self.data[self.pos : end].decode("utf-8")
        self.pos = end + 1
        return out

    def take(self, n):
        if self.pos + n > len(self.data):
            raise SchemaError("checkpoint truncated (blob shorter than declared)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def _header_count(line, key):
    parts = line.split(" ")
    if len(parts) != 2 or parts[0] != key or not parts[1].isdigit():
        raise SchemaError(f"checkpoint: expected '{key} <n>', got {line!r}")
    return int(parts[1])


def from_bytes(data):
    r = _Reader(data)
    head = r.line().split(" ")
    if len(head) != 2 or head[0].encode() != MAGIC:
        raise SchemaError("not a stenlab checkpoint")
    if head[1] != str(VERSION):
        raise CompatibilityError(f"checkpoint format version {head[1]} (this build reads {VERSION})")
    cfg_len = _header_count(r.line(), "config")
    config = ModelConfig.from_kv(parse_kv(r.take(cfg_len).decode("utf-8")))
    n = _header_count(r.line(), "tensors")
    blobs = {}
    for _ in range(n):
        fields = r.line().split("\t")
        if len(fields) != 4:
            raise SchemaError(f"checkpoint: bad tensor header {fields!r}")
        name, dtype, shape_s, nbytes = fields
        if dtype != _DTYPE:
            raise CompatibilityError(f"tensor {name!r}: dtype {dtype} unsupported")
        shape = tuple(int(d) for d in shape_s.split(",") if d)
        raw = r.take(int(nbytes))
        arr = np.frombuffer(raw, dtype=_DTYPE)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise SchemaError(f"tensor {name!r}: {arr.size} values for shape {shape}")
        blobs[name] = arr.reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise SchemaError("checkpoint has trailing bytes")

    model = StEN(config)
    expected = {name: arr.shape for name, arr in _tensors(model)}
    if set(expected) != set(blobs):
        missing, extra = sorted(set(expected) - set(blobs)), sorted(set(blobs) - set(expected))
        raise CompatibilityError(f"checkpoint tensors do not match its config (missing {missing}, extra {extra})")
    for name, p in model.params.items():
        if blobs[name].shape != p.shape:
            raise CompatibilityError(f"tensor {name!r}: shape {blobs[name].shape} vs {p.shape}")
        p.data[...] = blobs[name]
    for name, state in model.params.buffers.items():
        new = BatchNormState(state.running_mean.size, state.momentum, state.eps)
        new.running_mean = blobs[f"{name}/running_mean"].copy()
        new.running_var = blobs[f"{name}/running_var"].copy()
        model.params.buffers[name] = new
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
