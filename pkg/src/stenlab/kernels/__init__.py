"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; setting ``STENLAB_PURE_PYTHON=1``
forces the fallback.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("STENLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

GEOHASH_ALPHABET = _pykernels.GEOHASH_ALPHABET

masked_softmax_fwd = _impl.masked_softmax_fwd
masked_softmax_bwd = _impl.masked_softmax_bwd
scatter_add_rows = _impl.scatter_add_rows
adagrad_decay_update = _impl.adagrad_decay_update
leaky_relu_fwd = _impl.leaky_relu_fwd
leaky_relu_bwd = _impl.leaky_relu_bwd
masked_mean_pool_fwd = _impl.masked_mean_pool_fwd
masked_mean_pool_bwd = _impl.masked_mean_pool_bwd
geohash_encode_batch = _impl.geohash_encode_batch
fnv1a64 = _impl.fnv1a64
fnv1a64_batch = _impl.fnv1a64_batch
positive_rank_sum = _impl.positive_rank_sum

__all__ = [
    "BACKEND",
    "GEOHASH_ALPHABET",
    "masked_softmax_fwd",
    "masked_softmax_bwd",
    "scatter_add_rows",
    "adagrad_decay_update",
    "leaky_relu_fwd",
    "leaky_relu_bwd",
    "masked_mean_pool_fwd",
    "masked_mean_pool_bwd",
    "geohash_encode_batch",
    "fnv1a64",
    "fnv1a64_batch",
    "positive_rank_sum",
]
