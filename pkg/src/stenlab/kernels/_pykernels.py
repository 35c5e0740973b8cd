"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
"""
import numpy as np

GEOHASH_ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def masked_softmax_fwd(logits, mask):
    """Row-wise softmax over valid positions; returns ``(out, bad_row)``.

    ``bad_row`` is the index of the first all-masked row, or -1.
    """
    valid = mask.astype(bool)
    counts = valid.sum(axis=1)
    if counts.size and counts.min() == 0:
        return None, int(np.argmin(counts))
    shifted = np.where(valid, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(valid, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True), -1


def masked_softmax_bwd(out, grad_out):
    dot = (out * grad_out).sum(axis=1, keepdims=True)
    return out * (grad_out - dot)


def scatter_add_rows(target, index, src):
    np.add.at(target, index, src)


def adagrad_decay_update(value, grad, acc, lr, rho, eps):
    acc *= rho
    acc += grad * grad
    value -= lr * grad / (np.sqrt(acc) + eps)


def _geohash_one(lat, lon, precision):
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    nbits = 0
    even = True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        nbits += 1
        if nbits == 5:
            chars.append(GEOHASH_ALPHABET[bits])
            bits = 0
            nbits = 0
    return "".join(chars)


def geohash_encode_batch(lat, lon, precision):
    return [_geohash_one(float(a), float(o), precision) for a, o in zip(lat, lon)]


def fnv1a64(data):
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def fnv1a64_batch(items):
    return np.array([fnv1a64(b) for b in items], dtype=np.uint64)


def positive_rank_sum(sorted_scores, sorted_labels):
    """Sum of mid-ranks (1-based) of positives in ascending-sorted scores."""
    n = sorted_scores.shape[0]
    if n == 0:
        return 0.0
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], n]
    mid = (starts + ends + 1) / 2.0
    ranks = np.repeat(mid, ends - starts)
    return float(ranks[sorted_labels.astype(bool)].sum())


def leaky_relu_fwd(x, alpha):
    return np.where(x > 0, x, x * alpha)


def leaky_relu_bwd(x, g, alpha):
    return np.where(x > 0, g, g * alpha)


def masked_mean_pool_fwd(x, mask):
    m = mask.astype(bool)
    denom = np.maximum(m.sum(axis=1), 1).astype(np.float64)[:, None]
    return np.where(m[:, :, None], x, 0.0).sum(axis=1) / denom


def masked_mean_pool_bwd(g, mask):
    m = mask.astype(bool)
    denom = np.maximum(m.sum(axis=1), 1).astype(np.float64)[:, None]
    return np.where(m[:, :, None], (g / denom)[:, None, :], 0.0)
