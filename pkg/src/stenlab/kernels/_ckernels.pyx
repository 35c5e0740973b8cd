# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef bytes _ALPHABET = b"0123456789bcdefghjkmnpqrstuvwxyz"

cdef unsigned long long FNV_OFFSET = 0xCBF29CE484222325ULL
cdef unsigned long long FNV_PRIME = 0x100000001B3ULL


def masked_softmax_fwd(const double[:, ::1] logits, mask):
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t rows = logits.shape[0], cols = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s
    cdef bint seen
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(rows):
        seen = False
        mx = 0.0
        for j in range(cols):
            if m[i, j]:
                if not seen or logits[i, j] > mx:
                    mx = logits[i, j]
                seen = True
        if not seen:
            return None, i
        s = 0.0
        for j in range(cols):
            if m[i, j]:
                out[i, j] = exp(logits[i, j] - mx)
                s += out[i, j]
        for j in range(cols):
            if m[i, j]:
                out[i, j] = out[i, j] / s
    return out_arr, -1


def masked_softmax_bwd(const double[:, ::1] out, const double[:, ::1] grad_out):
    cdef Py_ssize_t rows = out.shape[0], cols = out.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot
    res_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] res = res_arr
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += out[i, j] * grad_out[i, j]
        for j in range(cols):
            res[i, j] = out[i, j] * (grad_out[i, j] - dot)
    return res_arr


def scatter_add_rows(double[:, ::1] target, const long long[::1] index, const double[:, ::1] src):
    cdef Py_ssize_t n = index.shape[0], d = target.shape[1]
    cdef Py_ssize_t i, j, r
    for i in range(n):
        r = index[i]
        for j in range(d):
            target[r, j] += src[i, j]


def adagrad_decay_update(value, grad, acc, double lr, double rho, double eps):
    cdef double[::1] v = value.reshape(-1)
    cdef const double[::1] g = grad.reshape(-1)
    cdef double[::1] a = acc.reshape(-1)
    cdef Py_ssize_t n = v.shape[0], i
    cdef double gi
    for i in range(n):
        gi = g[i]
        a[i] = a[i] * rho + gi * gi
        v[i] = v[i] - (lr * gi) / (sqrt(a[i]) + eps)


cdef str _geohash_one(double lat, double lon, int precision):
    cdef double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0
    cdef double mid
    cdef int bits = 0, nbits = 0, k = 0
    cdef bint even = True
    cdef const char* alphabet = _ALPHABET
    cdef char buf[32]
    while k < precision:
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
            buf[k] = alphabet[bits]
            k += 1
            bits = 0
            nbits = 0
    return buf[:precision].decode("ascii")


def geohash_encode_batch(lat, lon, int precision):
    cdef const double[::1] la = np.ascontiguousarray(lat, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(lon, dtype=np.float64)
    cdef Py_ssize_t i, n = la.shape[0]
    if precision > 32:
        raise ValueError("precision must be <= 32")
    return [_geohash_one(la[i], lo[i], precision) for i in range(n)]


cdef unsigned long long _fnv(const unsigned char[:] data):
    cdef unsigned long long h = FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= FNV_PRIME
    return h


def fnv1a64(data):
    if len(data) == 0:
        return int(FNV_OFFSET)
    return int(_fnv(data))


def fnv1a64_batch(items):
    cdef Py_ssize_t i, n = len(items)
    out_arr = np.empty(n, dtype=np.uint64)
    cdef cnp.uint64_t[::1] out = out_arr
    for i in range(n):
        b = items[i]
        out[i] = _fnv(b) if len(b) else FNV_OFFSET
    return out_arr


def positive_rank_sum(const double[::1] sorted_scores, sorted_labels):
    cdef const unsigned char[::1] lab = np.ascontiguousarray(sorted_labels, dtype=np.uint8)
    cdef Py_ssize_t n = sorted_scores.shape[0]
    cdef Py_ssize_t start = 0, end, k
    cdef double total = 0.0, mid
    cdef long long npos
    while start < n:
        end = start + 1
        while end < n and sorted_scores[end] == sorted_scores[start]:
            end += 1
        npos = 0
        for k in range(start, end):
            npos += lab[k]
        mid = (start + end + 1) / 2.0
        total += npos * mid
        start = end
    return total


cdef void _leaky_scale(const double* x, const double* g, double* out, Py_ssize_t n, double alpha) noexcept nogil:
    # out = g * (1 if x > 0 else alpha); the table lookup keeps gcc from
    # turning the select into a sign-dependent branch
    cdef Py_ssize_t i
    cdef double tab[2]
    tab[0] = alpha
    tab[1] = 1.0
    for i in range(n):
        out[i] = g[i] * tab[<int>(x[i] > 0)]


def leaky_relu_fwd(const double[::1] x, double alpha):
    out_arr = np.empty(x.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    if x.shape[0]:
        _leaky_scale(&x[0], &x[0], &out[0], x.shape[0], alpha)
    return out_arr


def leaky_relu_bwd(const double[::1] x, const double[::1] g, double alpha):
    out_arr = np.empty(x.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    if x.shape[0]:
        _leaky_scale(&x[0], &g[0], &out[0], x.shape[0], alpha)
    return out_arr


def masked_mean_pool_fwd(const double[:, :, ::1] x, mask):
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t i, l, j, cnt
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double inv
    for i in range(n):
        cnt = 0
        for l in range(L):
            if m[i, l]:
                cnt += 1
                for j in range(d):
                    out[i, j] += x[i, l, j]
        if cnt > 1:
            inv = <double>cnt
            for j in range(d):
                out[i, j] = out[i, j] / inv
    return out_arr


def masked_mean_pool_bwd(const double[:, ::1] g, mask):
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = m.shape[0], L = m.shape[1], d = g.shape[1]
    cdef Py_ssize_t i, l, j, cnt
    out_arr = np.zeros((n, L, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double c
    for i in range(n):
        cnt = 0
        for l in range(L):
            cnt += m[i, l]
        if cnt == 0:
            continue
        c = <double>cnt
        for l in range(L):
            if m[i, l]:
                for j in range(d):
                    out[i, l, j] = g[i, j] / c
    return out_arr
