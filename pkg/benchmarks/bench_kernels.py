"""Time each hot kernel under the compiled and the pure-numpy backend.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel: best-of-N milliseconds for both backends and the
speed-up. Results are checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from stenlab.kernels import _pykernels as py

try:
    from stenlab.kernels import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def cases(rng):
    n, L, d = 256, 20, 32
    logits = rng.normal(size=(n, L))
    mask = rng.random((n, L)) < 0.7
    mask[:, -1] = True
    soft, _ = py.masked_softmax_fwd(logits, mask)
    g2 = rng.normal(size=(n, L))
    x3 = rng.normal(size=(n, L, d))
    gpool = rng.normal(size=(n, d))
    big = rng.normal(size=n * L * 64)
    gbig = rng.normal(size=big.size)
    table = np.zeros((10007, 16))
    idx = rng.integers(0, 10007, size=n * L)
    src = rng.normal(size=(n * L, 16))
    value = rng.normal(size=160112)
    grad = rng.normal(size=value.size)
    acc = rng.random(value.size)
    lat = rng.uniform(-90, 90, size=5000)
    lon = rng.uniform(-180, 180, size=5000)
    keys = [f"item_id\x1fi{k}".encode() for k in range(5000)]
    scores = np.sort(rng.random(100000))
    labels = (rng.random(scores.size) < 0.1).astype(np.int8)

    def adagrad(mod):
        v, a = value.copy(), acc.copy()
        mod.adagrad_decay_update(v, grad, a, 0.01, 0.9999, 1e-6)
        return v

    def scatter(mod):
        t = table.copy()
        mod.scatter_add_rows(t, idx, src)
        return t

    return {
        "masked_softmax_fwd": lambda m: m.masked_softmax_fwd(logits, mask)[0],
        "masked_softmax_bwd": lambda m: m.masked_softmax_bwd(soft, g2),
        "masked_mean_pool_fwd": lambda m: m.masked_mean_pool_fwd(x3, mask),
        "masked_mean_pool_bwd": lambda m: m.masked_mean_pool_bwd(gpool, mask),
        "leaky_relu_fwd": lambda m: m.leaky_relu_fwd(big, 0.01),
        "leaky_relu_bwd": lambda m: m.leaky_relu_bwd(big, gbig, 0.01),
        "scatter_add_rows": scatter,
        "adagrad_decay_update": adagrad,
        "geohash_encode_batch": lambda m: m.geohash_encode_batch(lat, lon, 6),
        "fnv1a64_batch": lambda m: m.fnv1a64_batch(keys),
        "positive_rank_sum": lambda m: m.positive_rank_sum(scores, labels),
    }


def best_ms(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not available; build with `pip install --no-build-isolation -e .`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, fn in cases(rng).items():
        a, b = fn(py), fn(cy)
        a, b = np.asarray(a), np.asarray(b)
        # exp and summation order may differ by an ulp
        same = np.allclose(a, b, rtol=1e-12, atol=0) if a.dtype.kind == "f" else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        t_py = best_ms(lambda: fn(py), args.repeat)
        t_cy = best_ms(lambda: fn(cy), args.repeat)
        print(f"{name:24s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
