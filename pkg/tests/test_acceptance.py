"""Acceptance criteria, one verdict line per criterion.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v``; the verdict
lines appear in the "acceptance criteria" summary section. The training
experiment (criteria 5, 6, 10) is shared through one session fixture and takes
roughly 15-20 minutes on one core.
"""
import io
import math
import time

import numpy as np
import pytest

from stenlab.checkpoint import from_bytes, to_bytes
from stenlab.cli import main
from stenlab.dataset import pad_and_truncate
from stenlab.features import GeoPoint, geohash6_encode, geohash6_encode_many
from stenlab.gradcheck import grad_check
from stenlab.metrics import auc
from stenlab.model import StEN, build_model
from stenlab.synth import synth_generate
from stenlab.tensor import no_grad
from stenlab.training import TrainConfig, bce_loss, train_loop, warmup_lr

from conftest import ACCEPTANCE_LINES, randomize, tiny_config
from test_features import oracle_geohash
from test_metrics import brute_auc


def verdict(n, ok, title, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] C{n}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def synth():
    t0 = time.perf_counter()
    data = synth_generate(seed=7, n_train=50000, n_test=10000)
    train = pad_and_truncate(data.train, 20)
    test = pad_and_truncate(data.test, 20)
    return data, train, test, time.perf_counter() - t0


@pytest.fixture(scope="module")
def experiment(synth):
    """5k default-config steps for StEN, BaseModel and the three single-module ablations."""
    _, train, test, prep_seconds = synth
    results = {}
    for name, kw in [("sten", {}), ("base", {"baseline": True}), ("stpro", {"ablation": ["stpro"]}),
                     ("stpre", {"ablation": ["stpre"]}), ("stta", {"ablation": ["stta"]})]:
        model = build_model(**kw)
        t0 = time.perf_counter()
        train_loop(model, train, TrainConfig(total_steps=5000))
        scores = model.predict(test)
        results[name] = {"model": model, "auc": auc(scores, test.labels), "seconds": time.perf_counter() - t0}
    results["prep_seconds"] = prep_seconds
    return results


def random_model_batches(synth, rng, n_batches, size):
    _, train, _, _ = synth
    for _ in range(n_batches):
        yield train.take(rng.choice(len(train), size, replace=False))


def test_c01_gradient_correctness(synth):
    t0 = time.perf_counter()
    model = randomize(StEN(tiny_config()), np.random.default_rng(0), scale=0.2)
    raw = synth[0].train[:4]
    batch = pad_and_truncate(raw, model.config.seq_len, model.config.table_size)
    rep = grad_check(lambda: model.loss(batch, train=True)[0], model.params, tol=1e-4)
    secs = time.perf_counter() - t0
    worst_name, worst = rep.worst()
    ok = rep.passed and len(rep.per_param) == len(model.params) and secs < 120
    verdict(1, ok, "gradient check on full StEN loss (4 samples, float64)",
            f"max rel err {rep.max_rel_err:.2e} (<= 1e-4) over {len(rep.per_param)} tensors / {rep.n_checked} elements, "
            f"worst {worst_name}; {secs:.1f}s (< 120s)")


def test_c02_attention_normalization(synth):
    rng = np.random.default_rng(2)
    model = randomize(build_model(), rng, scale=0.1)
    worst_sum, masked_nonzero = 0.0, 0
    for batch in random_model_batches(synth, rng, 100, 32):
        with no_grad():
            out = model.forward(batch, train=False)
        has = batch.mask.any(1)
        for w in (out.w_te.data, out.attn.data):
            worst_sum = max(worst_sum, float(np.max(np.abs(w[has].sum(1) - 1.0))) if has.any() else 0.0)
            masked_nonzero += int(np.count_nonzero(w[~batch.mask]))
    verdict(2, worst_sum <= 1e-6 and masked_nonzero == 0, "w_te and StTA weights normalized, zero when masked",
            f"max |sum-1| {worst_sum:.1e} (<= 1e-6), nonzero masked weights {masked_nonzero} (== 0), 100 batches")


def test_c03_padding_invariance(synth):
    rng = np.random.default_rng(3)
    model = randomize(build_model(), rng, scale=0.1)
    _, train, _, _ = synth
    batch = train.take(rng.choice(len(train), 100, replace=False))
    a = model.predict(batch)
    b = model.predict(batch.extend_padding(7))
    diff = float(np.max(np.abs(a - b)))
    verdict(3, diff <= 1e-6, "padding invariance of predictions", f"max |dp| {diff:.1e} (<= 1e-6) on 100 samples, +7 pads")


def test_c04_auc_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    for k in range(1000):
        n = int(rng.integers(2, 1001))
        s = rng.integers(0, 20, n).astype(float) if k % 3 == 0 else rng.random(n)
        y = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(int)
        y[0], y[1] = 0, 1
        worst = max(worst, abs(auc(s, y) - brute_auc(s, y)))
    verdict(4, worst <= 1e-12, "fast AUC equals O(n^2) pair counting", f"max |diff| {worst:.1e} (<= 1e-12) on 1000 sets, n <= 1000")


@pytest.mark.slow
def test_c05_synthetic_learnability(experiment):
    sten, base = experiment["sten"], experiment["base"]
    gap = sten["auc"] - base["auc"]
    total = experiment["prep_seconds"] + sten["seconds"] + base["seconds"]
    ok = gap >= 0.01 and total < 15 * 60
    verdict(5, ok, "StEN beats BaseModel on synth(seed=7, 50k/10k), 5k steps each",
            f"StEN {sten['auc']:.4f} vs Base {base['auc']:.4f}, gap {gap:+.4f} (>= 0.01); "
            f"runtime {total:.0f}s (< 900s)")


@pytest.mark.slow
def test_c06_ablation_direction(experiment):
    base = experiment["base"]["auc"]
    parts = {k: experiment[k]["auc"] for k in ("stpro", "stpre", "stta")}
    ok = all(v >= base - 0.002 for v in parts.values())
    detail = ", ".join(f"{k} {v:.4f}" for k, v in parts.items())
    verdict(6, ok, "each single-module ablation is non-inferior to BaseModel", f"{detail} vs Base {base:.4f} (each >= Base - 0.002)")


@pytest.mark.slow
def test_c07_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--seed", "7", "--out", str(data)]) == 0
    logs = []
    for k in range(2):
        run = tmp_path / f"run{k}"
        assert main(["train", "--data", str(data), "--out", str(run), "--steps", "100", "--warmup-steps", "100",
                     "--set", "eval_every=0"]) == 0
        logs.append((run / "metrics.tsv").read_bytes())
    lines = logs[0].decode().splitlines()
    ok = logs[0] == logs[1] and len(lines) == 100
    verdict(7, ok, "same-seed CLI train runs give bitwise-identical metrics logs",
            f"{len(lines)} lines, identical={logs[0] == logs[1]}")


def test_c08_warmup_schedule():
    cfg = TrainConfig()
    lr0, lr_peak, lr_after = warmup_lr(0, cfg), warmup_lr(cfg.warmup_steps, cfg), warmup_lr(cfg.total_steps - 1, cfg)
    mid = warmup_lr(cfg.warmup_steps // 2, cfg)
    ok = lr0 == 0.001 and lr_peak == 0.015 and lr_after == 0.015 and abs(mid - 0.008) <= 1e-15
    verdict(8, ok, "warm-up schedule", f"lr(0)={lr0!r}, lr({cfg.warmup_steps})={lr_peak!r}, lr(mid)={mid!r}")


def test_c09_geohash_conformance():
    rng = np.random.default_rng(9)
    lat = rng.uniform(-90, 90, 1000)
    lon = rng.uniform(-180, 180, 1000)
    got = geohash6_encode_many(lat, lon)
    mismatches = sum(g != oracle_geohash(a, b) for g, a, b in zip(got, lat, lon))
    ref = geohash6_encode(GeoPoint(57.64911, 10.40744))
    verdict(9, mismatches == 0 and ref == "u4pruy", "geohash6 matches the independent oracle",
            f"{mismatches} mismatches / 1000, (57.64911, 10.40744) -> {ref!r}")


@pytest.mark.slow
def test_c10_checkpoint_round_trip(experiment, synth):
    model = experiment["sten"]["model"]
    blob = to_bytes(model)
    back = from_bytes(blob)
    bad = [n for n, p in model.params.items() if back.params[n].data.tobytes() != p.data.tobytes()]
    _, _, test, _ = synth
    batch = test.take(np.arange(512))
    a, b = model.predict(batch), back.predict(batch)
    ulp = int(np.max(np.abs(a.view(np.int64) - b.view(np.int64))))
    ok = not bad and ulp == 0 and to_bytes(back) == blob
    verdict(10, ok, "checkpoint save/load is bit-exact",
            f"{len(bad)} differing tensors of {len(model.params)}, max prediction diff {ulp} ulp, re-save identical={to_bytes(back) == blob}")


@pytest.mark.slow
def test_c11_loss_values(synth):
    data = synth[0]
    v = bce_loss(0.5, 1)
    samples = data.train[:100]
    batch = pad_and_truncate(samples, 20)
    model = build_model()
    losses = train_loop(model, batch, TrainConfig(total_steps=2000))
    with no_grad():
        eval_loss = model.loss(batch, train=False)[0].item()
    ok = abs(v - math.log(2)) <= 1e-12 and losses[-1] < 0.05
    verdict(11, ok, "loss value checks",
            f"bce(0.5,1)-ln2 = {v - math.log(2):.1e}; 100-sample memorization final train loss {losses[-1]:.4f} "
            f"(< 0.05, first below at step {int(np.argmax(losses < 0.05))}), eval-mode loss {eval_loss:.4f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
