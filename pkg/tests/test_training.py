import io
import math

import numpy as np
import pytest

from stenlab.errors import ConfigError, NonFiniteGradientError
from stenlab.model import StEN
from stenlab.params import ParameterStore
from stenlab.tensor import Tensor, bce_with_logits
from stenlab.training import BatchStream, TrainConfig, adagrad_decay_step, bce_loss, format_log_line, train_loop, warmup_lr

from conftest import tiny_config


def test_bce_examples():
    assert abs(bce_loss(0.5, 1) - math.log(2)) <= 1e-12
    assert abs(bce_loss([0.9, 0.1], [1, 0]) - 0.105361) < 1e-6
    assert bce_loss([1.0, 0.0], [1, 0]) == 0.0
    assert bce_loss([0.0], [1]) == math.inf


def test_bce_matches_logit_form(rng):
    z = rng.normal(size=50) * 4
    y = (rng.random(50) < 0.3).astype(float)
    p = 1 / (1 + np.exp(-z))
    assert abs(bce_loss(p, y) - bce_with_logits(Tensor(z), y).item()) < 1e-12


def test_warmup_schedule():
    c = TrainConfig()
    assert warmup_lr(0, c) == 0.001
    assert warmup_lr(c.warmup_steps, c) == 0.015
    assert warmup_lr(10 * c.warmup_steps, c) == 0.015
    assert abs(warmup_lr(c.warmup_steps // 2, c) - 0.008) < 1e-15
    lrs = [warmup_lr(s, c) for s in range(c.warmup_steps + 5)]
    assert np.all(np.diff(lrs) >= 0)
    # continuity at the knee
    assert abs(warmup_lr(c.warmup_steps - 1, c) - 0.015) < 0.015 / c.warmup_steps
    with pytest.raises(ValueError):
        warmup_lr(-1, c)


def test_train_config_validation():
    for bad in (dict(base_lr=0.0), dict(base_lr=0.1, peak_lr=0.01), dict(warmup_steps=10, total_steps=5), dict(batch_size=1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_adagrad_hand_example():
    s = ParameterStore()
    p = s.add("theta", np.array([1.0]))
    p.grad[...] = 1.0
    adagrad_decay_step(s, 0.1, rho=1.0, eps=0.0)
    assert p.data[0] == 0.9 and p.accumulator[0] == 1.0


def test_adagrad_zero_grad_only_decays():
    s = ParameterStore()
    p = s.add("theta", np.array([2.0, -1.0]))
    p.accumulator[...] = 4.0
    adagrad_decay_step(s, 0.5, rho=0.9999, eps=1e-6)
    np.testing.assert_array_equal(p.data, [2.0, -1.0])
    np.testing.assert_array_equal(p.accumulator, 4.0 * 0.9999)


def test_adagrad_non_finite_aborts_and_names_param():
    s = ParameterStore()
    a = s.add("fine", np.array([1.0]))
    b = s.add("broken", np.array([1.0]))
    a.grad[...] = 1.0
    b.grad[...] = np.nan
    with pytest.raises(NonFiniteGradientError, match="broken"):
        adagrad_decay_step(s, 0.1)
    assert a.data[0] == 1.0  # nothing moved


def test_adagrad_registration_order_invariant(rng):
    vals = {n: rng.normal(size=3) for n in "abc"}
    grads = {n: rng.normal(size=3) for n in "abc"}
    out = []
    for order in ("abc", "cab"):
        s = ParameterStore()
        for n in order:
            s.add(n, vals[n]).grad[...] = grads[n]
        adagrad_decay_step(s, 0.05)
        out.append({n: s[n].data.copy() for n in "abc"})
    for n in "abc":
        np.testing.assert_array_equal(out[0][n], out[1][n])


def test_batch_stream_epochs_cover_data():
    st = BatchStream(10, 3, seed=0)
    seen = np.concatenate([st.next_index() for _ in range(3)])
    assert len(set(seen.tolist())) == 9
    small = BatchStream(4, 256, seed=0)
    assert sorted(small.next_index().tolist()) == [0, 1, 2, 3]
    with pytest.raises(ConfigError):
        BatchStream(0, 4, 0)


def test_log_line_format():
    assert format_log_line(3, 0.001, 0.5) == "3\t0.001\t0.5\n"
    assert format_log_line(np.int64(3), np.float64(0.001), np.float64(0.25), 0.75) == "3\t0.001\t0.25\t0.75\n"


def test_zero_steps_keeps_initialization(small_batch):
    m = StEN(tiny_config())
    before = m.params.values_snapshot()
    losses = train_loop(m, small_batch, TrainConfig(total_steps=0, warmup_steps=0))
    assert losses.size == 0
    for n, v in m.params.values_snapshot().items():
        np.testing.assert_array_equal(v, before[n])


def test_empty_dataset_rejected(small_batch):
    with pytest.raises(ConfigError):
        train_loop(StEN(tiny_config()), small_batch.take(np.arange(0)), TrainConfig(total_steps=1, warmup_steps=0))


def test_same_seed_runs_identical(small_batch):
    logs = []
    params = []
    for _ in range(2):
        m = StEN(tiny_config())
        buf = io.StringIO()
        cfg = TrainConfig(batch_size=32, total_steps=30, warmup_steps=10, eval_every=10, seed=3)
        train_loop(m, small_batch, cfg, val=small_batch.take(np.arange(100)), log=buf)
        logs.append(buf.getvalue())
        params.append(m.params.values_snapshot())
    assert logs[0] == logs[1]
    assert len(logs[0].splitlines()) == 30
    assert len(logs[0].splitlines()[9].split("\t")) == 4
    for n in params[0]:
        np.testing.assert_array_equal(params[0][n], params[1][n])


def test_different_seed_changes_order(small_batch):
    out = []
    for seed in (1, 2):
        buf = io.StringIO()
        train_loop(StEN(tiny_config()), small_batch, TrainConfig(batch_size=32, total_steps=3, warmup_steps=0, seed=seed), log=buf)
        out.append(buf.getvalue())
    assert out[0] != out[1]


def test_training_reduces_loss(small_batch):
    m = StEN(tiny_config())
    losses = train_loop(m, small_batch, TrainConfig(batch_size=64, total_steps=150, warmup_steps=20))
    assert losses[-20:].mean() < losses[:20].mean()
