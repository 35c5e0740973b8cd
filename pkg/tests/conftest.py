import numpy as np
import pytest

from stenlab.dataset import pad_and_truncate
from stenlab.model import ModelConfig, StEN
from stenlab.synth import synth_generate


def tiny_config(**kw):
    base = dict(embed_dim=4, table_size=31, seq_len=6, ffn_hidden=5, attn_dim=3, tower=(7, 5, 3))
    base.update(kw)
    return ModelConfig(**base)


def randomize(model, rng, scale=0.3):
    """Push every parameter off its structured init (zero FC2s, unit gates)."""
    for p in model.params:
        p.data[...] = p.data + rng.normal(0.0, scale, size=p.shape)
    return model


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(seed=11, n_users=60, n_items=120, n_train=400, n_test=200)


@pytest.fixture(scope="session")
def small_batch(small_synth):
    return pad_and_truncate(small_synth.train, 6, table_size=31)


@pytest.fixture
def tiny_model():
    return StEN(tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdict lines, echoed in the terminal summary so they are visible without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].strip("C:"))):
            terminalreporter.write_line(line)
