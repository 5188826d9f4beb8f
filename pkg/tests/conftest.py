import numpy as np
import pytest

from uscal.benchmark import SimConfig, make_rng, truth_state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def small_truth():
    """Canonical random state with P=4, N=2, M=3, L=5, T=3 and gain spread 0.5."""
    cfg = SimConfig(P=4, N=2, M=3, L=5, T=3, deltas=(0.5,), n_trials=1)
    return truth_state(cfg, make_rng(7, 0), 0.5)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
