import numpy as np
import pytest

from peercollab.data import build_dataset, synthetic_interactions


@pytest.fixture(scope="session")
def small_ds():
    rows = synthetic_interactions(n_users=60, n_items=40, n_groups=4, min_len=8, max_len=14, seed=3)
    return build_dataset(rows)


@pytest.fixture(scope="session")
def synth_ds():
    return build_dataset(synthetic_interactions(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_ds():
    rows = synthetic_interactions(n_users=20, n_items=30, n_groups=2, min_len=12, max_len=20, seed=5)
    return build_dataset(rows)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
