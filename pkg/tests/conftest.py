import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from energybal.data import Sample

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_sample(n=30, p=3, seed=0, outcome=True, confounded=True):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    lin = X[:, 0] if confounded else np.zeros(n)
    A = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(int)
    # keep both groups populated
    A[0], A[1] = 0, 1
    Y = X.sum(axis=1) + 2 * A + rng.normal(size=n) if outcome else None
    return Sample(X, A, Y)


@pytest.fixture
def sample():
    return random_sample()


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
