import numpy as np
import pytest

from wassreg import sinkhorn as sk

# every converged Sinkhorn scaling solve of the session: (mode, violation, tol)
SOLVES = []

_solve = sk._solve


def _recording_solve(a, b, kernel, s):
    out = _solve(a, b, kernel, s)
    SOLVES.append((out[0], float(out[3]), s.tol))
    return out


sk._solve = _recording_solve


def pytest_collection_modifyitems(config, items):
    # acceptance checks read session-wide records, so they run last
    items.sort(key=lambda item: item.nodeid.startswith("tests/test_acceptance.py"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
