import time

import pytest

from costly_detection import ModelParams, gauss_hermite_rule, value_iteration
from costly_detection.simulator import PathBank

BASELINE = ModelParams(alpha=1.0, lam=0.1, c=0.01, d=0.001)
SEED = 20240101
N_PATHS = 100_000

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def baseline():
    return BASELINE


@pytest.fixture(scope="session")
def rule():
    return gauss_hermite_rule(64)


@pytest.fixture(scope="session")
def baseline_timed():
    start = time.perf_counter()
    result = value_iteration(BASELINE, grid_size=201, tol=1e-5, max_iter=500, min_iter=10)
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def baseline_solution(baseline_timed):
    return baseline_timed[0]


@pytest.fixture(scope="session")
def big_bank():
    """Shared draws for 10^5 paths; policies evaluated on it use common random numbers."""
    return PathBank(SEED, N_PATHS)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
