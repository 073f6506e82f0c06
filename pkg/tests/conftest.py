import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("phcm", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("phcm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, shape=(), spread=0.3):
    """Random SPD matrices ``I + spread * sym(A)`` made safely definite."""
    A = rng.normal(size=shape + (n, n))
    S = A @ np.swapaxes(A, -1, -2)
    return np.eye(n) + spread * S / n


def convergence_order(errors):
    """Observed orders between successive halvings."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
