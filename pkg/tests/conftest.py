import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hetmap.surrogate import bundled
from hetmap.tiers import default_tiers
from hetmap.workload import TierSupportMatrix, load_workload

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiers():
    return default_tiers()


@pytest.fixture(scope="session")
def support():
    return TierSupportMatrix.default()


@pytest.fixture(scope="session")
def surrogate():
    """(model, x, y) of the committed checkpoint and test split."""
    return bundled()


@pytest.fixture(scope="session")
def toy_mlp():
    return load_workload("toy_mlp")


@pytest.fixture(scope="session")
def toy_pareto():
    return load_workload("toy_pareto")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
