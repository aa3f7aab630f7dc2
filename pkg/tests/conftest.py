import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lgmtraj.poly import DynamicsLimits, WaypointConstraint

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_line():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number, passed, detail):
        verdict = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {verdict}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[k])


@pytest.fixture
def course():
    pts = [(0, 0, 1), (4, 2, 1.5), (8, 0, 2), (12, -2, 1.5), (16, 0, 1)]
    return [WaypointConstraint(p) for p in pts]


@pytest.fixture
def limits():
    return DynamicsLimits(5.0, 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
