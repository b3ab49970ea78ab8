import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gwformation.steering import LinearSystem

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

A_REF = [[0.5, 0.2], [0.1, 0.4]]


@pytest.fixture
def lin_system():
    return LinearSystem(A_REF, np.eye(2))


def rigid_copy(X, rng):
    """Random rotation (with reflection half the time) plus translation."""
    th = rng.uniform(0, 2 * np.pi)
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    if rng.random() < 0.5:
        Q = Q @ np.diag([1.0, -1.0])
    return X @ Q.T + rng.normal(size=2)


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
