import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh62():
    from slmsr.mesh import build_periodic_delaunay

    return build_periodic_delaunay(62, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
