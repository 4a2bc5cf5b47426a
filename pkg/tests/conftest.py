import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from whittaker_ew.drift import build_whittaker_stencil
from whittaker_ew.torus import TorusParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def whittaker():
    st, wp = build_whittaker_stencil(2, 1)
    return st, wp.v


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_torus():
    return TorusParams(4, 1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
