import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flmpc.simulation import load_scenario
from flmpc.vehicle import CarParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return CarParams.paper_qcar()


@pytest.fixture(scope="session")
def oval(params):
    return load_scenario("oval", 0.6, params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
