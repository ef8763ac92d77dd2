import numpy as np
import pytest
from hypothesis import settings

from zeronoise.models import zoo_build

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ou():
    return zoo_build("ou")


@pytest.fixture(scope="session")
def lemniscate():
    return zoo_build("lemniscate")


@pytest.fixture(scope="session")
def limit_cycle():
    return zoo_build("limit_cycle")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
