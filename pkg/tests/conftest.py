import numpy as np
import pytest

from sphgrf.spectrum import AngularPowerSpectrum, ModelParams


@pytest.fixture(scope="session")
def spec3():
    return AngularPowerSpectrum(3.0)


@pytest.fixture(scope="session")
def params3(spec3):
    return ModelParams(spec3, d=1, gamma=0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
