import numpy as np
import pytest

from fdjcas.array import ArrayConfig, WaveformConfig


@pytest.fixture(scope="session")
def wf():
    return WaveformConfig()


@pytest.fixture(scope="session")
def arr32(wf):
    return ArrayConfig.half_wavelength(wf, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
