import numpy as np
import pytest

from hfmartingale.model import CoxIngersollRoss, OrnsteinUhlenbeck, StateInterval, DiffusionModel


@pytest.fixture
def ou():
    return OrnsteinUhlenbeck()


@pytest.fixture
def cir():
    return CoxIngersollRoss(m0=1.0)


@pytest.fixture
def fd_ou():
    """OU defined through plain callables so every partial goes through finite differences."""
    return DiffusionModel(lambda x, a: -a * x, lambda x, b: b + 0.0 * x, StateInterval(), name="fd-ou")


@pytest.fixture
def theta():
    return (1.0, 1.0)


def ou_density(x, alpha=1.0, beta=1.0):
    s2 = beta**2 / (2 * alpha)
    return np.exp(-x * x / (2 * s2)) / np.sqrt(2 * np.pi * s2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
