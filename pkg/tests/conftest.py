import numpy as np
import pytest

from lbregularity.geometry import Ball
from lbregularity.kernel import make_kernel
from lbregularity.transport import BoundaryDatum, PhaseGrid, picard_solve


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical checks")


@pytest.fixture(scope="session")
def kernel():
    return make_kernel()


@pytest.fixture(scope="session")
def ball():
    return Ball()


@pytest.fixture(scope="session")
def solved(ball, kernel):
    """Default scenario: unit ball, gamma = 1/2, Hoelder data with sigma = 0.4."""
    grid = PhaseGrid(ball)
    bdry = BoundaryDatum()
    field, report = picard_solve(bdry, kernel, ball, grid, tol=1e-8)
    return field, report


@pytest.fixture(scope="session")
def coarse_setup(ball, kernel):
    """A small grid for fast structural tests."""
    from lbregularity.kernel import CenteredQuadrature, VelocityQuadrature
    grid = PhaseGrid(ball, (7, 6, 6), velocity=VelocityQuadrature(12.0, 8, 4, 6),
                     centered=CenteredQuadrature(12, 12, 12))
    return grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
