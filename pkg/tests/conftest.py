import pytest

from qbmc.model import GridSpec, PhysicalParams, PotentialSpec


@pytest.fixture
def production_params():
    return PhysicalParams(hbar=0.01, mass=1.0, gamma=0.25, kT=0.3, Lambda=5.0)


@pytest.fixture
def desk_params():
    # larger-hbar regime used for oracle cross-checks
    return PhysicalParams(hbar=0.1, mass=1.0, gamma=0.25, kT=0.3, Lambda=5.0)


@pytest.fixture
def harmonic():
    return PotentialSpec(variant="harmonic", omega=1.0)


@pytest.fixture
def duffing():
    return PotentialSpec(variant="duffing", g=0.3, drive_freq=1.0)


@pytest.fixture
def small_grid():
    return GridSpec(-4.0, 4.0, 256)


def pytest_addoption(parser):
    parser.addoption(
        "--run-long",
        action="store_true",
        default=False,
        help="run the long (hours) acceptance checks",
    )
