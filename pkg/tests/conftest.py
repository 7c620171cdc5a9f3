import pytest

from mqs_rom.integrator import SineInput, TimeGrid, integrate, snapshots
from mqs_rom.mqs_system import MqsDae
from mqs_rom.problem import build_synthetic_3d, build_transformer_2d
from mqs_rom.regularization import regularize, to_ode

TRAINING = SineInput.single([45.5e3, 77e3], [900, 1700])
TEST_INPUT = SineInput.single([46.5e3, 78e3], [1010, 1900])


@pytest.fixture(scope="session")
def tf8():
    return build_transformer_2d(8, 8)


@pytest.fixture(scope="session")
def dae8(tf8):
    return MqsDae(tf8)


@pytest.fixture(scope="session")
def reg8(dae8):
    return regularize(dae8)


@pytest.fixture(scope="session")
def ode8(reg8):
    return to_ode(reg8)


@pytest.fixture(scope="session")
def grid_short():
    return TimeGrid.uniform(0.0, 0.01, 400)


@pytest.fixture(scope="session")
def ode_run(ode8, grid_short):
    """Training trajectory of the 8x8 ODE form on a coarse grid."""
    return integrate(ode8, TRAINING, grid_short)


@pytest.fixture(scope="session")
def snaps(ode_run, dae8):
    return snapshots(ode_run, "a1", dae8), snapshots(ode_run, "f1", dae8)


@pytest.fixture(scope="session")
def cube3():
    return build_synthetic_3d(3, 3, 3)


@pytest.fixture(scope="session")
def reg3(cube3):
    return regularize(MqsDae(cube3))


def random_flux_state(problem, rng, peak=1.2):
    a = rng.standard_normal(problem.n)
    return a * (peak / problem.element_flux(a)[1].max())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
