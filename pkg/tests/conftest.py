import pytest

from priocoord import scenario
from priocoord.dynamics import Kinodynamics
from priocoord.geometry import Footprint, PathSpec
from priocoord.priority import WorldModel

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def kin():
    # D = 1, full speed covers half a diameter per slot, 20 slots from rest to full speed
    return Kinodynamics(v_max=0.5, u_min=-0.025, u_max=0.025)


def perpendicular_paths(length: float = 30.0, x_entry: float = 2.0, x_exit: float = 20.0):
    """Two perpendicular paths whose crossing sits at coordinate 10 on both."""
    a = PathSpec("A", (-10.0, 0.0), (1.0, 0.0), length, x_entry, x_exit)
    b = PathSpec("B", (0.0, -10.0), (0.0, 1.0), length, x_entry, x_exit)
    return a, b


@pytest.fixture
def perp_world(kin):
    return WorldModel(perpendicular_paths(), Footprint(1.0))


@pytest.fixture(scope="session")
def cross8():
    return scenario.load_preset("cross8")


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
