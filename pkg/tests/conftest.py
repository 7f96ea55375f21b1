import numpy as np
import pytest

from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium


def poly_bump(grid, radius=1.0, power=8, center=(0.0, 0.0, 0.0)):
    if grid.dim == 1:
        d2 = grid.r**2
    else:
        x, y, z = grid.coords
        d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    d2 = d2 / radius**2
    return np.where(d2 < 1, (1 - d2) ** power, 0.0)


@pytest.fixture(scope="session")
def g16():
    return GridSpec.cube(16)


@pytest.fixture(scope="session")
def g24():
    return GridSpec.cube(24)


@pytest.fixture(scope="session")
def g32():
    return GridSpec.cube(32)


@pytest.fixture(scope="session")
def uniform32(g32):
    return build_medium(MediumRecipe(), g32)


@pytest.fixture(scope="session")
def two_balls32(g32):
    return build_medium(MediumRecipe("piecewise", {"balls": [((0.35, 0.0, 0.0), 0.3, 1.2),
                                                             ((-0.4, 0.1, 0.0), 0.25, 0.9)]}), g32)


@pytest.fixture(scope="session")
def separated48():
    # two small balls far enough apart that the cutoff ramp spans several cells
    g = GridSpec.cube(48, R_sim=2.0)
    return build_medium(MediumRecipe("piecewise", {"balls": [((0.5, 0.0, 0.0), 0.2, 1.2),
                                                             ((-0.5, 0.0, 0.0), 0.2, 0.9)]}), g)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
