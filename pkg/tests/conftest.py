import numpy as np
import pytest

from saussol_lab.geometry import Box
from saussol_lab.grid import Grid, GridFunction

UNIT = Box((0.0, 0.0), (1.0, 1.0))


@pytest.fixture
def unit_box():
    return UNIT


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_piecewise(grid: Grid, rng, levels: int = 5) -> GridFunction:
    """Piecewise-constant field on coarse blocks (blocks of 4 cells per axis)."""
    coarse = rng.integers(-levels, levels + 1, size=tuple(max(1, s // 4) for s in grid.shape)).astype(float)
    vals = np.kron(coarse, np.ones((4,) * grid.dim))[tuple(slice(0, s) for s in grid.shape)]
    return GridFunction(grid, vals)
