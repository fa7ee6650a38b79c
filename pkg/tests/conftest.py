from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from squaremap import generators  # noqa: E402
from squaremap.energy import ParamMap  # noqa: E402
from squaremap.mesh import normalize_to_unit_area  # noqa: E402
from squaremap.slicer import segments_from_corners, slice_genus_one, slice_genus_zero  # noqa: E402


def grid_corners(nx: int, ny: int | None = None):
    ny = nx if ny is None else ny
    return (0, nx, (nx + 1) * (ny + 1) - 1, ny * (nx + 1))


@pytest.fixture
def grid_disk():
    """6x6 unit-square grid with its corners as the square's corners (genus-0 pairing)."""
    mesh = generators.flat_grid(6)
    segments = segments_from_corners(mesh, grid_corners(6), 0)
    return mesh, segments


@pytest.fixture
def grid_identity(grid_disk):
    mesh, segments = grid_disk
    return ParamMap(mesh.vertices[:, :2], segments)


@pytest.fixture(scope="session")
def sphere_disk():
    """icosphere:2 at unit area, cut into a disk."""
    return slice_genus_zero(normalize_to_unit_area(generators.icosphere(2)))


@pytest.fixture(scope="session")
def torus_disk():
    from squaremap.slicer import CutPath

    mesh, loops = generators.torus(10, 8)
    mesh = normalize_to_unit_area(mesh)
    return slice_genus_one(mesh, CutPath(loops.loop_a, closed=True), CutPath(loops.loop_b, closed=True))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
