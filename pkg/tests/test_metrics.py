from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap import generators
from squaremap.mesh import TriMesh
from squaremap.metrics import (
    angle_histogram,
    as_trimesh,
    dense_samples,
    distances_to_surface,
    mean_surface_distance,
    point_triangle_distance,
)


def test_point_triangle_distance_regions():
    a = np.array([[0.0, 0.0, 0.0]] * 3)
    b = np.array([[1.0, 0.0, 0.0]] * 3)
    c = np.array([[0.0, 1.0, 0.0]] * 3)
    p = np.array([[0.2, 0.2, 0.5], [2.0, 0.0, 0.0], [-1.0, -1.0, 0.0]])
    np.testing.assert_allclose(point_triangle_distance(p, a, b, c), [0.5, 1.0, np.sqrt(2.0)])


def test_distance_of_a_mesh_to_itself_is_zero():
    mesh = generators.icosphere(1)
    assert mean_surface_distance(mesh, mesh) == pytest.approx(0.0, abs=1e-12)


def test_distance_between_parallel_planes():
    grid = generators.flat_grid(4)
    lifted = TriMesh(grid.vertices + [0.0, 0.0, 0.1], grid.faces)
    assert mean_surface_distance(grid, lifted) == pytest.approx(0.1, abs=1e-12)


def test_dense_samples_are_unique():
    grid = generators.flat_grid(2)
    pts = dense_samples(grid, density=2)
    assert len(np.unique(pts, axis=0)) == len(pts)
    assert len(pts) == 25


def test_angle_histogram_of_right_triangles():
    grid = generators.flat_grid(3)
    hist = angle_histogram(grid, bins=3)
    assert list(hist.columns) == ["lo", "hi", "count"]
    assert hist["count"].sum() == 3 * grid.n_faces
    assert hist["count"].tolist() == [2 * grid.n_faces, grid.n_faces, 0]


def test_zero_area_faces_are_left_out_of_distance_queries():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
    mesh = TriMesh(v, [[0, 1, 2], [0, 2, 3], [1, 0, 4]], allow_degenerate=True)
    assert len(as_trimesh(mesh).faces) == 2
    d = distances_to_surface(np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 2.0], [2.0, 1.0, 0.0]]), mesh)
    np.testing.assert_allclose(d, [0.0, 2.0, 1.0], atol=1e-12)
