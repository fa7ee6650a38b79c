from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap.bijectivity import correct_overlaps, count_folded, mean_value_laplacian
from squaremap.energy import ParamMap
from squaremap.errors import BijectivityError
from squaremap.mesh import TriMesh


def folded_grid_map(grid_identity):
    # drag the centre vertex of the 6x6 grid far into the upper-left region
    uv = grid_identity.uv.copy()
    uv[3 * 7 + 3] = [0.2, 0.8]
    return grid_identity.with_uv(uv)


def brute_force_folds(mesh, uv):
    out = []
    for t, (a, b, c) in enumerate(mesh.faces.tolist()):
        e1 = uv[b] - uv[a]
        e2 = uv[c] - uv[a]
        if 0.5 * (e1[0] * e2[1] - e1[1] * e2[0]) <= 1e-15:
            out.append(t)
    return out


def hexagon_fan():
    angles = np.arange(6) * np.pi / 3
    v = np.vstack([[0.0, 0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles), np.zeros(6)])])
    faces = [[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)]
    return TriMesh(v, faces)


def test_identity_has_no_folds(grid_disk, grid_identity):
    mesh, _ = grid_disk
    report = count_folded(mesh, grid_identity)
    assert report.count == 0
    assert report.as_list() == []


def test_count_folded_matches_brute_force(grid_disk, grid_identity):
    mesh, _ = grid_disk
    f = folded_grid_map(grid_identity)
    report = count_folded(mesh, f)
    assert report.count > 0
    assert report.as_list() == brute_force_folds(mesh, f.uv)


def test_mean_value_laplacian_structure(grid_disk, grid_identity):
    mesh, _ = grid_disk
    L = mean_value_laplacian(mesh, folded_grid_map(grid_identity))
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    off = L - sparse.diags(L.diagonal())
    assert off.max() <= 0.0
    assert np.all(L.diagonal() > 0)
    # structurally symmetric
    assert ((L != 0) != (L.T != 0)).nnz == 0


def test_mean_value_weights_of_a_regular_fan_are_equal():
    mesh = hexagon_fan()
    L = mean_value_laplacian(mesh, mesh.vertices[:, :2])
    row = L.getrow(0).toarray().ravel()
    expected = -np.tan(np.pi / 6) * 2
    np.testing.assert_allclose(row[1:], expected, rtol=1e-12)


def test_coincident_image_vertices_are_rejected(grid_disk, grid_identity):
    mesh, _ = grid_disk
    uv = grid_identity.uv.copy()
    uv[8] = uv[9]
    with pytest.raises(BijectivityError, match="same point"):
        mean_value_laplacian(mesh, uv)


def test_correct_overlaps_unfolds_and_keeps_boundary(grid_disk, grid_identity):
    mesh, seg = grid_disk
    f = folded_grid_map(grid_identity)
    fixed = correct_overlaps(mesh, f)

    assert count_folded(mesh, fixed).count == 0
    b = seg.boundary
    assert np.array_equal(fixed.uv[b], f.uv[b])
    assert fixed.segments is seg

    # interior points are convex combinations under the pre-repair weights
    L = mean_value_laplacian(mesh, f)
    interior = np.setdiff1d(np.arange(mesh.n_vertices), b)
    residual = (L @ fixed.uv)[interior] / L.diagonal()[interior, None]
    assert np.abs(residual).max() < 1e-12

    again = correct_overlaps(mesh, fixed)
    assert count_folded(mesh, again).count == 0


def test_repair_leaves_an_unfolded_star_centre_in_place():
    # mean-value weights reproduce the point they were measured at
    mesh = hexagon_fan()
    uv = mesh.vertices[:, :2].copy()
    uv[0] = [0.3, -0.2]
    fixed = correct_overlaps(mesh, ParamMap(uv), boundary=np.arange(1, 7))
    np.testing.assert_allclose(fixed.uv[0], [0.3, -0.2], atol=1e-12)
