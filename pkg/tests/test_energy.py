from __future__ import annotations

import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap import generators
from squaremap.config import SolverConfig
from squaremap.energy import (
    AreaMeasure,
    ConstraintLayout,
    ParamMap,
    authalic_energy,
    full_gradient,
    gradient,
    ratio_statistics,
    signed_image_areas,
    stretch_energy,
    stretch_energy_quadratic,
    stretch_laplacian,
    weighted_cot_laplacian,
)
from squaremap.errors import ConstraintViolationError
from squaremap.mesh import normalize_to_unit_area
from squaremap.slicer import slice_genus_zero
from squaremap.solver import fixed_point_init

DISK = slice_genus_zero(normalize_to_unit_area(generators.icosphere(1)))


def random_map(seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(DISK.mesh.n_vertices, 2))


@lru_cache(maxsize=None)
def acceptance_disk():
    # 1280 faces
    return slice_genus_zero(normalize_to_unit_area(generators.icosphere(3)))


def random_acceptance_stats(seed: int):
    disk = acceptance_disk()
    uv = np.random.default_rng(seed).uniform(0.0, 1.0, size=(disk.mesh.n_vertices, 2))
    return ratio_statistics(disk.mesh, uv)


def test_identity_grid_has_zero_authalic_energy(grid_identity, grid_disk):
    mesh, _ = grid_disk
    assert np.all(signed_image_areas(mesh, grid_identity) > 0)
    assert stretch_energy(mesh, grid_identity) == pytest.approx(1.0, abs=1e-12)
    assert abs(authalic_energy(mesh, grid_identity)) < 1e-12
    stats = ratio_statistics(mesh, grid_identity)
    assert stats.R_SD < 1e-12
    assert stats.R_mean == pytest.approx(1.0)


def test_area_measure_constructors(grid_disk):
    mesh, _ = grid_disk
    const = AreaMeasure.constant(mesh)
    assert const.kind == "const"
    assert const.values.sum() == pytest.approx(1.0)
    assert AreaMeasure.named("area", mesh).kind == "area"
    with pytest.raises(ValueError):
        AreaMeasure(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        AreaMeasure.named("volume", mesh)


def test_cot_laplacian_is_symmetric_with_zero_row_sums():
    mesh = DISK.mesh
    L, flagged = weighted_cot_laplacian(mesh.faces, mesh.vertices, mesh.face_areas)
    assert flagged.size == 0
    assert abs(L - L.T).max() < 1e-12
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-12)


def test_laplacian_reproduces_stretch_energy():
    uv = fixed_point_init(DISK.mesh, DISK.segments, SolverConfig(fpm_iters=0)).harmonic.uv
    assert stretch_energy_quadratic(DISK.mesh, uv) == pytest.approx(stretch_energy(DISK.mesh, uv), rel=1e-10)
    rho = AreaMeasure.constant(DISK.mesh)
    assert stretch_energy_quadratic(DISK.mesh, uv, rho) == pytest.approx(
        stretch_energy(DISK.mesh, uv, rho), rel=1e-10
    )


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_weighted_variance_identity(seed):
    stats = random_acceptance_stats(seed)
    expected = stats.image_area / stats.mesh_area**2 * stats.E_A
    assert abs(stats.weighted_variance - expected) <= 1e-10 * max(1.0, stats.E_A)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_authalic_energy_is_nonnegative_and_bounds_the_variance(seed):
    stats = random_acceptance_stats(seed)
    assert stats.E_A >= -1e-12 * max(1.0, stats.E_A)
    assert stats.unweighted_variance <= stats.variance_bound * (1 + 1e-10) + 1e-15


@settings(max_examples=20, deadline=None)
@given(
    st.integers(min_value=0, max_value=2**32 - 1),
    st.floats(min_value=0.1, max_value=10.0),
)
def test_stretch_energy_scales_with_the_measure(seed, factor):
    uv = random_map(seed)
    rho = AreaMeasure(DISK.mesh.face_areas * factor)
    assert stretch_energy(DISK.mesh, uv, rho) == pytest.approx(stretch_energy(DISK.mesh, uv) / factor, rel=1e-12)


def test_constraint_layout_round_trip():
    f = fixed_point_init(DISK.mesh, DISK.segments, SolverConfig(fpm_iters=0)).harmonic
    layout = ConstraintLayout(DISK.segments, DISK.mesh.n_vertices)
    x = layout.pack(f)
    assert x.size == layout.size
    np.testing.assert_array_equal(layout.unpack(x), f.uv)
    assert layout.violation(f) == 0.0
    clipped = layout.project(np.full(layout.size, 2.0))
    assert np.all(clipped[layout.s_e] == 1.0)
    assert np.all(clipped[layout.s_i1] == 2.0)


def test_constraint_check_catches_broken_pairing():
    f = fixed_point_init(DISK.mesh, DISK.segments, SolverConfig(fpm_iters=0)).harmonic
    uv = f.uv.copy()
    uv[DISK.segments.G[1], 0] += 0.01
    with pytest.raises(ConstraintViolationError):
        gradient(DISK.mesh, f.with_uv(uv))
    with pytest.raises(ConstraintViolationError, match="no boundary segments"):
        gradient(DISK.mesh, ParamMap(uv))


@pytest.mark.parametrize("which", ["sphere", "torus"])
def test_reduced_gradient_matches_finite_differences(which, sphere_disk, torus_disk):
    sliced = sphere_disk if which == "sphere" else torus_disk
    mesh, seg = sliced.mesh, sliced.segments
    layout = ConstraintLayout(seg, mesh.n_vertices)
    f0 = fixed_point_init(mesh, seg, SolverConfig(fpm_iters=0)).harmonic
    x0 = layout.pack(f0)
    # move E/F values off their even spacing so the boundary terms matter
    rng = np.random.default_rng(5)
    x0[layout.s_e] += rng.uniform(-0.2, 0.2, x0[layout.s_e].size) / max(1, x0[layout.s_e].size)
    x0[layout.s_f] += rng.uniform(-0.2, 0.2, x0[layout.s_f].size) / max(1, x0[layout.s_f].size)

    analytic = layout.reduce(full_gradient(mesh, layout.unpack(x0, project=False)))
    picks = rng.choice(x0.size, size=min(40, x0.size), replace=False)
    picks = np.union1d(picks, np.arange(x0.size)[layout.s_e][:3])
    picks = np.union1d(picks, np.arange(x0.size)[layout.s_f][:3])
    h = 1e-6
    for k in picks:
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        fd = (
            stretch_energy(mesh, layout.unpack(xp, project=False))
            - stretch_energy(mesh, layout.unpack(xm, project=False))
        ) / (2 * h)
        assert fd == pytest.approx(analytic[k], rel=1e-5, abs=1e-7 * np.abs(analytic).max())


def test_stretch_laplacian_flags_collapsed_faces(grid_disk):
    mesh, _ = grid_disk
    uv = np.zeros((mesh.n_vertices, 2))
    _, flagged = stretch_laplacian(mesh, uv, return_flags=True)
    assert flagged.size == mesh.n_faces
    with pytest.raises(ConstraintViolationError, match="zero image area"):
        authalic_energy(mesh, uv)
