from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap import generators
from squaremap.errors import MeshFormatError, TopologyError
from squaremap.mesh import (
    TriMesh,
    boundary_loops,
    check_degenerate,
    face_area,
    genus_of_closed,
    load_mesh,
    load_param_obj,
    normalize_to_unit_area,
    orient_faces,
    read_obj,
    save_obj,
    total_area,
)

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)


def test_rejects_out_of_range_index():
    with pytest.raises(MeshFormatError, match="out of range"):
        TriMesh(SQUARE, [[0, 1, 4]])


def test_rejects_repeated_vertex():
    with pytest.raises(MeshFormatError, match="repeated vertex"):
        TriMesh(SQUARE, [[0, 1, 1]])


def test_rejects_non_manifold_edge():
    v = np.vstack([SQUARE, [[0.5, -1, 0], [0.5, 0.5, 1]]])
    with pytest.raises(MeshFormatError, match="non-manifold"):
        TriMesh(v, [[0, 1, 2], [1, 0, 4], [0, 1, 5]])


def test_rejects_inconsistent_orientation():
    with pytest.raises(MeshFormatError, match="orientation"):
        TriMesh(SQUARE, [[0, 1, 2], [2, 0, 3]])


def test_arrays_are_read_only():
    mesh = TriMesh(SQUARE, [[0, 1, 2], [0, 2, 3]])
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_counts_and_euler_characteristic():
    mesh = generators.icosphere(1)
    assert mesh.n_faces == 80
    assert mesh.n_vertices == 42
    assert mesh.is_closed
    assert mesh.euler_characteristic == 2
    assert genus_of_closed(mesh) == 0

    torus, _ = generators.torus(8, 6)
    assert genus_of_closed(torus) == 1


def test_genus_of_open_mesh_raises():
    with pytest.raises(TopologyError, match="not closed"):
        genus_of_closed(generators.flat_grid(2))


def test_face_area_and_normalization():
    mesh = generators.flat_grid(4, size=2.0)
    assert face_area(mesh, 0) == pytest.approx(0.125)
    assert total_area(mesh) == pytest.approx(4.0)
    with pytest.raises(IndexError):
        face_area(mesh, mesh.n_faces)

    unit = normalize_to_unit_area(mesh)
    assert total_area(unit) == pytest.approx(1.0, abs=1e-12)
    assert unit.metadata["scale"] == pytest.approx(0.5)
    # scale factors compose
    assert normalize_to_unit_area(unit).metadata["scale"] == pytest.approx(0.5)


def test_boundary_loop_of_grid_runs_counterclockwise_from_zero():
    mesh = generators.flat_grid(3)
    loops = boundary_loops(mesh)
    assert len(loops) == 1
    loop = loops[0].vertices
    assert loop[:4] == (0, 1, 2, 3)
    assert loop[4] == 7
    assert len(loop) == 12
    assert boundary_loops(generators.icosphere(0)) == []


def test_orient_faces_repairs_flipped_faces_and_turns_outward():
    sphere = generators.icosphere(1)
    faces = sphere.faces.copy()
    faces[::3] = faces[::3, ::-1]
    fixed = orient_faces(faces, sphere.vertices)
    mesh = TriMesh(sphere.vertices, fixed)
    p0, p1, p2 = (mesh.vertices[mesh.faces[:, k]] for k in range(3))
    volume = np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0
    assert volume > 0

    inward = orient_faces(sphere.faces[:, ::-1], sphere.vertices)
    np.testing.assert_array_equal(inward, sphere.faces)


def test_constructor_rejects_degenerate_faces():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], dtype=float)
    with pytest.raises(MeshFormatError, match="degenerate"):
        TriMesh(v, [[0, 1, 3], [0, 2, 1]])
    mesh = TriMesh(v, [[0, 1, 3], [0, 2, 1]], allow_degenerate=True)
    assert mesh.n_faces == 2
    with pytest.raises(MeshFormatError, match="degenerate"):
        check_degenerate(mesh)
    check_degenerate(generators.icosphere(1))


def test_obj_round_trip_with_texture_and_header(tmp_path):
    mesh = generators.flat_grid(3)
    uv = mesh.vertices[:, :2] * 0.5
    path = save_obj(tmp_path / "map.obj", mesh, uv, {"genus": 0, "corners": "0 3 15 12"})
    loaded, loaded_uv, header = load_param_obj(path)
    np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
    np.testing.assert_array_equal(loaded.faces, mesh.faces)
    np.testing.assert_array_equal(loaded_uv, uv)
    assert header == {"genus": "0", "corners": "0 3 15 12"}


def test_flat_obj_uses_texture_as_positions(tmp_path):
    mesh = generators.flat_grid(2)
    uv = mesh.vertices[:, :2][:, ::-1]
    data = read_obj(save_obj(tmp_path / "flat.obj", mesh, uv, flat=True))
    np.testing.assert_array_equal(data.vertices[:, :2], uv)
    assert np.all(data.vertices[:, 2] == 0)


def test_load_mesh_errors(tmp_path):
    with pytest.raises(MeshFormatError, match="no such file"):
        load_mesh(tmp_path / "missing.obj")

    quad = tmp_path / "quad.obj"
    quad.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshFormatError, match="non-triangular"):
        load_mesh(quad)

    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n")
    with pytest.raises(MeshFormatError, match="out of range"):
        load_mesh(bad)

    empty = tmp_path / "empty.obj"
    empty.write_text("v 0 0 0\n")
    with pytest.raises(MeshFormatError, match="no faces"):
        load_mesh(empty)


def test_load_mesh_accepts_negative_indices_and_reorients(tmp_path):
    src = tmp_path / "tet.obj"
    src.write_text(
        "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n"
        "f -4 -2 -3\nf 1 3 4\nf 1 4 2\nf 2 4 3\n"
    )
    mesh = load_mesh(src)
    assert mesh.is_closed
    assert mesh.euler_characteristic == 2


def test_load_param_obj_requires_texture(tmp_path):
    path = save_obj(tmp_path / "plain.obj", generators.flat_grid(1))
    with pytest.raises(MeshFormatError, match="texture"):
        load_param_obj(path)
