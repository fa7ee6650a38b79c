from __future__ import annotations

import numpy as np
import pandas as pd
import trimesh
from trimesh.proximity import ProximityQuery
from trimesh.triangles import closest_point

from .mesh import TriMesh


def _lattice(density: int) -> np.ndarray:
    """Barycentric lattice points i/k, j/k of a triangle, k = density."""
    k = max(1, int(density))
    pts = [(k - i - j, i, j) for i in range(k + 1) for j in range(k + 1 - i)]
    return np.array(pts, dtype=np.float64) / k


def dense_samples(mesh: TriMesh, density: int = 3) -> np.ndarray:
    lam = _lattice(density)
    corners = mesh.vertices[mesh.faces]
    pts = np.einsum("lk,fkd->fld", lam, corners).reshape(-1, 3)
    return np.unique(pts, axis=0)


def as_trimesh(mesh: TriMesh) -> trimesh.Trimesh:
    # drop zero-area faces (collapsed corners of a decoded image)
    faces = mesh.faces[mesh.face_areas > 0]
    return trimesh.Trimesh(mesh.vertices, faces, process=False, validate=False)


def point_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each point to its triangle (row-wise)."""
    closest = closest_point(np.stack([a, b, c], axis=1), p)
    return np.linalg.norm(p - closest, axis=1)


def distances_to_surface(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    _, distance, _ = ProximityQuery(as_trimesh(mesh)).on_surface(points)
    return np.asarray(distance, dtype=np.float64)


def mean_surface_distance(a: TriMesh, b: TriMesh, *, density: int = 3) -> float:
    """Symmetric mean distance between two surfaces, from dense barycentric samples of each."""
    ab = distances_to_surface(dense_samples(a, density), b)
    ba = distances_to_surface(dense_samples(b, density), a)
    return float(0.5 * (ab.mean() + ba.mean()))


def triangle_angles(mesh: TriMesh) -> np.ndarray:
    """Interior angles in degrees, shape (m, 3); NaN for zero-length edges."""
    corners = mesh.vertices[mesh.faces]
    out = np.empty((mesh.n_faces, 3))
    for k in range(3):
        a = corners[:, (k + 1) % 3] - corners[:, k]
        b = corners[:, (k + 2) % 3] - corners[:, k]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = np.einsum("ij,ij->i", a, b)
        ang = np.degrees(np.arctan2(cross, dot))
        zero = (np.linalg.norm(a, axis=1) == 0) | (np.linalg.norm(b, axis=1) == 0)
        ang[zero] = np.nan
        out[:, k] = ang
    return out


def angle_histogram(mesh: TriMesh, bins: int = 18) -> pd.DataFrame:
    """Counts of triangle angles in equal-width bins over [0, 180] degrees."""
    angles = triangle_angles(mesh).reshape(-1)
    angles = angles[np.isfinite(angles)]
    counts, edges = np.histogram(angles, bins=bins, range=(0.0, 180.0))
    return pd.DataFrame({"lo": edges[:-1], "hi": edges[1:], "count": counts})
