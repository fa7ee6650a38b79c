from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import UsageError
from .mesh import TriMesh, orient_faces

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=np.float64,
)

_ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class TorusLoops:
    """Canonical loops of a structured torus; they meet only at vertex 0."""

    loop_a: Tuple[int, ...]  # around the central axis (j = 0)
    loop_b: Tuple[int, ...]  # around the tube (i = 0)


def tetrahedron() -> TriMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    f = [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]
    return TriMesh(v, orient_faces(f, v), {"generator": "tetrahedron"})


def octahedron() -> TriMesh:
    v = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.float64,
    )
    f = [
        [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
        [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
    ]
    return TriMesh(v, f, {"generator": "octahedron"})


def icosahedron(edge: float = 1.0) -> TriMesh:
    # the raw coordinates have edge length 2
    v = _ICOSAHEDRON_VERTICES * (edge / 2.0)
    return TriMesh(v, orient_faces(_ICOSAHEDRON_FACES, v), {"generator": "icosahedron"})


def icosphere(subdiv: int = 3, radius: float = 1.0) -> TriMesh:
    """Icosahedron split `subdiv` times (20 * 4**subdiv faces), projected to the sphere."""
    if subdiv < 0:
        raise UsageError("subdivision level must be >= 0")
    verts = [tuple(p) for p in (_ICOSAHEDRON_VERTICES / np.linalg.norm(_ICOSAHEDRON_VERTICES, axis=1)[:, None])]
    faces = _ICOSAHEDRON_FACES.tolist()
    for _ in range(subdiv):
        midpoint: Dict[Tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = np.add(verts[a], verts[b])
                verts.append(tuple(p / np.linalg.norm(p)))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            refined.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = refined
    v = np.array(verts, dtype=np.float64) * radius
    return TriMesh(v, orient_faces(faces, v), {"generator": f"icosphere:{subdiv}"})


def ellipsoid(subdiv: int = 3, axes: Tuple[float, float, float] = (4.0, 1.0, 1.0)) -> TriMesh:
    sphere = icosphere(subdiv)
    return TriMesh(sphere.vertices * np.asarray(axes, dtype=np.float64), sphere.faces, {"generator": f"ellipsoid:{subdiv}"})


def torus(nu: int = 24, nv: int = 24, R: float = 1.0, r: float = 0.4) -> Tuple[TriMesh, TorusLoops]:
    """Structured torus; vertex (i, j) has index i * nv + j, u = 2 pi i / nu around the axis."""
    if nu < 3 or nv < 3:
        raise UsageError("torus needs at least 3 samples in each direction")
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    u = 2.0 * np.pi * i.ravel() / nu
    w = 2.0 * np.pi * j.ravel() / nv
    ring = R + r * np.cos(w)
    v = np.column_stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(w)])

    def vid(a, b):
        return (a % nu) * nv + (b % nv)

    faces = []
    for a in range(nu):
        for b in range(nv):
            p, q, s, t = vid(a, b), vid(a + 1, b), vid(a + 1, b + 1), vid(a, b + 1)
            faces.append([p, q, s])
            faces.append([p, s, t])
    loops = TorusLoops(
        loop_a=tuple(vid(a, 0) for a in range(nu)),
        loop_b=tuple(vid(0, b) for b in range(nv)),
    )
    return TriMesh(v, orient_faces(faces, v), {"generator": f"torus:{nu}x{nv}"}), loops


def flat_grid(nx: int = 8, ny: Optional[int] = None, *, size: float = 1.0) -> TriMesh:
    """Structured triangulation of [0, size]^2 in the z = 0 plane; vertex (i, j) is j * (nx + 1) + i."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise UsageError("grid needs at least one cell in each direction")
    xs, ys = np.meshgrid(np.linspace(0.0, size, nx + 1), np.linspace(0.0, size, ny + 1))
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(v, faces, {"generator": f"grid:{nx}x{ny}"})


def jitter(mesh: TriMesh, amount: float, rng: np.random.Generator) -> TriMesh:
    """Displace vertices by up to `amount` times the mean edge length, uniformly per axis."""
    if amount <= 0:
        return mesh
    e = mesh.edges
    mean_edge = float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())
    offsets = rng.uniform(-amount, amount, size=mesh.vertices.shape) * mean_edge
    return TriMesh(mesh.vertices + offsets, mesh.faces, mesh.metadata)


def from_spec(spec: str) -> Tuple[TriMesh, Optional[TorusLoops]]:
    """Build a mesh from 'icosphere:3', 'ellipsoid:3', 'torus:24x24', 'grid:8x8', ..."""
    name, _, arg = spec.partition(":")
    try:
        if name == "icosphere":
            return icosphere(int(arg or 3)), None
        if name == "ellipsoid":
            return ellipsoid(int(arg or 3)), None
        if name == "icosahedron":
            return icosahedron(), None
        if name == "octahedron":
            return octahedron(), None
        if name == "torus":
            nu, _, nv = (arg or "24x24").partition("x")
            return torus(int(nu), int(nv or nu))
        if name == "grid":
            nx, _, ny = (arg or "8x8").partition("x")
            return flat_grid(int(nx), int(ny or nx)), None
    except ValueError as exc:
        raise UsageError(f"bad generator spec {spec!r}: {exc}") from exc
    raise UsageError(f"unknown generator {name!r}")


def is_generator_spec(text: str) -> bool:
    return text.partition(":")[0] in {"icosphere", "ellipsoid", "icosahedron", "octahedron", "torus", "grid"}
