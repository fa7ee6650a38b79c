from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy import sparse

from .errors import ConstraintViolationError
from .mesh import TriMesh, total_area
from .slicer import BoundarySegments

logger = logging.getLogger(__name__)

AREA_FLOOR = 1e-14
COT_LIMIT = 1e8
CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class AreaMeasure:
    """Positive per-face measure rho(tau) dividing the squared image areas."""

    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("area measure must be finite and strictly positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> "AreaMeasure":
        return cls(mesh.face_areas, kind="area")

    @classmethod
    def constant(cls, mesh: TriMesh, value: Optional[float] = None) -> "AreaMeasure":
        if value is None:
            value = total_area(mesh) / mesh.n_faces
        return cls(np.full(mesh.n_faces, float(value)), kind="const")

    @classmethod
    def named(cls, name: str, mesh: TriMesh) -> "AreaMeasure":
        if name == "area":
            return cls.from_mesh(mesh)
        if name == "const":
            return cls.constant(mesh)
        raise ValueError(f"unknown area measure {name!r}")


@dataclass(frozen=True)
class ParamMap:
    """Per-vertex unit-square coordinates; column 0 is f1, column 1 is f2."""

    uv: np.ndarray
    segments: Optional[BoundarySegments] = None

    def __post_init__(self) -> None:
        uv = np.array(self.uv, dtype=np.float64).reshape(-1, 2)
        uv.setflags(write=False)
        object.__setattr__(self, "uv", uv)

    @property
    def f1(self) -> np.ndarray:
        return self.uv[:, 0]

    @property
    def f2(self) -> np.ndarray:
        return self.uv[:, 1]

    def with_uv(self, uv: np.ndarray) -> "ParamMap":
        return ParamMap(uv, self.segments)


MapLike = Union[ParamMap, np.ndarray]


def _uv(f: MapLike) -> np.ndarray:
    return f.uv if isinstance(f, ParamMap) else np.asarray(f, dtype=np.float64).reshape(-1, 2)


def _measure(mesh: TriMesh, rho: Optional[AreaMeasure]) -> np.ndarray:
    return mesh.face_areas if rho is None else rho.values


def signed_image_areas(mesh: TriMesh, f: MapLike) -> np.ndarray:
    uv = _uv(f)
    t = mesh.faces
    a = uv[t[:, 1]] - uv[t[:, 0]]
    b = uv[t[:, 2]] - uv[t[:, 0]]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def image_face_areas(mesh: TriMesh, f: MapLike) -> np.ndarray:
    return np.abs(signed_image_areas(mesh, f))


def _as_3d(points: np.ndarray) -> np.ndarray:
    if points.shape[1] == 3:
        return points
    return np.column_stack([points, np.zeros(len(points))])


def weighted_cot_laplacian(
    faces: np.ndarray, points: np.ndarray, rho: np.ndarray, n: Optional[int] = None
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Cotangent Laplacian of the triangles spanned by `points`, each face scaled by area/rho.

    Works for planar (n, 2) and spatial (n, 3) points. Returns the matrix and the
    indices of faces whose area or cotangents had to be clamped.
    """
    n = len(points) if n is None else n
    p = _as_3d(np.asarray(points, dtype=np.float64))
    corners = [p[faces[:, k]] for k in range(3)]
    doubled = np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0]), axis=1)
    area = 0.5 * doubled
    flagged = area < AREA_FLOOR
    area = np.maximum(area, AREA_FLOOR)
    ratio = area / rho

    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        a = corners[i] - corners[k]
        b = corners[j] - corners[k]
        cot = np.einsum("ij,ij->i", a, b) / (2.0 * area)
        flagged |= np.abs(cot) > COT_LIMIT
        cot = np.clip(cot, -COT_LIMIT, COT_LIMIT)
        w = 0.5 * cot * ratio
        rows += [faces[:, i], faces[:, j]]
        cols += [faces[:, j], faces[:, i]]
        vals += [-w, -w]
    off = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    diag = -np.asarray(off.sum(axis=1)).reshape(-1)
    return (off + sparse.diags(diag)).tocsr(), np.flatnonzero(flagged)


def stretch_laplacian(
    mesh: TriMesh,
    f: MapLike,
    rho: Optional[AreaMeasure] = None,
    *,
    return_flags: bool = False,
):
    L, flagged = weighted_cot_laplacian(mesh.faces, _uv(f), _measure(mesh, rho), mesh.n_vertices)
    if flagged.size:
        logger.debug("energy: clamped %d degenerate image face(s)", flagged.size)
    if return_flags:
        return L, flagged
    return L


def stretch_energy(mesh: TriMesh, f: MapLike, rho: Optional[AreaMeasure] = None) -> float:
    return float(np.sum(image_face_areas(mesh, f) ** 2 / _measure(mesh, rho)))


def stretch_energy_quadratic(mesh: TriMesh, f: MapLike, rho: Optional[AreaMeasure] = None) -> float:
    """0.5 * sum_s f^s' L_S(f) f^s; agrees with stretch_energy away from clamped faces."""
    uv = _uv(f)
    L = stretch_laplacian(mesh, uv, rho)
    return float(0.5 * np.sum(uv * (L @ uv)))


def image_area(f: MapLike, mesh: TriMesh) -> float:
    return float(image_face_areas(mesh, f).sum())


def authalic_energy(mesh: TriMesh, f: MapLike) -> float:
    a = image_area(f, mesh)
    if a <= 0:
        raise ConstraintViolationError("authalic energy undefined for zero image area")
    return total_area(mesh) / a * stretch_energy(mesh, f) - a


class RatioStatistics(BaseModel):
    mesh_area: float
    image_area: float
    E_A: float
    weighted_mean: float
    weighted_variance: float
    unweighted_mean: float
    unweighted_variance: float
    R_mean: float
    R_SD: float
    min_face_area: float
    variance_bound: float


def ratio_statistics(mesh: TriMesh, f: MapLike) -> RatioStatistics:
    areas = mesh.face_areas
    img = image_face_areas(mesh, f)
    M = float(areas.sum())
    A = float(img.sum())
    r = img / areas
    w_mean = A / M
    w_var = float(np.sum(areas * (r - w_mean) ** 2) / M)
    e_a = M / A * float(np.sum(img**2 / areas)) - A if A > 0 else float("inf")
    r_area = r * (M / A) if A > 0 else np.full_like(r, np.nan)
    min_area = float(areas.min())
    return RatioStatistics(
        mesh_area=M,
        image_area=A,
        E_A=e_a,
        weighted_mean=w_mean,
        weighted_variance=w_var,
        unweighted_mean=float(r.mean()),
        unweighted_variance=float(r.var()),
        R_mean=float(r_area.mean()),
        R_SD=float(r_area.std()),
        min_face_area=min_area,
        variance_bound=A * e_a / (mesh.n_faces * M * min_area),
    )


def full_gradient(mesh: TriMesh, f: MapLike, rho: Optional[AreaMeasure] = None) -> np.ndarray:
    """2 L_S(f) f, the gradient of E_S with respect to every vertex coordinate."""
    uv = _uv(f)
    return 2.0 * (stretch_laplacian(mesh, uv, rho) @ uv)


class ConstraintLayout:
    """Maps between full (n, 2) coordinates and the free vector.

    The free vector is [f1 on I; f2 on I; f1 on E interior; f2 on F interior]
    where I are the non-boundary vertices. Corners are pinned and the remaining
    boundary values follow from the identified-edge equalities of the genus.
    """

    def __init__(self, segments: BoundarySegments, n: int) -> None:
        self.segments = segments
        self.genus = segments.genus
        self.n = n
        mask = np.ones(n, dtype=bool)
        mask[segments.boundary] = False
        self.interior = np.flatnonzero(mask)
        self.e_inner = segments.E[1:-1]
        self.f_inner = segments.F[1:-1]
        self.g_inner = segments.G[1:-1]
        self.h_inner = segments.H[1:-1]
        ni = len(self.interior)
        ne, nf = len(self.e_inner), len(self.f_inner)
        self.s_i1 = slice(0, ni)
        self.s_i2 = slice(ni, 2 * ni)
        self.s_e = slice(2 * ni, 2 * ni + ne)
        self.s_f = slice(2 * ni + ne, 2 * ni + ne + nf)
        self.size = 2 * ni + ne + nf

    def fill_boundary(self, uv: np.ndarray, e_vals: np.ndarray, f_vals: np.ndarray) -> None:
        E, F, G, H = self.segments.E, self.segments.F, self.segments.G, self.segments.H
        uv[E, 0] = e_vals
        uv[E, 1] = 0.0
        uv[F, 0] = 1.0
        uv[F, 1] = f_vals
        uv[G, 1] = 1.0
        uv[H, 0] = 0.0
        if self.genus == 0:
            uv[H, 1] = e_vals
            uv[G, 0] = f_vals
        else:
            uv[G, 0] = e_vals
            uv[H, 1] = f_vals

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=np.float64)
        x[self.s_e] = np.clip(x[self.s_e], 0.0, 1.0)
        x[self.s_f] = np.clip(x[self.s_f], 0.0, 1.0)
        return x

    def unpack(self, x: np.ndarray, *, project: bool = True) -> np.ndarray:
        if project:
            x = self.project(x)
        uv = np.zeros((self.n, 2))
        uv[self.interior, 0] = x[self.s_i1]
        uv[self.interior, 1] = x[self.s_i2]
        e_vals = np.concatenate([[0.0], x[self.s_e], [1.0]])
        f_vals = np.concatenate([[0.0], x[self.s_f], [1.0]])
        self.fill_boundary(uv, e_vals, f_vals)
        return uv

    def pack(self, f: MapLike) -> np.ndarray:
        uv = _uv(f)
        return np.concatenate(
            [uv[self.interior, 0], uv[self.interior, 1], uv[self.e_inner, 0], uv[self.f_inner, 1]]
        )

    def reduce(self, grad: np.ndarray) -> np.ndarray:
        """Chain rule through the boundary equalities: paired rows are summed."""
        if self.genus == 0:
            g_e = grad[self.e_inner, 0] + grad[self.h_inner, 1]
            g_f = grad[self.f_inner, 1] + grad[self.g_inner, 0]
        else:
            g_e = grad[self.e_inner, 0] + grad[self.g_inner, 0]
            g_f = grad[self.f_inner, 1] + grad[self.h_inner, 1]
        return np.concatenate([grad[self.interior, 0], grad[self.interior, 1], g_e, g_f])

    def violation(self, f: MapLike) -> float:
        uv = _uv(f)
        expected = np.array(uv, dtype=np.float64)
        e_vals = np.concatenate([[0.0], uv[self.e_inner, 0], [1.0]])
        f_vals = np.concatenate([[0.0], uv[self.f_inner, 1], [1.0]])
        self.fill_boundary(expected, e_vals, f_vals)
        b = self.segments.boundary
        worst = float(np.max(np.abs(expected[b] - uv[b]))) if b.size else 0.0
        outside = float(max(0.0, -uv.min(), uv.max() - 1.0)) if uv.size else 0.0
        return max(worst, outside)

    def check(self, f: MapLike, tol: float = CONSTRAINT_TOL) -> None:
        worst = self.violation(f)
        if worst > tol:
            raise ConstraintViolationError(f"boundary constraints violated by {worst:.3g}")


def gradient(
    mesh: TriMesh,
    f: ParamMap,
    rho: Optional[AreaMeasure] = None,
    *,
    layout: Optional[ConstraintLayout] = None,
) -> np.ndarray:
    """Gradient of E_S over the free variables of a constrained map."""
    if layout is None:
        if f.segments is None:
            raise ConstraintViolationError("map has no boundary segments")
        layout = ConstraintLayout(f.segments, mesh.n_vertices)
    layout.check(f)
    return layout.reduce(full_gradient(mesh, f, rho))
