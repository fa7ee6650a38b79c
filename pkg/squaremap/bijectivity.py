from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .energy import MapLike, ParamMap, _uv, signed_image_areas
from .errors import BijectivityError
from .mesh import TriMesh

logger = logging.getLogger(__name__)

FOLD_TOL = 1e-15
COINCIDENT_TOL = 1e-14
HALF_ANGLE_MAX = np.pi / 2.0 - 1e-9
HALF_ANGLE_MIN = 1e-12


@dataclass(frozen=True)
class FoldReport:
    count: int
    faces: np.ndarray

    def as_list(self):
        return [int(f) for f in self.faces]


def count_folded(mesh: TriMesh, f: MapLike) -> FoldReport:
    """Faces whose image has signed area <= 1e-15 under the stored orientation."""
    folded = np.flatnonzero(signed_image_areas(mesh, f) <= FOLD_TOL)
    return FoldReport(int(folded.size), folded)


def mean_value_laplacian(mesh: TriMesh, f: MapLike, *, return_flags: bool = False):
    """Mean-value weights tan(gamma/2) / |f_i - f_j| evaluated on the planar image.

    Off-diagonals are negative and each row sums to zero. The matrix is
    structurally symmetric only.
    """
    uv = _uv(f)
    t = mesh.faces
    n = mesh.n_vertices
    e = mesh.edges
    lengths = np.linalg.norm(uv[e[:, 0]] - uv[e[:, 1]], axis=1)
    if np.any(lengths <= COINCIDENT_TOL):
        bad = e[np.argmax(lengths <= COINCIDENT_TOL)]
        raise BijectivityError(f"vertices {int(bad[0])} and {int(bad[1])} map to the same point")

    rows, cols, vals = [], [], []
    flagged = np.zeros(len(t), dtype=bool)
    for k in range(3):
        i, j, l = t[:, k], t[:, (k + 1) % 3], t[:, (k + 2) % 3]
        a = uv[j] - uv[i]
        b = uv[l] - uv[i]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        cross = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        half = np.arctan2(cross, na * nb + np.einsum("ij,ij->i", a, b))
        flagged |= (half > HALF_ANGLE_MAX) | (half < HALF_ANGLE_MIN)
        tan_half = np.tan(np.clip(half, HALF_ANGLE_MIN, HALF_ANGLE_MAX))
        rows += [i, i]
        cols += [j, l]
        vals += [-tan_half / na, -tan_half / nb]
    off = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    L = (off + sparse.diags(-np.asarray(off.sum(axis=1)).reshape(-1))).tocsr()
    flagged = np.flatnonzero(flagged)
    if flagged.size:
        logger.warning("bijectivity: %d face(s) with degenerate image angles clamped", flagged.size)
    if return_flags:
        return L, flagged
    return L


def correct_overlaps(mesh: TriMesh, f: ParamMap, boundary: Optional[np.ndarray] = None) -> ParamMap:
    """Replace interior coordinates by the mean-value convex combination of their neighbours.

    The boundary values are copied unchanged.
    """
    uv = np.array(_uv(f))
    if boundary is None:
        boundary = f.segments.boundary if f.segments is not None else mesh.boundary_vertices
    boundary = np.asarray(boundary, dtype=np.int64)
    mask = np.ones(mesh.n_vertices, dtype=bool)
    mask[boundary] = False
    interior = np.flatnonzero(mask)
    before = count_folded(mesh, uv).count
    if interior.size == 0:
        return f

    L = mean_value_laplacian(mesh, uv)
    # row scaling leaves each equation's solution unchanged
    L = (sparse.diags(1.0 / L.diagonal()) @ L).tocsr()
    L_ii = sparse.csc_matrix(L[interior][:, interior])
    rhs = -(L[interior][:, boundary] @ uv[boundary])
    try:
        x = splu(L_ii).solve(rhs)
    except RuntimeError as exc:
        raise BijectivityError(f"mean-value system is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise BijectivityError("mean-value solve produced non-finite values")
    uv[interior] = x
    after = count_folded(mesh, uv).count
    logger.info("bijectivity: folded faces %d -> %d", before, after)
    return f.with_uv(uv) if isinstance(f, ParamMap) else ParamMap(uv)
