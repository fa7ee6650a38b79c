from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .bijectivity import FoldReport, correct_overlaps, count_folded
from .config import SolverConfig
from .energy import AreaMeasure, MapLike, ParamMap, _uv
from .errors import GeometryImageError, MeshFormatError, TopologyError
from .mesh import TriMesh
from .slicer import BoundarySegments
from .solver import PCGResult, fixed_point_init, pcg_minimize

logger = logging.getLogger(__name__)

BARY_SLACK = 1e-12
WELD_RTOL = 1e-3
QUANT_LEVELS = 65535
FALLBACK_NEIGHBOURS = 8
JACOBIAN_FLOOR = 1e-300

WELD_SCHEMES = {0: "fold", 1: "torus"}


@dataclass
class GeometryImage:
    """N x N grid of surface positions; row j is the v coordinate, column i is u."""

    samples: np.ndarray
    genus: int
    weld: Optional[str] = None
    fallback_pixels: int = 0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] != s.shape[1] or s.shape[2] != 3:
            raise GeometryImageError(f"samples must have shape (N, N, 3), got {s.shape}")
        if s.shape[0] < 2:
            raise GeometryImageError("geometry image needs N >= 2")
        if not np.all(np.isfinite(s)):
            raise GeometryImageError("geometry image contains non-finite samples")
        if self.genus not in WELD_SCHEMES:
            raise GeometryImageError(f"unsupported genus {self.genus}")
        self.samples = s
        if self.weld is None:
            self.weld = WELD_SCHEMES[self.genus]
        if self.weld not in WELD_SCHEMES.values():
            raise GeometryImageError(f"unknown weld scheme {self.weld!r}")

    @property
    def resolution(self) -> int:
        return int(self.samples.shape[0])

    def channel_range(self) -> Tuple[np.ndarray, np.ndarray]:
        flat = self.samples.reshape(-1, 3)
        return flat.min(axis=0), flat.max(axis=0)

    def quantize(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """16-bit codes per channel plus the (min, max) used to scale them."""
        lo, hi = self.channel_range()
        span = np.where(hi > lo, hi - lo, 1.0)
        q = np.rint((self.samples - lo) / span * QUANT_LEVELS)
        return np.clip(q, 0, QUANT_LEVELS).astype(np.uint16), lo, hi

    @classmethod
    def from_quantized(
        cls, q: np.ndarray, lo, hi, genus: int, weld: Optional[str] = None
    ) -> "GeometryImage":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        samples = lo + np.asarray(q, dtype=np.float64) / QUANT_LEVELS * (hi - lo)
        return cls(samples, genus, weld, lo=lo, hi=hi)


def sample_coordinates(N: int) -> np.ndarray:
    """Pixel centres (i + 1/2) / N, with the first and last clamped onto the square's edges."""
    if N < 2:
        raise GeometryImageError("resolution must be at least 2")
    s = (np.arange(N, dtype=np.float64) + 0.5) / N
    s[0], s[-1] = 0.0, 1.0
    return s


def _barycentric(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points p (k, 2) in triangles a, b, c (broadcastable to (k, 2))."""
    v0 = b - a
    v1 = c - a
    v2 = p - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def _nearest_faces(points: np.ndarray, tri: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    k = min(FALLBACK_NEIGHBOURS, len(tri))
    tree = cKDTree(tri.mean(axis=1))
    _, cand = tree.query(points, k=k, workers=workers)
    cand = np.asarray(cand).reshape(len(points), k)
    best = np.full(len(points), np.inf)
    owner = np.zeros(len(points), dtype=np.int64)
    bary = np.zeros((len(points), 3))
    for col in range(k):
        t = tri[cand[:, col]]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = _barycentric(points, t[:, 0], t[:, 1], t[:, 2])
        lam = np.nan_to_num(lam, nan=1.0 / 3.0)
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        closest = np.einsum("pk,pkd->pd", lam, t)
        dist = np.linalg.norm(closest - points, axis=1)
        better = dist < best
        best[better] = dist[better]
        owner[better] = cand[better, col]
        bary[better] = lam[better]
    return owner, bary


def encode(mesh: TriMesh, f: MapLike, N: int, *, workers: int = 1, genus: Optional[int] = None) -> GeometryImage:
    """Sample the surface on an N x N lattice over the parameter square.

    Each lattice point is located in the image triangulation and the 3D
    positions of that face are interpolated barycentrically. Points outside
    every face fall back to the nearest face and are counted.
    """
    uv = _uv(f)
    if genus is None:
        segments = f.segments if isinstance(f, ParamMap) else None
        genus = segments.genus if segments is not None else 0
    s = sample_coordinates(N)
    U, V = np.meshgrid(s, s)
    points = np.column_stack([U.ravel(), V.ravel()])
    owner = np.full(N * N, -1, dtype=np.int64)
    bary = np.zeros((N * N, 3))

    tri = uv[mesh.faces]
    lo = tri.min(axis=1) - BARY_SLACK
    hi = tri.max(axis=1) + BARY_SLACK
    i0 = np.searchsorted(s, lo[:, 0], "left")
    i1 = np.searchsorted(s, hi[:, 0], "right")
    j0 = np.searchsorted(s, lo[:, 1], "left")
    j1 = np.searchsorted(s, hi[:, 1], "right")
    doubled = np.abs(
        (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
        - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0])
    )
    for t in np.flatnonzero((i0 < i1) & (j0 < j1) & (doubled > 0.0)):
        jj, ii = np.mgrid[j0[t]:j1[t], i0[t]:i1[t]]
        idx = (jj * N + ii).ravel()
        idx = idx[owner[idx] < 0]
        if idx.size == 0:
            continue
        lam = _barycentric(points[idx], tri[t, 0], tri[t, 1], tri[t, 2])
        inside = np.all(lam >= -BARY_SLACK, axis=1)
        owner[idx[inside]] = t
        bary[idx[inside]] = lam[inside]

    missing = np.flatnonzero(owner < 0)
    if missing.size:
        logger.warning("geomimage: %d pixel(s) outside the image triangulation, using nearest face", missing.size)
        owner[missing], bary[missing] = _nearest_faces(points[missing], tri, workers)

    corners = mesh.vertices[mesh.faces[owner]]
    samples = np.einsum("pk,pkd->pd", bary, corners).reshape(N, N, 3)
    logger.info("geomimage: encoded %dx%d image from m=%d faces", N, N, mesh.n_faces)
    return GeometryImage(samples, genus, fallback_pixels=int(missing.size))


def _identified_pairs(N: int, weld: str) -> Tuple[np.ndarray, np.ndarray]:
    grid = np.arange(N * N).reshape(N, N)
    t = np.arange(N)
    if weld == "fold":
        # bottom with left, right with top
        p = np.concatenate([grid[0, t], grid[t, N - 1]])
        q = np.concatenate([grid[t, 0], grid[N - 1, t]])
    else:
        p = np.concatenate([grid[0, t], grid[t, 0]])
        q = np.concatenate([grid[N - 1, t], grid[t, N - 1]])
    return p, q


def _cancel_reversed(faces: np.ndarray) -> np.ndarray:
    """Drop pairs of faces that use the same three vertices with opposite orientation."""
    if len(faces) == 0:
        return faces
    srt = np.sort(faces, axis=1)
    k = np.argmin(faces, axis=1)
    rot = faces[np.arange(len(faces))[:, None], (k[:, None] + np.arange(3)) % 3]
    even = rot[:, 1] < rot[:, 2]
    _, inv, counts = np.unique(srt, axis=0, return_inverse=True, return_counts=True)
    inv = np.asarray(inv).reshape(-1)
    n_even = np.bincount(inv, weights=even.astype(np.float64), minlength=len(counts))
    cancel = (counts == 2) & (n_even == 1)
    return faces[~cancel[inv]]


def _weld(img: GeometryImage, open_mesh: TriMesh) -> TriMesh:
    N = img.resolution
    n_samples = N * N
    S = img.samples.reshape(-1, 3)
    p, q = _identified_pairs(N, img.weld)
    graph = sparse.coo_matrix((np.ones(len(p)), (p, q)), shape=(n_samples, n_samples))
    n_comp, labels = connected_components(graph, directed=False)
    counts = np.bincount(labels, minlength=n_comp).astype(np.float64)
    welded = np.column_stack(
        [np.bincount(labels, weights=S[:, c], minlength=n_comp) / counts for c in range(3)]
    )
    deviation = float(np.linalg.norm(S - welded[labels], axis=1).max())
    tol = WELD_RTOL * open_mesh.bbox_diagonal
    if deviation > tol:
        logger.warning("geomimage: weld mismatch %.3g exceeds %.3g, emitting open mesh", deviation, tol)
        return open_mesh

    vmap = np.concatenate([labels, n_comp + np.arange(open_mesh.n_vertices - n_samples)])
    verts = np.vstack([welded, open_mesh.vertices[n_samples:]])
    faces = vmap[open_mesh.faces]
    distinct = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = _cancel_reversed(faces[distinct])
    used, inv = np.unique(faces, return_inverse=True)
    faces = np.asarray(inv).reshape(-1, 3)
    meta = dict(open_mesh.metadata, welded=True)
    try:
        mesh = TriMesh(verts[used], faces, meta, allow_degenerate=True)
    except (MeshFormatError, TopologyError) as exc:
        logger.warning("geomimage: welded mesh invalid (%s), emitting open mesh", exc)
        return open_mesh
    logger.info(
        "geomimage: welded %s image into n=%d m=%d chi=%d",
        img.weld, mesh.n_vertices, mesh.n_faces, mesh.euler_characteristic,
    )
    return mesh


def decode(img: GeometryImage, *, weld: bool = True) -> TriMesh:
    """Rebuild a mesh: grid samples plus one centre per quad, four triangles per quad."""
    N = img.resolution
    S = img.samples.reshape(-1, 3)
    grid = np.arange(N * N).reshape(N, N)
    a = grid[:-1, :-1].ravel()
    b = grid[:-1, 1:].ravel()
    d = grid[1:, 1:].ravel()
    e = grid[1:, :-1].ravel()
    c = N * N + np.arange((N - 1) ** 2)
    centers = (S[a] + S[b] + S[d] + S[e]) / 4.0
    quads = [np.column_stack(t) for t in ((a, b, c), (b, d, c), (d, e, c), (e, a, c))]
    faces = np.stack(quads, axis=1).reshape(-1, 3)
    open_mesh = TriMesh(
        np.vstack([S, centers]), faces, {"genus": img.genus, "welded": False}, allow_degenerate=True
    )
    if not weld:
        return open_mesh
    return _weld(img, open_mesh)


def constant_area_param(
    mesh: TriMesh, segments: BoundarySegments, cfg: Optional[SolverConfig] = None
) -> ParamMap:
    return constant_area_run(mesh, segments, cfg).map


def constant_area_run(
    mesh: TriMesh, segments: BoundarySegments, cfg: Optional[SolverConfig] = None
) -> PCGResult:
    """The stretch-energy minimisation with rho = |M| / m on every face."""
    return pcg_minimize(mesh, segments, cfg, AreaMeasure.constant(mesh))


@dataclass(frozen=True)
class BeltramiField:
    mu: np.ndarray
    delta: Optional[float] = None

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=np.complex128).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.mu)

    @property
    def max_abs(self) -> float:
        return float(self.magnitude.max()) if self.mu.size else 0.0


def beltrami_coefficient(f_from: MapLike, f_to: MapLike, mesh: TriMesh) -> BeltramiField:
    """Per-face mu = phi_zbar / phi_z of the affine map between the two image triangles."""
    p = _uv(f_from)[mesh.faces]
    q = _uv(f_to)[mesh.faces]
    P = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    Q = np.stack([q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]], axis=2)
    det = P[:, 0, 0] * P[:, 1, 1] - P[:, 0, 1] * P[:, 1, 0]
    if np.any(np.abs(det) <= JACOBIAN_FLOOR):
        raise GeometryImageError(f"degenerate source triangle {int(np.argmax(np.abs(det) <= JACOBIAN_FLOOR))}")
    inv = np.empty_like(P)
    inv[:, 0, 0] = P[:, 1, 1]
    inv[:, 0, 1] = -P[:, 0, 1]
    inv[:, 1, 0] = -P[:, 1, 0]
    inv[:, 1, 1] = P[:, 0, 0]
    inv /= det[:, None, None]
    J = Q @ inv
    a = (J[:, 0, 0] + J[:, 1, 1]) / 2.0
    b = (J[:, 1, 0] - J[:, 0, 1]) / 2.0
    c = (J[:, 0, 0] - J[:, 1, 1]) / 2.0
    d = (J[:, 1, 0] + J[:, 0, 1]) / 2.0
    return BeltramiField((c + 1j * d) / (a + 1j * b))


def truncate(mu: BeltramiField, delta: float) -> BeltramiField:
    """Scale every coefficient with |mu| > delta back onto the circle of radius delta."""
    if not 0.0 < delta < 1.0:
        raise GeometryImageError(f"delta must lie in (0, 1), got {delta}")
    values = np.array(mu.mu)
    mag = np.abs(values)
    over = mag > delta
    values[over] *= delta / mag[over]
    # rounding may leave |mu| a few ulps above delta
    still = np.abs(values) > delta
    while np.any(still):
        values[still] *= 1.0 - np.finfo(np.float64).eps
        still = np.abs(values) > delta
    return BeltramiField(values, delta)


def beltrami_stiffness(faces: np.ndarray, points: np.ndarray, mu: np.ndarray, n: int) -> sparse.csr_matrix:
    """Per-face integral of grad(phi_k)' A grad(phi_l) with the Beltrami A-matrix."""
    p = np.asarray(points, dtype=np.float64)[faces]
    signed = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )
    mag2 = np.abs(mu) ** 2
    if np.any(mag2 >= 1.0):
        raise GeometryImageError("Beltrami coefficient must satisfy |mu| < 1")
    scale = 1.0 / (1.0 - mag2)
    a11 = ((1.0 - mu.real) ** 2 + mu.imag**2) * scale
    a12 = -2.0 * mu.imag * scale
    a22 = ((1.0 + mu.real) ** 2 + mu.imag**2) * scale

    grads = []
    for k in range(3):
        e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grads.append(np.column_stack([-e[:, 1], e[:, 0]]) / (2.0 * signed)[:, None])
    area = np.abs(signed)
    rows, cols, vals = [], [], []
    for k in range(3):
        gk = grads[k]
        Agk = np.column_stack([a11 * gk[:, 0] + a12 * gk[:, 1], a12 * gk[:, 0] + a22 * gk[:, 1]])
        for l in range(3):
            rows.append(faces[:, k])
            cols.append(faces[:, l])
            vals.append(area * np.einsum("ij,ij->i", Agk, grads[l]))
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


def truncate_and_reconstruct(
    mu: BeltramiField,
    f_from: MapLike,
    segments: BoundarySegments,
    delta: float,
    *,
    mesh: TriMesh,
    target: Optional[MapLike] = None,
) -> ParamMap:
    """Truncate mu at delta and solve div(A grad u) = 0 on the f_from domain for both coordinates.

    Boundary values come from `target` when given, otherwise from f_from.
    """
    mu_t = truncate(mu, delta)
    domain = _uv(f_from)
    uv = np.array(_uv(target if target is not None else f_from))
    n = mesh.n_vertices
    boundary = segments.boundary
    mask = np.ones(n, dtype=bool)
    mask[boundary] = False
    interior = np.flatnonzero(mask)
    K = beltrami_stiffness(mesh.faces, domain, mu_t.mu, n)
    K_ii = sparse.csc_matrix(K[interior][:, interior])
    rhs = -(K[interior][:, boundary] @ uv[boundary])
    try:
        uv[interior] = splu(K_ii).solve(rhs)
    except RuntimeError as exc:
        raise GeometryImageError(f"Beltrami system is singular: {exc}") from exc
    logger.info("geomimage: reconstructed map with |mu| capped at %.3g (max was %.3g)", delta, mu.max_abs)
    return ParamMap(uv, segments)


@dataclass
class AngularCorrection:
    map: ParamMap
    harmonic: ParamMap
    before: BeltramiField
    after: BeltramiField
    folds: FoldReport
    repaired: bool = False


def angular_correction(
    mesh: TriMesh,
    f: ParamMap,
    segments: BoundarySegments,
    delta: float,
    *,
    harmonic: Optional[ParamMap] = None,
) -> AngularCorrection:
    """Cap the angular distortion of f relative to the harmonic map, keeping f's boundary."""
    if harmonic is None:
        harmonic = fixed_point_init(mesh, segments, SolverConfig(fpm_iters=0)).harmonic
    before = beltrami_coefficient(harmonic, f, mesh)
    corrected = truncate_and_reconstruct(before, harmonic, segments, delta, mesh=mesh, target=f)
    folds = count_folded(mesh, corrected)
    repaired = False
    if folds.count:
        logger.warning("geomimage: %d fold(s) after Beltrami reconstruction, applying mean-value repair", folds.count)
        corrected = correct_overlaps(mesh, corrected)
        folds = count_folded(mesh, corrected)
        repaired = True
    after = beltrami_coefficient(harmonic, corrected, mesh)
    return AngularCorrection(corrected, harmonic, before, after, folds, repaired)


@dataclass
class ImagePipelineResult:
    image: GeometryImage
    map: ParamMap
    run: PCGResult
    correction: Optional[AngularCorrection] = None


def image_pipeline(
    mesh: TriMesh,
    segments: BoundarySegments,
    N: int,
    *,
    cfg: Optional[SolverConfig] = None,
    delta: Optional[float] = None,
    workers: int = 1,
    positions: Optional[TriMesh] = None,
) -> ImagePipelineResult:
    """Constant-area map, optional Beltrami cap, fold check, then encode.

    `positions` supplies the 3D coordinates to sample (same connectivity as
    mesh), e.g. the surface at its input scale.
    """
    run = constant_area_run(mesh, segments, cfg)
    f = run.map
    correction = None
    if delta is not None:
        correction = angular_correction(mesh, f, segments, delta, harmonic=run.harmonic)
        f = correction.map
    else:
        folds = count_folded(mesh, f)
        if folds.count:
            f = correct_overlaps(mesh, f)
    image = encode(positions if positions is not None else mesh, f, N, workers=workers, genus=segments.genus)
    return ImagePipelineResult(image=image, map=f, run=run, correction=correction)
