from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import splu

from .bijectivity import count_folded
from .config import SolverConfig
from .energy import (
    AreaMeasure,
    ConstraintLayout,
    ParamMap,
    full_gradient,
    ratio_statistics,
    stretch_energy,
    stretch_laplacian,
    weighted_cot_laplacian,
)
from .errors import SolverError
from .linalg import SPDFactor
from .mesh import TriMesh
from .slicer import BoundarySegments

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "iter", "E_S", "E_A", "A(f)", "weighted_variance", "unweighted_variance", "variance_bound",
    "R_mean", "R_SD", "folds", "alpha", "grad_norm", "armijo", "curvature", "reinterps",
    "flagged", "restart",
]

RESIDUAL_TOL = 1e-8


def initial_boundary(
    segments: BoundarySegments, genus: Optional[int] = None, *, n: Optional[int] = None
) -> ParamMap:
    """Uniformly spaced E and F values; the other sides follow by identification.

    Interior vertices are parked at the square's center.
    """
    genus = segments.genus if genus is None else genus
    if genus != segments.genus:
        raise SolverError(f"segments were built for genus {segments.genus}, not {genus}")
    if len(segments.E) < 2 or len(segments.F) < 2:
        raise SolverError("boundary segment shorter than two vertices")
    n = int(segments.boundary.max()) + 1 if n is None else n
    layout = ConstraintLayout(segments, n)
    uv = np.full((n, 2), 0.5)
    layout.fill_boundary(uv, np.linspace(0.0, 1.0, len(segments.E)), np.linspace(0.0, 1.0, len(segments.F)))
    return ParamMap(uv, segments)


def _solve_interior(L: sparse.csr_matrix, uv: np.ndarray, interior: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    L_ii = sparse.csc_matrix(L[interior][:, interior])
    rhs = -(L[interior][:, boundary] @ uv[boundary])
    try:
        x = splu(L_ii).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular interior system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("interior solve produced non-finite values")
    residual = float(np.abs(L_ii @ x - rhs).max()) if x.size else 0.0
    scale = max(1.0, float(np.abs(rhs).max()) if rhs.size else 1.0)
    if residual > RESIDUAL_TOL * scale:
        logger.warning("solver: interior residual %.3g above tolerance", residual)
    out = uv.copy()
    out[interior] = x
    return out


@dataclass
class FixedPointResult:
    map: ParamMap
    harmonic: ParamMap
    energies: List[float] = field(default_factory=list)


def fixed_point_init(
    mesh: TriMesh,
    segments: BoundarySegments,
    cfg: Optional[SolverConfig] = None,
    rho: Optional[AreaMeasure] = None,
) -> FixedPointResult:
    """Repeatedly solve L_II f_I = -L_IB f_B with L rebuilt from the latest map.

    Round 0 uses the plain cotangent Laplacian of the surface and yields the
    harmonic map.
    """
    cfg = cfg or SolverConfig()
    n = mesh.n_vertices
    layout = ConstraintLayout(segments, n)
    if layout.interior.size == 0:
        raise SolverError("disk has no interior vertices")
    boundary = segments.boundary
    uv = initial_boundary(segments, n=n).uv.copy()

    L, _ = weighted_cot_laplacian(mesh.faces, mesh.vertices, mesh.face_areas, n)
    harmonic: Optional[ParamMap] = None
    energies: List[float] = []
    for rnd in range(cfg.fpm_iters + 1):
        if rnd > 0:
            L = stretch_laplacian(mesh, uv, rho)
        uv = _solve_interior(L, uv, layout.interior, boundary)
        if harmonic is None:
            harmonic = ParamMap(uv, segments)
        energies.append(stretch_energy(mesh, uv, rho))
        logger.debug("fpm: round %d E_S=%.12g", rnd, energies[-1])
    assert harmonic is not None
    return FixedPointResult(map=ParamMap(uv, segments), harmonic=harmonic, energies=energies)


class Preconditioner:
    """Block diagonal M = diag(L_II, L_II, L_EE, L_FF) from the initial map, factored once."""

    def __init__(self, layout: ConstraintLayout, blocks: Dict[str, SPDFactor]) -> None:
        self.layout = layout
        self.blocks = blocks

    @property
    def regularized(self) -> bool:
        return any(b.regularized for b in self.blocks.values())

    def _routes(self):
        lay = self.layout
        return [
            (lay.s_i1, self.blocks["interior"]),
            (lay.s_i2, self.blocks["interior"]),
            (lay.s_e, self.blocks["E"]),
            (lay.s_f, self.blocks["F"]),
        ]

    def apply(self, g: np.ndarray) -> np.ndarray:
        h = np.zeros_like(np.asarray(g, dtype=np.float64))
        for sl, block in self._routes():
            h[sl] = block.solve(g[sl])
        return h

    def matvec(self, h: np.ndarray) -> np.ndarray:
        g = np.zeros_like(np.asarray(h, dtype=np.float64))
        for sl, block in self._routes():
            g[sl] = block.A @ h[sl] + block.shift * h[sl]
        return g

    def fingerprint(self) -> str:
        return "-".join(self.blocks[k].fingerprint()[:16] for k in ("interior", "E", "F"))


def build_preconditioner(
    mesh: TriMesh,
    f0: ParamMap,
    segments: BoundarySegments,
    rho: Optional[AreaMeasure] = None,
    *,
    backend: Optional[str] = None,
) -> Preconditioner:
    layout = ConstraintLayout(segments, mesh.n_vertices)
    L = stretch_laplacian(mesh, f0, rho)

    def block(idx: np.ndarray, label: str) -> SPDFactor:
        return SPDFactor(L[idx][:, idx], backend=backend, label=label)

    return Preconditioner(
        layout,
        {
            "interior": block(layout.interior, "interior block"),
            "E": block(layout.e_inner, "E block"),
            "F": block(layout.f_inner, "F block"),
        },
    )


def apply_preconditioner(P: Preconditioner, g: np.ndarray) -> np.ndarray:
    return P.apply(g)


def quadratic_step(phi0: float, dphi0: float, alpha_prev: float, phi_at_prev: float) -> float:
    """Minimiser of the parabola through phi(0), phi'(0) and phi(alpha_prev)."""
    denom = 2.0 * (phi_at_prev - dphi0 * alpha_prev - phi0)
    fallback = alpha_prev / 2.0
    if not math.isfinite(denom) or denom <= 0.0:
        return fallback
    alpha = -dphi0 * alpha_prev**2 / denom
    if not math.isfinite(alpha) or not 0.0 < alpha <= 10.0 * alpha_prev:
        return fallback
    return alpha


@dataclass
class LineSearchResult:
    alpha: float
    value: float
    reinterps: int
    armijo: bool
    flagged: bool


def line_search(
    phi: Callable[[float], float],
    phi0: float,
    dphi0: float,
    alpha_prev: float,
    cfg: SolverConfig,
) -> LineSearchResult:
    def sufficient(alpha: float, value: float) -> bool:
        return math.isfinite(value) and value <= phi0 + cfg.wolfe_c1 * alpha * dphi0

    alpha = quadratic_step(phi0, dphi0, alpha_prev, phi(alpha_prev))
    value = phi(alpha)
    reinterps = 0
    while not sufficient(alpha, value) and reinterps < cfg.reinterp_max:
        alpha = quadratic_step(phi0, dphi0, alpha, value)
        value = phi(alpha)
        reinterps += 1
    if sufficient(alpha, value):
        return LineSearchResult(alpha, value, reinterps, True, False)
    alpha /= 2.0
    value = phi(alpha)
    logger.warning("pcg: no sufficient decrease after %d re-interpolations, halved step to %.3g", reinterps, alpha)
    return LineSearchResult(alpha, value, reinterps, False, True)


@dataclass
class PCGResult:
    map: ParamMap
    harmonic: ParamMap
    initial: ParamMap
    trajectory: pd.DataFrame
    stop_reason: str
    fixed_point_energies: List[float]
    flagged_steps: int = 0
    restarts: int = 0
    preconditioner_regularized: bool = False
    fingerprints: tuple = ()

    @property
    def iterations(self) -> int:
        return len(self.trajectory) - 1


def _trajectory_row(
    k: int, mesh: TriMesh, uv: np.ndarray, e_s: float, grad_norm: float, **step
) -> Dict[str, object]:
    stats = ratio_statistics(mesh, uv)
    row: Dict[str, object] = {
        "iter": k,
        "E_S": e_s,
        "E_A": stats.E_A,
        "A(f)": stats.image_area,
        "weighted_variance": stats.weighted_variance,
        "unweighted_variance": stats.unweighted_variance,
        "variance_bound": stats.variance_bound,
        "R_mean": stats.R_mean,
        "R_SD": stats.R_SD,
        "folds": count_folded(mesh, uv).count,
        "alpha": step.get("alpha", 0.0),
        "grad_norm": grad_norm,
        "armijo": step.get("armijo", True),
        "curvature": step.get("curvature", True),
        "reinterps": step.get("reinterps", 0),
        "flagged": step.get("flagged", False),
        "restart": step.get("restart", False),
    }
    return row


def pcg_minimize(
    mesh: TriMesh,
    segments: BoundarySegments,
    cfg: Optional[SolverConfig] = None,
    rho: Optional[AreaMeasure] = None,
    *,
    backend: Optional[str] = None,
) -> PCGResult:
    """Fixed-point start, then preconditioned nonlinear CG on E_S over the free variables."""
    cfg = cfg or SolverConfig()
    layout = ConstraintLayout(segments, mesh.n_vertices)
    fp = fixed_point_init(mesh, segments, cfg, rho)
    precond = build_preconditioner(mesh, fp.map, segments, rho, backend=backend)
    fingerprint_start = precond.fingerprint()

    def energy_of(x: np.ndarray) -> float:
        return stretch_energy(mesh, layout.unpack(x), rho)

    def gradient_of(x: np.ndarray) -> np.ndarray:
        return layout.reduce(full_gradient(mesh, layout.unpack(x), rho))

    x = layout.project(layout.pack(fp.map))
    e_s = energy_of(x)
    g = gradient_of(x)
    h = precond.apply(g)
    hg = float(h @ g)
    p = -h
    rows = [_trajectory_row(0, mesh, layout.unpack(x), e_s, math.sqrt(max(hg, 0.0)))]
    alpha_prev = cfg.alpha0
    reason = "max_iters"
    flagged_steps = 0
    restarts = 0

    for k in range(1, cfg.max_iters + 1):
        if math.sqrt(max(hg, 0.0)) < cfg.grad_tol:
            reason = "gradient"
            break
        dphi0 = float(g @ p)
        restart = False
        if not dphi0 < 0.0:
            p = -h
            dphi0 = -hg
            restart = True
            restarts += 1
        x_k, p_k = x, p
        ls = line_search(lambda a: energy_of(x_k + a * p_k), e_s, dphi0, alpha_prev, cfg)
        if not math.isfinite(ls.value):
            logger.error("pcg: non-finite energy at iteration %d, keeping last finite iterate", k)
            reason = "non_finite"
            break
        x_new = layout.project(x + ls.alpha * p)
        e_new = ls.value
        g_new = gradient_of(x_new)
        h_new = precond.apply(g_new)
        hg_new = float(h_new @ g_new)
        armijo = e_new - e_s <= cfg.wolfe_c1 * ls.alpha * dphi0
        curvature = abs(float(g_new @ p)) <= cfg.wolfe_c2 * abs(dphi0)
        beta = hg_new / hg if cfg.cg_memory and hg > 0.0 else 0.0
        p = -h_new + beta * p
        deficit = e_s - e_new
        x, e_s, g, h, hg = x_new, e_new, g_new, h_new, hg_new
        alpha_prev = ls.alpha
        flagged_steps += int(ls.flagged)
        rows.append(
            _trajectory_row(
                k, mesh, layout.unpack(x), e_s, math.sqrt(max(hg, 0.0)),
                alpha=ls.alpha, armijo=bool(armijo), curvature=bool(curvature),
                reinterps=ls.reinterps, flagged=ls.flagged, restart=restart,
            )
        )
        logger.debug("pcg: iter %d E_S=%.12g E_A=%.3e alpha=%.3g", k, e_s, rows[-1]["E_A"], ls.alpha)
        if 0.0 <= deficit < cfg.energy_tol:
            reason = "energy"
            break

    fingerprint_end = precond.fingerprint()
    trajectory = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    logger.info(
        "pcg: stopped (%s) after %d iteration(s), E_A=%.3e R_SD=%.3e",
        reason, len(rows) - 1, rows[-1]["E_A"], rows[-1]["R_SD"],
    )
    return PCGResult(
        map=ParamMap(layout.unpack(x), segments),
        harmonic=fp.harmonic,
        initial=fp.map,
        trajectory=trajectory,
        stop_reason=reason,
        fixed_point_energies=fp.energies,
        flagged_steps=flagged_steps,
        restarts=restarts,
        preconditioner_regularized=precond.regularized,
        fingerprints=(fingerprint_start, fingerprint_end),
    )
