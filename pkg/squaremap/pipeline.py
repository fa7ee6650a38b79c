from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import generators
from .bijectivity import correct_overlaps, count_folded
from .codecs import get_codec
from .config import solver_config_from_env
from .energy import AreaMeasure, ParamMap, ratio_statistics
from .errors import TopologyError, UsageError
from .geomimage import GeometryImage, angular_correction, encode
from .mesh import TriMesh, genus_of_closed, load_mesh, normalize_to_unit_area, save_obj
from .slicer import CutPath, SlicedMesh, read_loops, slice_genus_one, slice_genus_zero
from .solver import PCGResult, pcg_minimize

logger = logging.getLogger(__name__)


class PipelineOptions(BaseModel):
    input: str
    genus: Optional[int] = Field(default=None, ge=0)
    loops: Optional[str] = None
    rho: Literal["area", "const"] = "area"
    max_iters: Optional[int] = None
    fpm_iters: Optional[int] = None
    energy_tol: Optional[float] = None
    grad_tol: Optional[float] = None
    force_correction: bool = False
    seed: Optional[int] = None
    jitter: float = Field(default=0.0, ge=0.0)
    threads: int = Field(default=1, ge=1)
    gimg: Optional[int] = Field(default=None, ge=2)
    codec: str = "png16"
    delta: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    timing: bool = False
    backend: Optional[Literal["auto", "cholmod", "superlu"]] = None


class PipelineSummary(BaseModel):
    """One row in the shape of a results table: time, E_A, R_area mean and SD, folds, iterations."""

    input: str
    genus: int
    rho: str
    n_vertices: int
    n_faces: int
    iterations: int
    stop_reason: str
    E_A: float
    E_S: float
    R_mean: float
    R_SD: float
    harmonic_R_SD: float
    folds_before: int
    folds_after: int
    corrected: bool
    flagged_steps: int
    restarts: int
    preconditioner_regularized: bool
    preconditioner_constant: bool
    gimg_fallback_pixels: Optional[int] = None
    max_mu_after: Optional[float] = None
    time_secs: Optional[float] = None


@dataclass
class PipelineReport:
    summary: PipelineSummary
    trajectory: pd.DataFrame
    disk: TriMesh
    map: ParamMap
    run: PCGResult
    fold_faces: List[int]
    image: Optional[GeometryImage] = None

    def at_input_scale(self) -> TriMesh:
        scale = float(self.disk.metadata.get("scale", 1.0))
        return TriMesh(self.disk.vertices / scale, self.disk.faces, self.disk.metadata, validate=False)


def load_input(options: PipelineOptions) -> Tuple[TriMesh, Optional[Tuple[CutPath, CutPath]]]:
    """Mesh from an OBJ path or a generator spec, plus the loops for a genus-1 cut if known."""
    loops: Optional[Tuple[CutPath, CutPath]] = None
    if generators.is_generator_spec(options.input):
        mesh, torus_loops = generators.from_spec(options.input)
        if options.jitter > 0:
            mesh = generators.jitter(mesh, options.jitter, np.random.default_rng(options.seed))
        if torus_loops is not None:
            loops = (CutPath(torus_loops.loop_a, closed=True), CutPath(torus_loops.loop_b, closed=True))
    else:
        mesh = load_mesh(options.input)
    if options.loops:
        loops = read_loops(options.loops)
    return mesh, loops


def slice_input(mesh: TriMesh, genus: int, loops: Optional[Tuple[CutPath, CutPath]]) -> SlicedMesh:
    if genus == 0:
        return slice_genus_zero(mesh)
    if genus == 1:
        if loops is None:
            raise UsageError("loops file required for genus 1")
        return slice_genus_one(mesh, *loops)
    raise TopologyError(f"genus {genus} is not supported (only 0 and 1)")


def run_pipeline(options: PipelineOptions) -> PipelineReport:
    """slice -> parameterize -> bijectivity repair -> optional geometry image."""
    started = time.perf_counter()
    builtin_torus = generators.is_generator_spec(options.input) and options.input.startswith("torus")
    if options.genus == 1 and not options.loops and not builtin_torus:
        raise UsageError("loops file required for genus 1")
    cfg = solver_config_from_env(
        max_iters=options.max_iters,
        fpm_iters=options.fpm_iters,
        energy_tol=options.energy_tol,
        grad_tol=options.grad_tol,
    )

    mesh, loops = load_input(options)
    detected = genus_of_closed(mesh)
    genus = detected if options.genus is None else options.genus
    if genus != detected:
        raise TopologyError(f"mesh has genus {detected}, not {genus}")
    mesh = normalize_to_unit_area(mesh)
    sliced = slice_input(mesh, genus, loops)
    disk, segments = sliced.mesh, sliced.segments
    rho = AreaMeasure.named(options.rho, disk)

    run = pcg_minimize(disk, segments, cfg, rho, backend=options.backend)
    f = run.map
    folds_before = count_folded(disk, f).count
    corrected = folds_before > 0 or options.force_correction
    if corrected:
        f = correct_overlaps(disk, f)
    folds = count_folded(disk, f)
    if folds.count:
        logger.warning("pipeline: %d fold(s) remain after correction", folds.count)

    stats = ratio_statistics(disk, f)
    harmonic_stats = ratio_statistics(disk, run.harmonic)
    trajectory = run.trajectory.copy()
    trajectory["fold_faces"] = ""
    trajectory.loc[trajectory.index[-1], "fold_faces"] = " ".join(str(int(t)) for t in folds.faces)

    summary = PipelineSummary(
        input=options.input,
        genus=genus,
        rho=options.rho,
        n_vertices=disk.n_vertices,
        n_faces=disk.n_faces,
        iterations=run.iterations,
        stop_reason=run.stop_reason,
        E_A=stats.E_A,
        E_S=float(run.trajectory["E_S"].iloc[-1]),
        R_mean=stats.R_mean,
        R_SD=stats.R_SD,
        harmonic_R_SD=harmonic_stats.R_SD,
        folds_before=folds_before,
        folds_after=folds.count,
        corrected=corrected,
        flagged_steps=run.flagged_steps,
        restarts=run.restarts,
        preconditioner_regularized=run.preconditioner_regularized,
        preconditioner_constant=run.fingerprints[0] == run.fingerprints[1],
    )
    report = PipelineReport(
        summary=summary, trajectory=trajectory, disk=disk, map=f, run=run, fold_faces=folds.as_list()
    )

    if options.gimg:
        image_map = f
        if options.delta is not None:
            correction = angular_correction(disk, f, segments, options.delta, harmonic=run.harmonic)
            image_map = correction.map
            summary.max_mu_after = correction.after.max_abs
        report.image = encode(report.at_input_scale(), image_map, options.gimg, workers=options.threads, genus=genus)
        summary.gimg_fallback_pixels = report.image.fallback_pixels

    if options.timing:
        summary.time_secs = time.perf_counter() - started
    logger.info(
        "pipeline: %s genus %d done in %d iteration(s), E_A=%.3e R_SD=%.3e folds %d->%d",
        options.input, genus, run.iterations, stats.E_A, stats.R_SD, folds_before, folds.count,
    )
    return report


def map_header(report: PipelineReport) -> Dict[str, object]:
    seg = report.map.segments
    return {
        "genus": report.summary.genus,
        "corners": " ".join(str(c) for c in seg.corners),
    }


def write_map(report: PipelineReport, path, *, flat: bool = False) -> Path:
    return save_obj(path, report.at_input_scale(), report.map.uv, map_header(report), flat=flat)


def write_trajectory(report: PipelineReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.trajectory.to_csv(path, index=False, float_format="%.17g")
    return path


def summary_json(summary: PipelineSummary) -> str:
    return summary.model_dump_json(indent=2, exclude_none=True)


def write_summary(report: PipelineReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(summary_json(report.summary) + "\n")
    return path


def write_image(report: PipelineReport, path, codec: str = "png16") -> List[Path]:
    if report.image is None:
        raise UsageError("no geometry image was computed (pass --gimg N)")
    return get_codec(codec).write(report.image, path)
