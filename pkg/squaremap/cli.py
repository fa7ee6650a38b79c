from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import ValidationError

from . import generators
from .bijectivity import count_folded
from .codecs import get_codec
from .config import configure_logging
from .energy import ParamMap
from .errors import SquareMapError, UsageError, error_payload
from .geomimage import angular_correction, decode, encode
from .mesh import load_param_obj, save_obj
from .metrics import angle_histogram
from .pipeline import (
    PipelineOptions,
    run_pipeline,
    summary_json,
    write_image,
    write_map,
    write_summary,
    write_trajectory,
)
from .slicer import segments_from_corners, write_loops

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _split_out(value: str) -> str:
    """`img.png,img.json` names both files; the sidecar always sits next to the image."""
    return value.split(",")[0]


def _load_map(path: str):
    mesh, uv, header = load_param_obj(path)
    try:
        genus = int(header["genus"])
        corners = [int(c) for c in header["corners"].split()]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: map header needs '# genus' and '# corners' lines") from exc
    segments = segments_from_corners(mesh, corners, genus)
    return mesh, ParamMap(uv, segments), header


def cmd_param(args: argparse.Namespace) -> int:
    try:
        options = PipelineOptions(
            input=args.input,
            genus=args.genus,
            loops=args.loops,
            rho=args.rho,
            max_iters=args.max_iters,
            fpm_iters=args.fpm_iters,
            energy_tol=args.tol,
            grad_tol=args.grad_tol,
            force_correction=args.force_correction,
            seed=args.seed,
            jitter=args.jitter,
            threads=args.threads,
            gimg=args.gimg,
            codec=args.codec,
            delta=args.delta,
            timing=args.timing,
            backend=args.backend,
        )
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    report = run_pipeline(options)
    if args.out:
        write_map(report, args.out)
    if args.flat_out:
        write_map(report, args.flat_out, flat=True)
    if args.report:
        write_trajectory(report, args.report)
    if args.summary:
        write_summary(report, args.summary)
    if report.image is not None:
        target = args.gimg_out or (Path(args.out).with_suffix("") if args.out else Path("gimg"))
        write_image(report, target, args.codec)
    sys.stdout.write(summary_json(report.summary) + "\n")
    return 0


def cmd_gimg_encode(args: argparse.Namespace) -> int:
    mesh, f, _ = _load_map(args.map)
    extra: Dict[str, Any] = {}
    if args.delta is not None:
        correction = angular_correction(mesh, f, f.segments, args.delta)
        f = correction.map
        extra = {"max_mu_before": correction.before.max_abs, "max_mu_after": correction.after.max_abs}
    folds = count_folded(mesh, f).count
    if folds:
        logger.warning("gimg: map has %d folded face(s); encoding anyway", folds)
    img = encode(mesh, f, args.n, workers=args.threads)
    codec = get_codec(args.codec, _split_out(args.out))
    files = codec.write(img, _split_out(args.out))
    _emit({"N": img.resolution, "fallback_pixels": img.fallback_pixels, "folds": folds, "files": [str(p) for p in files], **extra})
    return 0


def cmd_gimg_decode(args: argparse.Namespace) -> int:
    codec = get_codec(args.codec, args.input)
    img = codec.read(args.input)
    mesh = decode(img, weld=not args.no_weld)
    save_obj(args.out, mesh)
    hist = angle_histogram(mesh)
    _emit(
        {
            "n_vertices": mesh.n_vertices,
            "n_faces": mesh.n_faces,
            "euler_characteristic": mesh.euler_characteristic,
            "closed": mesh.is_closed,
            "welded": bool(mesh.metadata.get("welded", False)),
            "angle_histogram": hist["count"].tolist(),
        }
    )
    return 0


def cmd_gimg_correct(args: argparse.Namespace) -> int:
    mesh, f, header = _load_map(args.map)
    correction = angular_correction(mesh, f, f.segments, args.delta)
    save_obj(args.out, mesh, correction.map.uv, header)
    _emit(
        {
            "delta": args.delta,
            "max_mu_before": correction.before.max_abs,
            "max_mu_after": correction.after.max_abs,
            "folds": correction.folds.count,
            "repaired": correction.repaired,
        }
    )
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    loops = None
    if args.shape == "icosphere":
        mesh = generators.icosphere(args.subdiv)
    elif args.shape == "ellipsoid":
        mesh = generators.ellipsoid(args.subdiv)
    elif args.shape == "torus":
        mesh, loops = generators.torus(args.nu, args.nv)
    else:
        mesh = generators.flat_grid(args.nx, args.ny)
    save_obj(args.out, mesh)
    payload: Dict[str, Any] = {"out": str(args.out), "n_vertices": mesh.n_vertices, "n_faces": mesh.n_faces}
    if loops is not None and args.loops_out:
        write_loops(args.loops_out, loops.loop_a, loops.loop_b)
        payload["loops"] = str(args.loops_out)
    _emit(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="squaremap", description="Area-preserving square parameterization and geometry images.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default) or ERROR")
    parser.add_argument("-v", "--verbose", action="store_true", help="same as --log-level INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("param", help="slice, parameterize and report")
    p.add_argument("--input", required=True, help="OBJ path or generator spec such as icosphere:3")
    p.add_argument("--genus", type=int, choices=(0, 1))
    p.add_argument("--loops", help="two lines of vertex indices for a genus-1 cut")
    p.add_argument("--rho", choices=("area", "const"), default="area")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--fpm-iters", type=int)
    p.add_argument("--tol", type=float, help="energy-deficit tolerance")
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--out", help="map OBJ (3D positions + per-vertex uv)")
    p.add_argument("--flat-out", help="map OBJ with (u, v, 0) positions")
    p.add_argument("--report", help="trajectory CSV")
    p.add_argument("--summary", help="summary JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter", type=float, default=0.0, help="vertex jitter for generator inputs, in mean edge lengths")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--force-correction", action="store_true")
    p.add_argument("--gimg", type=int, metavar="N", help="also encode an N x N geometry image")
    p.add_argument("--gimg-out")
    p.add_argument("--codec", default="png16")
    p.add_argument("--delta", type=float, help="cap |mu| before encoding the image")
    p.add_argument("--timing", action="store_true", help="include wall time in the summary")
    p.add_argument("--backend", choices=("auto", "cholmod", "superlu"))
    p.set_defaults(func=cmd_param)

    g = sub.add_parser("gimg", help="geometry images")
    gsub = g.add_subparsers(dest="gimg_command", required=True, parser_class=_Parser)
    enc = gsub.add_parser("encode")
    enc.add_argument("--map", required=True)
    enc.add_argument("--n", type=int, default=200)
    enc.add_argument("--out", required=True)
    enc.add_argument("--codec")
    enc.add_argument("--delta", type=float)
    enc.add_argument("--threads", type=int, default=1)
    enc.set_defaults(func=cmd_gimg_encode)
    dec = gsub.add_parser("decode")
    dec.add_argument("--in", dest="input", required=True)
    dec.add_argument("--out", required=True)
    dec.add_argument("--codec")
    dec.add_argument("--no-weld", action="store_true")
    dec.set_defaults(func=cmd_gimg_decode)
    cor = gsub.add_parser("correct")
    cor.add_argument("--map", required=True)
    cor.add_argument("--delta", type=float, default=0.8)
    cor.add_argument("--out", required=True)
    cor.set_defaults(func=cmd_gimg_correct)

    gen = sub.add_parser("gen", help="write a built-in mesh")
    gen.add_argument("shape", choices=("icosphere", "ellipsoid", "torus", "grid"))
    gen.add_argument("--subdiv", type=int, default=3)
    gen.add_argument("--nu", type=int, default=24)
    gen.add_argument("--nv", type=int, default=24)
    gen.add_argument("--nx", type=int, default=8)
    gen.add_argument("--ny", type=int)
    gen.add_argument("--out", required=True)
    gen.add_argument("--loops-out")
    gen.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        configure_logging("INFO" if args.verbose and not args.log_level else args.log_level)
        return int(args.func(args))
    except SquareMapError as exc:
        logger.error("cli: %s", exc)
        _emit(error_payload(exc))
        return exc.exit_status
    except Exception as exc:
        logger.exception("cli: unexpected failure")
        _emit(error_payload(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
