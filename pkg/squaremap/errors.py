from __future__ import annotations

from typing import Any, Dict


class SquareMapError(Exception):
    """Base class for every failure the library reports on purpose."""

    code = "squaremap_error"
    exit_status = 1


class MeshFormatError(SquareMapError):
    code = "mesh_format"


class TopologyError(SquareMapError):
    code = "topology"


class SlicingError(SquareMapError):
    code = "slicing"


class ConstraintViolationError(SquareMapError):
    code = "constraint_violation"


class SolverError(SquareMapError):
    code = "solver"


class BijectivityError(SquareMapError):
    code = "bijectivity"


class GeometryImageError(SquareMapError):
    code = "geometry_image"


class ConfigError(SquareMapError):
    code = "config"


class UsageError(SquareMapError):
    code = "usage"
    exit_status = 2


def error_payload(exc: BaseException) -> Dict[str, Any]:
    """
    Keys:
      - error.type: exception class name
      - error.code: stable machine-readable code
      - error.message: human-readable message
    """
    code = getattr(exc, "code", "internal")
    return {
        "error": {
            "type": type(exc).__name__,
            "code": code,
            "message": str(exc),
        }
    }
