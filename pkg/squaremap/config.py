from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ConfigError

load_dotenv(Path(__file__).resolve().parent / ".env")

ENV_PREFIX = "SQUAREMAP_"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


class SolverConfig(BaseModel):
    fpm_iters: int = Field(default=10, ge=0)
    max_iters: int = Field(default=200, ge=0)
    energy_tol: float = Field(default=1e-6, gt=0)
    grad_tol: float = Field(default=1e-8, gt=0)
    wolfe_c1: float = Field(default=1e-4, gt=0)
    wolfe_c2: float = Field(default=0.4, gt=0)
    alpha0: float = Field(default=1.0, gt=0)
    reinterp_max: int = Field(default=3, ge=0)
    # False resets the direction to -M^-1 g every step
    cg_memory: bool = True

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_wolfe(self) -> "SolverConfig":
        if not (self.wolfe_c1 < self.wolfe_c2 < 0.5):
            raise ValueError(
                f"wolfe constants need 0 < c1 < c2 < 0.5, got c1={self.wolfe_c1} c2={self.wolfe_c2}"
            )
        return self


# env var suffix -> (field, parser)
_ENV_FIELDS: Dict[str, tuple[str, Callable[[str], Any]]] = {
    "FPM_ITERS": ("fpm_iters", int),
    "MAX_ITERS": ("max_iters", int),
    "ENERGY_TOL": ("energy_tol", float),
    "GRAD_TOL": ("grad_tol", float),
    "REINTERP_MAX": ("reinterp_max", int),
    "ALPHA0": ("alpha0", float),
}


def make_solver_config(**values: Any) -> SolverConfig:
    try:
        return SolverConfig(**values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def solver_config_from_env(**overrides: Any) -> SolverConfig:
    """Defaults, then SQUAREMAP_* environment values, then explicit overrides."""
    values: Dict[str, Any] = {}
    for suffix, (field, parse) in _ENV_FIELDS.items():
        raw = os.getenv(ENV_PREFIX + suffix)
        if raw is None or raw == "":
            continue
        try:
            values[field] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX}{suffix}={raw!r}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_solver_config(**values)


def factor_backend() -> str:
    backend = (os.getenv(ENV_PREFIX + "FACTOR_BACKEND") or "auto").lower()
    if backend not in ("auto", "cholmod", "superlu"):
        raise ConfigError(f"unknown factorization backend {backend!r}")
    return backend


def configure_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv(ENV_PREFIX + "LOG_LEVEL") or "WARNING").upper()
    root = logging.getLogger("squaremap")
    root.setLevel(level)
    if not any(getattr(h, "_squaremap", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._squaremap = True  # type: ignore[attr-defined]
        root.addHandler(handler)
