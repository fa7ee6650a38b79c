from __future__ import annotations

import logging
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap.config import (
    SolverConfig,
    configure_logging,
    factor_backend,
    make_solver_config,
    solver_config_from_env,
)
from squaremap.errors import (
    ConfigError,
    GeometryImageError,
    MeshFormatError,
    SquareMapError,
    UsageError,
    error_payload,
)

ENV_VARS = [
    "SQUAREMAP_MAX_ITERS",
    "SQUAREMAP_FPM_ITERS",
    "SQUAREMAP_ENERGY_TOL",
    "SQUAREMAP_GRAD_TOL",
    "SQUAREMAP_REINTERP_MAX",
    "SQUAREMAP_ALPHA0",
    "SQUAREMAP_FACTOR_BACKEND",
]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    cfg = solver_config_from_env()
    assert cfg == SolverConfig()
    assert cfg.max_iters == 200
    assert cfg.fpm_iters == 10
    assert cfg.energy_tol == 1e-6
    assert cfg.wolfe_c1 < cfg.wolfe_c2 < 0.5


def test_environment_overrides_defaults_and_flags_override_environment(monkeypatch):
    monkeypatch.setenv("SQUAREMAP_MAX_ITERS", "7")
    monkeypatch.setenv("SQUAREMAP_ENERGY_TOL", "1e-3")
    cfg = solver_config_from_env()
    assert cfg.max_iters == 7
    assert cfg.energy_tol == 1e-3
    assert solver_config_from_env(max_iters=3).max_iters == 3
    # None means "not given on the command line"
    assert solver_config_from_env(max_iters=None).max_iters == 7


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("SQUAREMAP_FPM_ITERS", "ten")
    with pytest.raises(ConfigError, match="SQUAREMAP_FPM_ITERS"):
        solver_config_from_env()


@pytest.mark.parametrize(
    "values",
    [
        {"wolfe_c1": 0.5, "wolfe_c2": 0.4},
        {"wolfe_c2": 0.6},
        {"energy_tol": 0.0},
        {"fpm_iters": -1},
    ],
)
def test_invalid_settings_raise_config_error(values):
    with pytest.raises(ConfigError):
        make_solver_config(**values)


def test_config_is_frozen():
    cfg = SolverConfig()
    with pytest.raises(Exception):
        cfg.max_iters = 5


def test_factor_backend(monkeypatch):
    assert factor_backend() == "auto"
    monkeypatch.setenv("SQUAREMAP_FACTOR_BACKEND", "SuperLU")
    assert factor_backend() == "superlu"
    monkeypatch.setenv("SQUAREMAP_FACTOR_BACKEND", "mkl")
    with pytest.raises(ConfigError):
        factor_backend()


def test_configure_logging_installs_one_handler():
    configure_logging("DEBUG")
    configure_logging("INFO")
    root = logging.getLogger("squaremap")
    assert root.level == logging.INFO
    assert sum(getattr(h, "_squaremap", False) for h in root.handlers) == 1
    configure_logging("WARNING")


def test_error_payloads_and_exit_status():
    payload = error_payload(MeshFormatError("bad face"))
    assert payload == {"error": {"type": "MeshFormatError", "code": "mesh_format", "message": "bad face"}}
    assert error_payload(ValueError("x"))["error"]["code"] == "internal"
    assert UsageError.exit_status == 2
    assert GeometryImageError.exit_status == 1
    assert issubclass(ConfigError, SquareMapError)
