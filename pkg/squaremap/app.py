from __future__ import annotations

import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional

import pandas as pd
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .codecs import codecs_status
from .config import factor_backend
from .errors import SquareMapError, UsageError, error_payload
from .generators import is_generator_spec
from .linalg import HAS_CHOLMOD
from .pipeline import PipelineOptions, PipelineSummary, run_pipeline

logger = logging.getLogger(__name__)

app = FastAPI(title="Square Map", version="0.1.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class ParamRequest(BaseModel):
    input: str = Field(..., description="generator spec such as 'icosphere:3' or 'torus:24x24'")
    genus: Optional[int] = Field(default=None, ge=0, le=1)
    rho: Literal["area", "const"] = "area"
    max_iters: Optional[int] = Field(default=None, ge=0)
    fpm_iters: Optional[int] = Field(default=None, ge=0)
    force_correction: bool = False
    seed: Optional[int] = None
    jitter: float = Field(default=0.0, ge=0.0)
    trajectory_rows: int = Field(default=0, ge=0, description="leading trajectory rows to return")


class ParamResponse(BaseModel):
    summary: PipelineSummary
    trajectory: List[Dict[str, Any]] = Field(default_factory=list)


# request key -> response payload, oldest entries evicted first
_CACHE: Dict[str, Any] = {}
CACHE_SIZE = max(1, int(os.getenv("SQUAREMAP_CACHE_SIZE", "64")))


def cache_key(req: ParamRequest) -> str:
    return req.model_dump_json()


@app.exception_handler(SquareMapError)
async def squaremap_error_handler(request: Request, exc: SquareMapError):
    status = 400 if isinstance(exc, UsageError) else 422
    return JSONResponse(status_code=status, content=error_payload(exc))


@app.get("/health")
def health():
    return {"ok": True}


@app.get("/codecs")
def codecs():
    return {
        "codecs": codecs_status(),
        "factorization": {"cholmod": HAS_CHOLMOD, "backend": factor_backend()},
    }


def _records(frame: pd.DataFrame, rows: int) -> List[Dict[str, Any]]:
    head = frame.head(rows).drop(columns=["fold_faces"], errors="ignore")
    return json.loads(head.to_json(orient="records", double_precision=15))


@app.post("/param", response_model=ParamResponse)
def param(req: ParamRequest, response: Response):
    if not is_generator_spec(req.input):
        raise UsageError(f"input must be a generator spec, got {req.input!r}")
    key = cache_key(req)
    if key in _CACHE:
        response.headers["X-Cache"] = "hit"
        return _CACHE[key]

    options = PipelineOptions(
        input=req.input,
        genus=req.genus,
        rho=req.rho,
        max_iters=req.max_iters,
        fpm_iters=req.fpm_iters,
        force_correction=req.force_correction,
        seed=req.seed,
        jitter=req.jitter,
    )
    logger.info("app: running pipeline for %s", req.input)
    report = run_pipeline(options)
    payload = ParamResponse(
        summary=report.summary,
        trajectory=_records(report.trajectory, req.trajectory_rows),
    ).model_dump()
    while len(_CACHE) >= CACHE_SIZE:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = payload
    response.headers["X-Cache"] = "miss"
    return payload
