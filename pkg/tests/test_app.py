from __future__ import annotations

import sys
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap import app as app_module

pytestmark = pytest.mark.integration


@pytest.fixture
def client():
    app_module._CACHE.clear()
    with TestClient(app_module.app) as c:
        yield c
    app_module._CACHE.clear()


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"ok": True}


def test_codecs(client):
    body = client.get("/codecs").json()
    assert body["codecs"] == {"png16": True, "raw32": True}
    assert body["factorization"]["backend"] in ("auto", "cholmod", "superlu")
    assert isinstance(body["factorization"]["cholmod"], bool)


def test_param_runs_and_caches(client):
    req = {"input": "icosphere:1", "max_iters": 10, "trajectory_rows": 2}
    r = client.post("/param", json=req)
    assert r.status_code == 200
    assert r.headers["X-Cache"] == "miss"
    body = r.json()
    assert body["summary"]["genus"] == 0
    assert body["summary"]["folds_after"] == 0
    assert len(body["trajectory"]) == 2
    assert body["trajectory"][0]["iter"] == 0
    assert "fold_faces" not in body["trajectory"][0]

    again = client.post("/param", json=req)
    assert again.headers["X-Cache"] == "hit"
    assert again.json() == body


def test_param_rejects_file_paths(client):
    r = client.post("/param", json={"input": "/etc/passwd"})
    assert r.status_code == 400
    assert r.json()["error"]["code"] == "usage"


def test_param_reports_genus_mismatch(client):
    r = client.post("/param", json={"input": "torus:8x8", "genus": 0})
    assert r.status_code == 422
    assert r.json()["error"]["code"] == "topology"


def test_param_validates_request_body(client):
    r = client.post("/param", json={"input": "icosphere:1", "rho": "volume"})
    assert r.status_code == 422


def test_cache_evicts_oldest_entries(client, monkeypatch):
    monkeypatch.setattr(app_module, "CACHE_SIZE", 1)
    first = {"input": "icosphere:1", "max_iters": 1}
    second = {"input": "icosphere:1", "max_iters": 2}
    assert client.post("/param", json=first).headers["X-Cache"] == "miss"
    assert client.post("/param", json=second).headers["X-Cache"] == "miss"
    assert len(app_module._CACHE) == 1
    assert client.post("/param", json=first).headers["X-Cache"] == "miss"
