import pytest
from fastapi.testclient import TestClient

from app.main import app

RUN_BODY = {
    "name": "api-run",
    "data": {"synthetic": {"kind": "linear_homoscedastic", "n": 120, "d": 1}},
    "methods": [{"name": "ridge_cp"}],
    "n_splits": 2,
}


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_list_methods(client):
    body = client.get("/api/methods").json()
    assert len(body) == 21
    assert {"name", "family", "conformal", "description"} <= set(body[0])


def test_run_lifecycle(client, tmp_path):
    resp = client.post("/api/runs", json=RUN_BODY)
    assert resp.status_code == 202
    run_id = resp.json()["run_id"]

    status = client.get(f"/api/runs/{run_id}").json()
    assert status["status"] == "completed"
    assert status["progress_percent"] == 100
    assert status["output_dir"].startswith(str(tmp_path / "results"))

    results = client.get(f"/api/runs/{run_id}/results").json()
    assert len(results["rows"]) == 2
    assert results["aggregate"][0]["method"] == "ridge_cp"


def test_unknown_method_is_unprocessable(client):
    resp = client.post("/api/runs", json={**RUN_BODY, "methods": [{"name": "svm"}]})
    assert resp.status_code == 422


def test_invalid_config_is_unprocessable(client):
    resp = client.post("/api/runs", json={**RUN_BODY, "alpha": 1.5})
    assert resp.status_code == 422


def test_unknown_run(client):
    assert client.get("/api/runs/nope").status_code == 404
    assert client.get("/api/runs/nope/results").status_code == 404


def test_results_of_running_run_conflict(client):
    from app.services.run_registry import get_run_registry

    record = get_run_registry().create("pending")
    assert client.get(f"/api/runs/{record.run_id}/results").status_code == 409
    get_run_registry().update(record.run_id, status="failed", error="boom")
    resp = client.get(f"/api/runs/{record.run_id}/results")
    assert resp.status_code == 422 and resp.json()["detail"] == "boom"


def test_non_finite_values_serialize_as_strings():
    from app.api.runs import _json_safe

    assert _json_safe({"rows": [{"mean_width": float("inf")}]}) == {"rows": [{"mean_width": "inf"}]}
