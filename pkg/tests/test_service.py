"""HTTP service: endpoint contracts, provenance, error mapping."""
import pytest
from fastapi.testclient import TestClient

from embodied_forge import __version__
from embodied_forge.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


def test_provenance_headers_and_body(client):
    r = client.post("/ringcheck", json={"lengths": [64], "dims": [16],
                                        "workers": [2], "seeds": [0]})
    assert r.status_code == 200
    body = r.json()
    prov = body["provenance"]
    assert prov["version"] == __version__
    assert len(prov["configHash"]) == 64
    assert r.headers["X-Forge-Version"] == __version__
    assert r.headers["X-Forge-Config-Hash"] == prov["configHash"]


def test_config_hash_tracks_parameters(client):
    a = client.post("/rope", json={"method": "linear", "scale": 2.0}).json()
    b = client.post("/rope", json={"method": "linear", "scale": 4.0}).json()
    assert a["provenance"]["configHash"] != b["provenance"]["configHash"]
    again = client.post("/rope", json={"method": "linear", "scale": 2.0}).json()
    assert again["provenance"]["configHash"] == a["provenance"]["configHash"]


def test_rope_endpoint_linear_remap(client):
    r = client.post("/rope", json={"method": "linear", "scale": 4.0,
                                   "positions": [100]})
    body = r.json()
    assert body["remappedPositions"]["100.0"] == 25.0
    assert body["temperature"] == 1.0


def test_ringcheck_endpoint_passes(client):
    r = client.post("/ringcheck", json={"lengths": [64, 128], "dims": [16],
                                        "workers": [1, 4], "seeds": [0]})
    body = r.json()
    assert body["passed"] and body["worstError"] < 1e-5
    assert all(c["residentRows"] == c["L"] // c["P"] for c in body["cases"])


def test_validation_errors_are_422(client):
    r = client.post("/gen", json={"nTraj": 0, "outDir": "/tmp/x"})
    assert r.status_code == 422
    r = client.post("/rope", json={"method": "warp"})
    assert r.status_code == 422
    assert "error" in r.json() or "detail" in r.json()


def test_missing_dataset_is_4xx_not_500(client, tmp_path):
    r = client.post("/stats", json={"trajDir": str(tmp_path / "nothing")})
    assert r.status_code == 422
    body = r.json()
    assert body["error"] == "ConfigError"


def test_eval_unknown_mode_rejected(client, small_dataset):
    r = client.post("/eval", json={"trajDir": str(small_dataset),
                                   "agent": "oracle", "mode": "telepathy"})
    assert r.status_code == 422


def test_stats_endpoint(client, small_dataset):
    r = client.post("/stats", json={"trajDir": str(small_dataset)})
    assert r.status_code == 200
    stats = r.json()["stats"]
    for key in ["# trajectory", "# avg subgoals", "# max subgoals",
                "# avg steps", "# max steps", "# avg token length",
                "# max token length"]:
        assert key in stats
    assert stats["# trajectory"] == 3


def test_qa_and_haystack_endpoints(client, small_dataset, tmp_path):
    qa_file = tmp_path / "qa.jsonl"
    r = client.post("/qa", json={"trajDir": str(small_dataset),
                                 "targetCount": 40, "seed": 2,
                                 "outFile": str(qa_file)})
    assert r.status_code == 200
    body = r.json()
    assert body["sampled"] <= 40 and qa_file.exists()
    assert body["dropped"] == 0

    r = client.post("/haystack", json={"trajDir": str(small_dataset),
                                       "qaFile": str(qa_file),
                                       "lengths": [2000], "depths": [0, 50],
                                       "outDir": str(tmp_path / "hay")})
    assert r.status_code == 200
    hay = r.json()
    assert hay["totalCells"] == 6  # 3 trajectories x 2 cells
    assert (tmp_path / "hay" / "grid.csv").exists()


def test_eval_endpoint_oracle(client, small_dataset):
    r = client.post("/eval", json={"trajDir": str(small_dataset),
                                   "agent": "oracle"})
    assert r.status_code == 200
    body = r.json()
    assert body["episodes"] == 3
    assert all(all(o["success"] for o in rep["planOutcomes"])
               for rep in body["reports"])
