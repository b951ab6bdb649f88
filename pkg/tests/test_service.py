"""HTTP surface: endpoints, error mapping, steering sessions."""

import pytest
from fastapi.testclient import TestClient

from dissect.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def params(nx=3, ny=3, nz=3, degree=2, case="trig"):
    return {"nx": nx, "ny": ny, "nz": nz, "degree": degree, "case": case}


def test_service_info(client):
    resp = client.get("/")
    assert resp.status_code == 200
    body = resp.json()
    assert body["name"] == "dissect"
    assert "POST /solve" in body["endpoints"]


def test_mesh_generate_schema(client):
    resp = client.post("/mesh/generate", json=params(2, 2, 2, 1))
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["n_dofs"] == 1
    assert len(doc["elements"]) == 8
    rec = doc["elements"][0]
    n = len(rec["dofs"])
    assert len(rec["k_lower"]) == n * (n + 1) // 2
    assert len(rec["f"]) == n


def test_solve_seq_and_par_agree_bitwise(client):
    seq = client.post(
        "/solve", json={"mesh": {"params": params()}, "options": {"mode": "seq"}}
    )
    par = client.post(
        "/solve",
        json={
            "mesh": {"params": params()},
            "options": {"mode": "par", "workers": 4, "traders": 2},
        },
    )
    assert seq.status_code == 200 and par.status_code == 200
    assert seq.json()["solution"] == par.json()["solution"]
    assert len(par.json()["traces"]) == par.json()["n_nodes"]
    metrics = par.json()["metrics"]
    assert metrics["n_workers"] == 4
    assert "frac_above_0.9" in metrics


def test_solve_accepts_mesh_document(client):
    doc = client.post("/mesh/generate", json=params(2, 2, 2, 2)).json()
    resp = client.post(
        "/solve", json={"mesh": {"document": doc}, "options": {"mode": "seq"}}
    )
    assert resp.status_code == 200
    assert resp.json()["n_dofs"] == doc["n_dofs"]


def test_verify_endpoint(client):
    resp = client.post("/verify", json={"mesh": {"params": params(4, 4, 4, 1)}})
    assert resp.status_code == 200
    body = resp.json()
    assert body["passed"] is True
    assert body["max_rel_error"] <= 1e-8
    assert body["residual_rel"] <= 1e-8


def test_resolve_roundtrip_via_cache_blob(client):
    solve = client.post(
        "/solve",
        json={
            "mesh": {"params": params(2, 2, 2, 2)},
            "options": {"mode": "seq"},
            "include_cache": True,
        },
    ).json()
    resolve = client.post(
        "/resolve",
        json={
            "cache_b64": solve["cache_b64"],
            "modifications": [{"element_id": 3, "factor": 2.0}],
        },
    )
    assert resolve.status_code == 200
    body = resolve.json()
    assert body["recompute_count"] == 2  # leaf + root on the 2x2x2 tree
    scratch = client.post(
        "/solve",
        json={"mesh": {"params": params(2, 2, 2, 2)}, "options": {"mode": "seq"}},
    ).json()
    assert len(body["solution"]) == len(scratch["solution"])
    assert body["solution"] != scratch["solution"]  # the modification did act


def test_resolve_without_modifications_is_noop(client):
    solve = client.post(
        "/solve",
        json={
            "mesh": {"params": params(2, 2, 2, 2)},
            "options": {"mode": "seq"},
            "include_cache": True,
        },
    ).json()
    resolve = client.post(
        "/resolve", json={"cache_b64": solve["cache_b64"], "modifications": []}
    ).json()
    assert resolve["recompute_count"] == 0
    assert resolve["solution"] == solve["solution"]


def test_report_endpoint_alias_key(client):
    resp = client.post(
        "/report",
        json={
            "traces": [
                {"worker_id": 0, "task_id": 1, "start": 0, "end": 6},
                {"worker_id": 1, "task_id": 2, "start": 0, "end": 10},
            ]
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["frac_above_0.9"] == 0.5
    assert body["mean_omega"] == pytest.approx(0.8)


def test_static_levelcut_mode(client):
    resp = client.post(
        "/solve",
        json={
            "mesh": {"params": params(2, 2, 2, 2)},
            "options": {"mode": "static-levelcut", "workers": 3},
        },
    )
    assert resp.status_code == 200
    seq = client.post(
        "/solve",
        json={"mesh": {"params": params(2, 2, 2, 2)}, "options": {"mode": "seq"}},
    ).json()
    assert resp.json()["solution"] == seq["solution"]


# ---------------------------------------------------------------------------
# error mapping
# ---------------------------------------------------------------------------


def test_validation_errors_are_422(client):
    assert client.post("/solve", json={"mesh": {}}).status_code == 422
    assert (
        client.post(
            "/solve", json={"mesh": {"params": params(case="bogus")}}
        ).status_code
        == 422
    )
    both = {"params": params(), "document": {"n_dofs": 0, "elements": []}}
    assert client.post("/solve", json={"mesh": both}).status_code == 422


def test_module_errors_are_400(client):
    # duplicate centroids: two elements at the same place (non-separable)
    doc = {
        "n_dofs": 1,
        "elements": [
            {"id": 0, "dofs": [0], "k_lower": [2.0], "f": [1.0],
             "bbox": [[0, 0, 0], [1, 1, 1]]},
            {"id": 1, "dofs": [0], "k_lower": [2.0], "f": [1.0],
             "bbox": [[0, 0, 0], [1, 1, 1]]},
        ],
    }
    resp = client.post("/solve", json={"mesh": {"document": doc}})
    assert resp.status_code == 400
    assert resp.json()["error"] == "NonSeparableError"


def test_corrupt_cache_is_400(client):
    resp = client.post("/resolve", json={"cache_b64": "AAAA", "modifications": []})
    assert resp.status_code == 400


# ---------------------------------------------------------------------------
# steering sessions
# ---------------------------------------------------------------------------


def test_session_lifecycle(client):
    created = client.post("/sessions", json={"mesh": {"params": params(4, 4, 4, 2)}})
    assert created.status_code == 200
    sid = created.json()["session_id"]
    assert created.json()["n_dofs"] == 343

    first = client.post(
        f"/sessions/{sid}/resolve",
        json={"modifications": [{"element_id": 7, "factor": 3.0}]},
    )
    assert first.status_code == 200
    depth = created.json()["tree_depth"]
    assert first.json()["recompute_count"] == depth + 1
    assert first.json()["max_abs_change"] > 0.0

    # scaling back restores the original operator incrementally
    second = client.post(
        f"/sessions/{sid}/resolve",
        json={"modifications": [{"element_id": 7, "factor": 1.0 / 3.0}]},
    )
    assert second.status_code == 200

    info = client.get(f"/sessions/{sid}")
    assert info.json()["resolve_count"] == 2

    assert client.delete(f"/sessions/{sid}").status_code == 200
    assert client.get(f"/sessions/{sid}").status_code == 404


def test_session_unknown_id_is_404(client):
    assert client.get("/sessions/nope").status_code == 404
    assert (
        client.post("/sessions/nope/resolve", json={"modifications": []}).status_code
        == 404
    )


def test_session_resolve_matches_stateless_path(client):
    created = client.post(
        "/sessions", json={"mesh": {"params": params(2, 2, 2, 2)}}
    ).json()
    sid = created["session_id"]
    via_session = client.post(
        f"/sessions/{sid}/resolve",
        json={
            "modifications": [{"element_id": 0, "factor": 2.0}],
            "include_solution": True,
        },
    ).json()

    solve = client.post(
        "/solve",
        json={
            "mesh": {"params": params(2, 2, 2, 2)},
            "options": {"mode": "seq"},
            "include_cache": True,
        },
    ).json()
    stateless = client.post(
        "/resolve",
        json={
            "cache_b64": solve["cache_b64"],
            "modifications": [{"element_id": 0, "factor": 2.0}],
        },
    ).json()
    assert via_session["solution"] == stateless["solution"]
