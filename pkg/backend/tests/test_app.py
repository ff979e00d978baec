import pytest

from app import app


@pytest.fixture
def client():
    app.config["TESTING"] = True
    with app.test_client() as client:
        yield client


def test_index_lists_protocols_and_tools(client):
    response = client.get("/")
    assert response.status_code == 200
    data = response.get_json()
    assert data["protocols"] == ["p2", "p3", "p4"]
    assert "Delegation_Runner" in data["tools"]
    assert response.headers["Access-Control-Allow-Origin"] == "*"


def test_scenarios_are_served_as_circuit_json(client):
    data = client.get("/api/scenarios").get_json()
    assert sorted(data) == ["grover3", "qaoa3", "qnn3"]
    assert len(data["grover3"]["gates"]) == 22


def test_nondetection_endpoint(client):
    data = client.get("/api/nondetection?N=1&Nprime=1&n=1000&gates=4&verifier_gates=4").get_json()
    assert data["success"]
    assert data["log10_nondetection"] == pytest.approx(-301.03, abs=0.01)
    assert data["gate_nondetection"] == pytest.approx(data["nondetection"])


@pytest.mark.parametrize("query", ["N=0&Nprime=1&n=1", "N=1&n=1", "N=x&Nprime=1&n=1"])
def test_nondetection_rejects_bad_queries(client, query):
    response = client.get(f"/api/nondetection?{query}")
    assert response.status_code == 400
    assert response.get_json()["success"] is False


def test_run_endpoint_reports_fidelity(client):
    response = client.post("/api/run", json={"scenario": "grover3", "protocol": "p2", "seed": 1, "shots": 50})
    assert response.status_code == 200
    data = response.get_json()
    assert data["fidelity"] == pytest.approx(1.0, abs=1e-10)
    assert sum(data["counts"].values()) == 50
    assert set(data["counts"]) <= {"101", "110"}
    assert data["summary"]["protocol"] == "p2"


def test_run_endpoint_zero_client(client):
    response = client.post("/api/run", json={"scenario": "qaoa3", "protocol": "p4", "seed": 2})
    data = response.get_json()
    assert data["fidelity"] == pytest.approx(1.0, abs=1e-10)
    assert data["summary"]["max_client_holdings"] == 0
    assert "counts" not in data


@pytest.mark.parametrize(
    "payload",
    [{"scenario": "nosuch"}, {"protocol": "p9"}, {"shots": 10 ** 6}, {"scenario": "qaoa3", "angles": [1.0]}],
)
def test_run_endpoint_rejects_bad_requests(client, payload):
    response = client.post("/api/run", json=payload)
    assert response.status_code == 400
    assert response.get_json()["success"] is False


def test_unknown_tool_stream(client):
    response = client.get("/run/NoSuchTool")
    assert response.mimetype == "text/event-stream"
    assert b"not found" in response.data
