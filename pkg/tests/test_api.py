from __future__ import annotations

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from conftest import action, plan
from tablescout.api import ApiConfig, create_app


@pytest.fixture
def corpus_dir(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "people.csv").write_text("person_id,name,city\n1,Ada,chicago\n2,Bo,boston\n3,Cy,chicago\n")
    (src / "orders.csv").write_text("order_id,person_id,total\n10,1,99.5\n11,3,7.25\n")
    return tmp_path


@pytest.fixture
def client(corpus_dir):
    app = create_app(ApiConfig(corpus_root=str(corpus_dir / "corpus")))
    with TestClient(app) as c:
        c.src = corpus_dir / "src"
        yield c


def _setup_dataset(client) -> None:
    r = client.post("/corpora", json={"path": str(client.src), "dataset_id": "demo"})
    assert r.status_code == 200, r.text
    assert len(r.json()["tables"]) == 2
    r = client.post("/corpora/demo/index")
    assert r.status_code == 200
    assert r.json()["tables"] == 2


E2E_REPLIES = [
    {
        "content": plan(
            "model, materialize, execute, reply",
            [
                action(
                    "model_update",
                    add_views=[
                        {
                            "view_id": "folks",
                            "columns": [
                                {"name": "name", "declared_type": "text", "description": "name"},
                                {"name": "city", "declared_type": "text", "description": "city"},
                            ],
                        }
                    ],
                    set_transformation={
                        "kind": "sql",
                        "body": "SELECT city, count(*) AS n FROM folks GROUP BY city ORDER BY city",
                        "declared_inputs": ["folks"],
                    },
                ),
                action("materialize"),
                action("executor"),
                action("user_communicate", content="Counted cities.", kind="answer", answer="2"),
            ],
        )
    },
    {
        "content": plan(
            "project",
            [action("projection", input="people", columns=["name", "city"], bind_view="folks")],
        )
    },
    {"content": "Chicago has two residents, Boston one."},
]


def test_create_session_then_empty_model(client):
    _setup_dataset(client)
    r = client.post("/sessions", json={"dataset": "demo"})
    assert r.status_code == 200
    sid = r.json()["session_id"]
    r = client.get(f"/sessions/{sid}/model")
    assert r.status_code == 200
    body = r.json()
    assert body["model"]["revision"] == 0
    assert body["model"]["views"] == []


def test_scripted_message_and_document(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo", "replies": E2E_REPLIES}).json()[
        "session_id"
    ]
    r = client.post(f"/sessions/{sid}/messages", json={"text": "city counts?"})
    assert r.status_code == 200
    body = r.json()
    assert body["reply"] == "Counted cities."
    assert body["document_ref"] == f"/sessions/{sid}/document"
    doc = client.get(f"/sessions/{sid}/document").json()
    assert doc["rows"] == [["boston", 1], ["chicago", 2]]
    model = client.get(f"/sessions/{sid}/model").json()
    assert model["model"]["views"][0]["status"] == "materialized"
    assert len(model["samples"]["folks"]["rows"]) == 3  # 5-row cap, table has 3


def test_model_revision_history_endpoint(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo", "replies": E2E_REPLIES}).json()[
        "session_id"
    ]
    client.post(f"/sessions/{sid}/messages", json={"text": "go"})
    latest = client.get(f"/sessions/{sid}/model").json()["model"]
    assert latest["revision"] >= 2
    r0 = client.get(f"/sessions/{sid}/model", params={"revision": 0})
    assert r0.status_code == 200
    assert r0.json()["model"]["views"] == []
    missing = client.get(f"/sessions/{sid}/model", params={"revision": 99})
    assert missing.status_code == 404


def test_provenance_and_script_endpoints(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo", "replies": E2E_REPLIES}).json()[
        "session_id"
    ]
    client.post(f"/sessions/{sid}/messages", json={"text": "go"})
    graph = client.get(f"/sessions/{sid}/provenance").json()
    kinds = {n["kind"] for n in graph["nodes"]}
    assert kinds == {"source_table", "transformation"}
    script = client.get(f"/sessions/{sid}/provenance/script")
    assert script.status_code == 200
    assert script.text.startswith("-- derivation script")
    assert "-- final transformation (sql)" in script.text


def test_usage_endpoint(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo", "replies": E2E_REPLIES}).json()[
        "session_id"
    ]
    client.post(f"/sessions/{sid}/messages", json={"text": "go"})
    usage = client.get(f"/sessions/{sid}/usage").json()
    assert usage["input_tokens"] > 0
    assert usage["output_tokens"] > 0


def test_unknown_ids_404(client):
    _setup_dataset(client)
    assert client.get("/sessions/nope/model").status_code == 404
    assert client.post("/sessions/nope/messages", json={"text": "x"}).status_code == 404
    assert client.post("/sessions", json={"dataset": "ghost"}).status_code == 404
    assert client.post("/corpora/ghost/index").status_code == 404


def test_409_while_in_flight(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo"}).json()["session_id"]
    engine = client.app.state.engine
    session, _ = engine.get_session(sid)
    session.in_flight = True
    r = client.post(f"/sessions/{sid}/messages", json={"text": "second"})
    assert r.status_code == 409
    session.in_flight = False


def test_409_under_concurrency(client, monkeypatch):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo"}).json()["session_id"]
    engine = client.app.state.engine
    _, conductor = engine.get_session(sid)

    def slow_turn(session, text):
        time.sleep(0.6)
        return "slow done"

    monkeypatch.setattr(conductor, "handle_message", slow_turn)
    codes = []

    def fire():
        codes.append(client.post(f"/sessions/{sid}/messages", json={"text": "x"}).status_code)

    t1 = threading.Thread(target=fire)
    t1.start()
    time.sleep(0.2)
    status = client.get(f"/sessions/{sid}/status").json()
    fire_second = client.post(f"/sessions/{sid}/messages", json={"text": "y"})
    t1.join()
    assert status["in_flight"] is True
    assert fire_second.status_code == 409
    assert codes == [200]


def test_restart_preserves_sessions(corpus_dir):
    root = str(corpus_dir / "corpus")
    app1 = create_app(ApiConfig(corpus_root=root))
    with TestClient(app1) as c1:
        c1.post("/corpora", json={"path": str(corpus_dir / "src"), "dataset_id": "demo"})
        c1.post("/corpora/demo/index")
        sid = c1.post("/sessions", json={"dataset": "demo", "replies": E2E_REPLIES}).json()[
            "session_id"
        ]
        c1.post(f"/sessions/{sid}/messages", json={"text": "go"})
        doc1 = c1.get(f"/sessions/{sid}/document").json()

    app2 = create_app(ApiConfig(corpus_root=root))  # a fresh process, logically
    with TestClient(app2) as c2:
        doc2 = c2.get(f"/sessions/{sid}/document").json()
        assert doc2["rows"] == doc1["rows"]
        model = c2.get(f"/sessions/{sid}/model").json()
        assert model["model"]["views"][0]["view_id"] == "folks"
        usage = c2.get(f"/sessions/{sid}/usage").json()
        assert usage["input_tokens"] > 0


def test_auth_token_enforced(corpus_dir):
    app = create_app(ApiConfig(corpus_root=str(corpus_dir / "corpus"), auth_token="sesame"))
    with TestClient(app) as c:
        assert c.get("/corpora").status_code == 401
        assert c.get("/corpora", headers={"Authorization": "Bearer wrong"}).status_code == 401
        assert c.get("/corpora", headers={"Authorization": "Bearer sesame"}).status_code == 200


def test_document_404_before_any_turn(client):
    _setup_dataset(client)
    sid = client.post("/sessions", json={"dataset": "demo"}).json()["session_id"]
    assert client.get(f"/sessions/{sid}/document").status_code == 404
    assert client.get(f"/sessions/{sid}/provenance/script").status_code == 404


def test_duplicate_dataset_409(client):
    _setup_dataset(client)
    r = client.post("/corpora", json={"path": str(client.src), "dataset_id": "demo"})
    assert r.status_code == 409
    assert r.json()["error"] == "duplicate_dataset_id"
