import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cloudcast.embeddings import EmbeddingMatrix, save_embedding_matrix
from cloudcast.projection import read_dmap, read_prec
from cloudcast.service import create_app


@pytest.fixture
def client():
    return TestClient(create_app())


def small_grid():
    return {
        "height": 16,
        "width": 16,
        "depth": 4,
        "scale": 0.9,
        "pool_window": [3, 3, 2],
        "gauss_size": [3, 3, 1],
        "out_size": [32, 32],
    }


def cloud_payload(rng, n=40):
    return rng.random((n, 3)).tolist()


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_project_endpoint(client, rng):
    payload = {
        "points": cloud_payload(rng),
        "grid": small_grid(),
        "views": {"preset": "six-ortho"},
        "include_raw": True,
    }
    resp = client.post("/project", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["maps"]) == 6
    assert body["config_hash"]
    pgm = base64.b64decode(body["maps"][0]["pgm_b64"])
    assert pgm.startswith(b"P5\n32 32\n255\n")
    dmap = base64.b64decode(body["maps"][0]["dmap_b64"])
    assert dmap.startswith(b"DMAP")
    prec = base64.b64decode(body["maps"][0]["prec_b64"])
    assert prec.startswith(b"PREC")


def test_project_rejects_empty_cloud(client):
    resp = client.post("/project", json={"points": [], "grid": small_grid()})
    assert resp.status_code == 422
    assert resp.json()["error"]["category"] == "usage"


def test_project_invalid_grid_maps_to_usage(client, rng):
    grid = small_grid()
    grid["scale"] = 2.0
    resp = client.post("/project", json={"points": cloud_payload(rng), "grid": grid})
    assert resp.status_code == 422


def test_classify_endpoint_with_file_provider(client, rng, tmp_path):
    weights = np.eye(3)
    save_embedding_matrix(EmbeddingMatrix(weights), tmp_path / "text.emb1")
    for i in range(6):
        vec = weights[1].reshape(1, -1)
        save_embedding_matrix(EmbeddingMatrix(vec), tmp_path / f"view_{i}.emb1")
    payload = {
        "points": cloud_payload(rng),
        "grid": small_grid(),
        "views": {"preset": "six-ortho"},
        "provider": f"file:{tmp_path}",
    }
    resp = client.post("/classify", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["predicted"] == 1
    assert len(body["logits"]) == 3
    assert len(body["per_view_logits"]) == 6


def test_classify_missing_weights_is_usage_error(client, rng):
    payload = {
        "points": cloud_payload(rng),
        "grid": small_grid(),
        "views": {"preset": "six-ortho"},
        "provider": "http://nowhere.test/embed",
    }
    resp = client.post("/classify", json=payload)
    assert resp.status_code == 422
    assert "weights" in resp.json()["error"]["message"]


def test_classify_missing_view_file_is_format_error(client, rng, tmp_path):
    save_embedding_matrix(EmbeddingMatrix(np.eye(2)), tmp_path / "text.emb1")
    payload = {
        "points": cloud_payload(rng),
        "grid": small_grid(),
        "views": {"preset": "six-ortho"},
        "provider": f"file:{tmp_path}",
    }
    resp = client.post("/classify", json=payload)
    assert resp.status_code == 400
    assert resp.json()["error"]["category"] == "format"
    assert "view 0" in resp.json()["error"]["message"]


def test_segment_endpoint_with_injected_provider(rng, tmp_path):
    class OnePart:
        def view_dense(self, index, depth_map):
            grid = np.zeros((8, 8, 2))
            grid[:, :, 0] = 1.0
            return grid

    app = create_app(provider_factory=lambda spec: OnePart())
    client = TestClient(app)
    save_embedding_matrix(EmbeddingMatrix(np.eye(2)), tmp_path / "w.emb1")
    payload = {
        "points": cloud_payload(rng, 25),
        "grid": small_grid(),
        "views": {"preset": "custom", "custom": [{"azimuth_deg": 0, "elevation_deg": 0}]},
        "provider": "http://ignored.test",
        "weights_path": str(tmp_path / "w.emb1"),
    }
    resp = client.post("/segment", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["labels"] == [0] * 25
    assert len(body["coverage"]) == 25
    segl = base64.b64decode(body["segl_b64"])
    assert segl.startswith(b"SEGL")


def test_detect_endpoint(rng, tmp_path):
    class Fixed:
        def view_embedding(self, index, depth_map):
            return np.array([0.0, 1.0])

    app = create_app(provider_factory=lambda spec: Fixed())
    client = TestClient(app)
    save_embedding_matrix(EmbeddingMatrix(np.eye(2)), tmp_path / "w.emb1")
    points = (rng.random((100, 3)) * 0.5).tolist()
    payload = {
        "points": points,
        "boxes": [
            {"center": [0.25, 0.25, 0.25], "size": [1, 1, 1], "yaw": 0.0},
            {"center": [9, 9, 9], "size": [0.1, 0.1, 0.1], "yaw": 0.0},
        ],
        "grid": small_grid(),
        "views": {"preset": "custom", "custom": [{"azimuth_deg": 0, "elevation_deg": 0}]},
        "provider": "http://ignored.test",
        "weights_path": str(tmp_path / "w.emb1"),
        "min_points": 32,
    }
    resp = client.post("/detect", json=payload)
    assert resp.status_code == 200
    boxes = resp.json()["boxes"]
    assert len(boxes) == 2
    assert boxes[0]["label"] == 1 and not boxes[0]["empty"]
    assert boxes[1]["empty"] and boxes[1]["label"] is None


def test_prompts_commands_endpoint(client):
    resp = client.post("/prompts/commands", json={"class_names": ["window", "chair"]})
    assert resp.status_code == 200
    body = resp.json()
    assert body["total"] == 100
    first = body["classes"]["window"][0]
    assert first == {"family": "caption", "text": "Describe a depth map of a window:"}


def test_prompts_part_command_endpoint(client):
    resp = client.post("/prompts/part-command", json={"part": "leg", "cls": "table"})
    assert resp.status_code == 200
    assert resp.json()["command"] == "Describe the leg part of a table in a depth map:"
    resp = client.post("/prompts/part-command", json={"part": "", "cls": "table"})
    assert resp.status_code == 422


def test_prompts_descriptions_with_stub_llm(tmp_path):
    class StubLlm:
        def __init__(self):
            self.calls = 0

        def complete(self, command, n, temperature, max_tokens, engine):
            self.calls += 1
            return [f"{command}::{i}" for i in range(n)]

    stub = StubLlm()
    app = create_app(llm_client_factory=lambda url: stub)
    client = TestClient(app)
    payload = {
        "class_names": ["chair"],
        "llm_url": "http://llm.test",
        "cache_dir": str(tmp_path / "cache"),
        "n_per_command": 20,
    }
    resp = client.post("/prompts/descriptions", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["counts"]["chair"] == 1000
    assert stub.calls == 50
    assert body["engine"] == "text-davinci-002"

    # second call: cache only, no new LLM traffic
    resp = client.post("/prompts/descriptions", json=payload)
    assert resp.status_code == 200
    assert stub.calls == 50


def test_prompts_descriptions_offline_is_transport_error(tmp_path):
    from cloudcast.errors import TransportError

    class Offline:
        def complete(self, *args, **kwargs):
            raise TransportError("no route")

    app = create_app(llm_client_factory=lambda url: Offline())
    client = TestClient(app)
    payload = {
        "class_names": ["chair"],
        "llm_url": "http://llm.test",
        "cache_dir": str(tmp_path / "cache"),
    }
    resp = client.post("/prompts/descriptions", json=payload)
    assert resp.status_code == 502
    assert resp.json()["error"]["category"] == "transport"


def test_bench_endpoint(client):
    payload = {
        "points": 64,
        "reps": 3,
        "grid": small_grid(),
        "views": "six-ortho",
    }
    resp = client.post("/bench", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["report"]["reps"] == 3
    assert any("reference" in line for line in body["summary"])


def test_artifacts_decode_with_library_readers(client, rng, tmp_path):
    payload = {
        "points": cloud_payload(rng),
        "grid": small_grid(),
        "views": {"preset": "custom", "custom": [{"azimuth_deg": 0, "elevation_deg": 0}]},
        "include_raw": True,
    }
    body = client.post("/project", json=payload).json()
    dmap_path = tmp_path / "v.dmap"
    dmap_path.write_bytes(base64.b64decode(body["maps"][0]["dmap_b64"]))
    dm = read_dmap(dmap_path)
    assert dm.shape == (32, 32)
    prec_path = tmp_path / "v.prec"
    prec_path.write_bytes(base64.b64decode(body["maps"][0]["prec_b64"]))
    rec = read_prec(prec_path)
    assert len(rec) == 40
