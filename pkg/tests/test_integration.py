"""End-to-end flows over real sockets: CLI -> service -> HTTP providers."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest
from click.testing import CliRunner

from cloudcast.cli import main
from cloudcast.embeddings import EmbeddingMatrix, HttpProvider, save_embedding_matrix
from cloudcast.pointcloud import PointCloud, save_point_cloud

DIM = 4


class _EncoderHandler(BaseHTTPRequestHandler):
    """Embedding service stub: keyed global vectors, banded dense grids."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        mode = parse_qs(urlparse(self.path).query).get("mode", ["global"])[0]
        if mode == "global":
            assert body.startswith(b"P6\n")
            payload = {"dim": DIM, "vector": [0.0, 0.0, 1.0, 0.0]}
        elif mode == "dense":
            h = w = 8
            grid = np.zeros((h, w, DIM))
            grid[: h // 2, :, 0] = 1.0
            grid[h // 2 :, :, 1] = 1.0
            payload = {"h": h, "w": w, "dim": DIM, "data": grid.reshape(-1).tolist()}
        elif mode == "text":
            seed = sum(body)  # deterministic per text
            rng = np.random.default_rng(seed)
            payload = {"dim": DIM, "vector": rng.normal(size=DIM).tolist()}
        else:
            self.send_response(404)
            self.end_headers()
            return
        out = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def encoder_url():
    server = HTTPServer(("127.0.0.1", 0), _EncoderHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/embed"
    server.shutdown()


@pytest.fixture
def runner():
    return CliRunner()


SMALL_FLAGS = [
    "--grid", "16x16x4", "--scale", "0.9", "--pool", "3x3x2", "--out-size", "32x32",
]


def test_http_provider_live_all_modes(encoder_url, rng):
    from cloudcast.projection import DepthMap

    depth = rng.random((8, 8))
    dm = DepthMap(depth, np.zeros((8, 8), bool), 1.0 - depth)
    with HttpProvider(encoder_url) as provider:
        vec = provider.view_embedding(0, dm)
        np.testing.assert_array_equal(vec, [0, 0, 1, 0])
        dense = provider.view_dense(0, dm)
        assert dense.shape == (8, 8, DIM)
        t1 = provider.text_embedding("a chair")
        t2 = provider.text_embedding("a chair")
        np.testing.assert_array_equal(t1, t2)


def test_classify_cli_through_live_http_provider(encoder_url, runner, tmp_path, rng):
    cloud = tmp_path / "cloud.xyz"
    save_point_cloud(PointCloud(rng.random((40, 3))), cloud, "ascii-xyz")
    weights = tmp_path / "classes.emb1"
    save_embedding_matrix(EmbeddingMatrix(np.eye(DIM)), weights)
    out = tmp_path / "result.json"
    result = runner.invoke(
        main,
        [
            "classify", "--in", str(cloud), "--views", "six-ortho",
            "--provider", encoder_url, "--weights", str(weights), "--out", str(out),
        ]
        + SMALL_FLAGS,
    )
    assert result.exit_code == 0, result.output
    body = json.loads(out.read_text())
    assert body["predicted"] == 2  # the stub always emits class row 2


def test_segment_cli_through_live_http_provider(encoder_url, runner, tmp_path, rng):
    cloud = tmp_path / "cloud.xyz"
    # points pinned to the bounding box corners so bands stay put
    pts = rng.random((60, 3))
    pts[0] = [0, 0, 0]
    pts[1] = [1, 1, 1]
    save_point_cloud(PointCloud(pts), cloud, "ascii-xyz")
    weights = tmp_path / "parts.emb1"
    save_embedding_matrix(EmbeddingMatrix(np.eye(DIM)), weights)
    views = tmp_path / "views.json"
    views.write_text('[{"azimuth_deg": 0, "elevation_deg": 0, "weight": 1.0}]')
    out_dir = tmp_path / "seg"
    result = runner.invoke(
        main,
        [
            "segment", "--in", str(cloud), "--views", str(views),
            "--provider", encoder_url, "--weights", str(weights), "--out", str(out_dir),
        ]
        + SMALL_FLAGS,
    )
    assert result.exit_code == 0, result.output
    labels = [int(l) for l in (out_dir / "labels.txt").read_text().split()]
    # dense stub paints the top half part 0, bottom half part 1: points with
    # small x land in rows < half
    for x, label in zip(pts[:, 0], labels):
        assert label == (0 if x < 0.45 else 1) or abs(x - 0.5) < 0.1


def test_text_pipeline_through_live_http_provider(encoder_url, tmp_path):
    from cloudcast.embeddings import encode_texts
    from cloudcast.prompts import build_commands, generate_descriptions

    class TinyLlm:
        def complete(self, command, n, temperature, max_tokens, engine):
            return [f"{command} styled {i}" for i in range(n)]

    commands = build_commands(["chair", "table"])
    descriptions = generate_descriptions(
        commands, TinyLlm(), tmp_path / "cache", n_per_command=3
    )
    with HttpProvider(encoder_url) as provider:
        matrix = encode_texts(descriptions, provider)
    assert matrix.num_classes == 2
    assert matrix.dim == DIM
    np.testing.assert_allclose(np.linalg.norm(matrix.data, axis=1), 1.0, atol=1e-9)
