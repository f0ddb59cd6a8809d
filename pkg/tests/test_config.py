import json

import numpy as np
import pytest

from cloudcast.config import (
    RunConfig,
    load_run_config,
    parse_pair,
    parse_sigma,
    parse_triple,
    run_config_from_options,
)
from cloudcast.errors import DomainError, FormatError


def test_parse_helpers():
    assert parse_triple("112x112x8", "grid") == (112, 112, 8)
    assert parse_pair("224x224", "out") == (224, 224)
    assert parse_sigma("auto") is None
    assert parse_sigma("0.75x0.75x0.25") == (0.75, 0.75, 0.25)
    with pytest.raises(DomainError):
        parse_triple("112x112", "grid")
    with pytest.raises(DomainError):
        parse_triple("axbxc", "grid")
    with pytest.raises(DomainError):
        parse_sigma("1x2")


def test_default_run_config_snapshot():
    resolved = RunConfig().resolved()
    assert resolved["grid"]["height"] == 112
    assert resolved["grid"]["width"] == 112
    assert resolved["grid"]["depth"] == 8
    assert resolved["grid"]["scale"] == 0.7
    assert resolved["grid"]["pool_window"] == [6, 6, 2]
    assert resolved["grid"]["gauss_size"] == [3, 3, 1]
    assert resolved["grid"]["out_size"] == [224, 224]
    assert resolved["points"] == 1024
    assert resolved["num_views"] == 10
    assert resolved["temperature"] == 0.7
    assert resolved["max_tokens"] == 40
    assert resolved["n_per_command"] == 20
    assert resolved["engine"] == "text-davinci-002"


def test_options_override_grid():
    cfg = run_config_from_options(
        {"grid": "64x48x4", "scale": 0.5, "pool": "3x3x1", "gauss": "5x5x3",
         "sigma": "1x1x0.5", "out_size": "96x96", "points": 256, "threads": 4}
    )
    assert (cfg.grid.height, cfg.grid.width, cfg.grid.depth) == (64, 48, 4)
    assert cfg.grid.scale == 0.5
    assert cfg.grid.pool_window == (3, 3, 1)
    assert cfg.grid.gauss_size == (5, 5, 3)
    assert cfg.grid.gauss_sigma == (1.0, 1.0, 0.5)
    assert cfg.grid.out_size == (96, 96)
    assert cfg.points == 256
    assert cfg.threads == 4


def test_unknown_option_rejected():
    with pytest.raises(DomainError, match="unknown config key"):
        run_config_from_options({"grids": "1x1x1"})


def test_toml_round_trip(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'grid = "56x56x4"\nscale = 0.8\nviews = "six-ortho"\npoints = 512\n'
        'provider = "file:emb/"\nllm = "http://llm.test"\ncache = ".cache"\n'
    )
    cfg = load_run_config(path)
    assert cfg.grid.height == 56
    assert cfg.views == "six-ortho"
    assert cfg.points == 512
    assert cfg.provider == "file:emb/"
    assert cfg.llm_url == "http://llm.test"
    assert cfg.cache_dir == ".cache"
    assert len(cfg.view_set()) == 6


def test_toml_bad_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("grid = [unclosed")
    with pytest.raises(FormatError):
        load_run_config(path)


def test_custom_views_resolution(tmp_path):
    views_path = tmp_path / "views.json"
    views_path.write_text(json.dumps([{"azimuth_deg": 0, "elevation_deg": 0, "weight": 2.0}]))
    cfg = run_config_from_options({"views": str(views_path)})
    vs = cfg.view_set()
    assert len(vs) == 1
    assert vs.weights[0] == 2.0


def test_alpha_file_resolution(tmp_path):
    alpha_path = tmp_path / "alpha.json"
    alpha_path.write_text(json.dumps([0.3] * 10))
    cfg = run_config_from_options({"alpha": str(alpha_path)})
    vs = cfg.view_set()
    np.testing.assert_allclose(vs.weights, 0.3)
    short = tmp_path / "short.json"
    short.write_text(json.dumps([1.0, 2.0]))
    with pytest.raises(FormatError):
        run_config_from_options({"alpha": str(short)}).view_set()


def test_config_hash_stable_and_sensitive():
    a = RunConfig()
    b = RunConfig()
    assert a.config_hash() == b.config_hash()
    c = run_config_from_options({"points": 2048})
    assert c.config_hash() != a.config_hash()


def test_run_config_validation():
    with pytest.raises(DomainError):
        RunConfig(points=0)
    with pytest.raises(DomainError):
        RunConfig(threads=0)
