"""Command-line entry points, each a thin client of the service API.

Input files are read and artifacts written on the client side; provider
directories, weight files, and caches are paths the service resolves
(identical to local paths with the default in-process service).
"""

from __future__ import annotations

import base64
import functools
import json
import math
import sys
from pathlib import Path

import click

from .client import ServiceClient
from .config import RunConfig, load_run_config, run_config_from_options
from .errors import CloudcastError, DomainError, exit_code_for, read_text_checked
from .pointcloud import load_point_cloud
from .views import load_view_file


def _fail(err: CloudcastError):
    click.echo(f"error ({err.category}): {err}", err=True)
    sys.exit(exit_code_for(err))


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CloudcastError as err:
            _fail(err)

    return wrapper


def config_options(fn):
    decorators = [
        click.option("--server", default=None, help="Remote service URL (default: in-process)."),
        click.option("--config", "config_path", default=None, help="TOML config file."),
        click.option("--grid", default=None, help="Grid size HxWxD (default 112x112x8)."),
        click.option("--scale", default=None, type=float, help="Shape scale factor in (0,1]."),
        click.option("--pool", default=None, help="Min-pool window WXxWYxWZ (default 6x6x2)."),
        click.option("--gauss", default=None, help="Gaussian kernel GXxGYxGZ (default 3x3x1)."),
        click.option("--sigma", default=None, help="Gaussian sigmas SXxSYxSZ or 'auto'."),
        click.option("--out-size", default=None, help="Output map size HxW (default 224x224)."),
        click.option("--views", default=None, help="ten-view | six-ortho | custom views JSON path."),
        click.option("--alpha", default=None, help="uniform | view weights JSON path."),
        click.option("--points", default=None, type=int, help="Points sampled per crop/bench."),
        click.option("--seed", default=None, type=int, help="RNG seed."),
        click.option("--threads", default=None, type=int, help="Worker threads for view fan-out."),
        click.option("--provider", default=None, help="Embedding provider: file:DIR or http(s) URL."),
        click.option("--llm", default=None, help="Language service URL."),
        click.option("--cache", default=None, help="Description cache directory."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def build_config(config_path, **flags) -> RunConfig:
    cfg = RunConfig()
    if config_path:
        cfg = load_run_config(config_path, cfg)
    options = {k: v for k, v in flags.items() if v is not None}
    return run_config_from_options(options, cfg)


def _grid_payload(cfg: RunConfig) -> dict:
    g = cfg.grid
    return {
        "height": g.height,
        "width": g.width,
        "depth": g.depth,
        "scale": g.scale,
        "pool_window": list(g.pool_window),
        "gauss_size": list(g.gauss_size),
        "gauss_sigma": list(g.gauss_sigma) if g.gauss_sigma else None,
        "out_size": list(g.out_size),
        "vis_eps": g.vis_eps,
    }


def _views_payload(cfg: RunConfig) -> dict:
    if cfg.views in ("ten-view", "six-ortho"):
        payload = {"preset": cfg.views}
    else:
        triples = load_view_file(cfg.views)
        payload = {
            "preset": "custom",
            "custom": [
                {
                    "azimuth_deg": math.degrees(a),
                    "elevation_deg": math.degrees(e),
                    "weight": w,
                }
                for a, e, w in triples
            ],
        }
    if cfg.alpha != "uniform":
        payload["alphas"] = cfg.view_set().weights.tolist()
    return payload


def _read_cloud(path: str, fmt: str):
    pc = load_point_cloud(path, fmt)
    if len(pc) == 0:
        raise DomainError(f"{path}: point cloud is empty")
    return pc


@click.group()
@click.version_option(package_name="cloudcast")
def main():
    """Depth-view casting and zero-shot open-world inference."""


@main.command()
@config_options
@click.option("--in", "in_path", required=True, help="Input point cloud file.")
@click.option(
    "--format", "fmt", default="ascii-xyz", type=click.Choice(["ascii-xyz", "binary-pcv2"])
)
@click.option("--out", "out_dir", required=True, help="Output directory for maps and records.")
@click.option("--raw/--no-raw", default=False, help="Also write raw DMAP depth files.")
@click.option("--no-normalize", is_flag=True, help="Skip unit-cube normalization.")
@handle_errors
def project(server, config_path, in_path, fmt, out_dir, raw, no_normalize, **flags):
    """Project a cloud into per-view depth maps (PGM) and records (PREC)."""
    cfg = build_config(config_path, **flags)
    pc = _read_cloud(in_path, fmt)
    payload = {
        "points": pc.points.tolist(),
        "labels": pc.labels.tolist() if pc.labels is not None else None,
        "grid": _grid_payload(cfg),
        "views": _views_payload(cfg),
        "normalize": not no_normalize,
        "threads": cfg.threads,
        "include_raw": raw,
    }
    result = ServiceClient(server).post("/project", payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for artifact in result["maps"]:
        i = artifact["view"]
        (out / f"view_{i:02d}.pgm").write_bytes(base64.b64decode(artifact["pgm_b64"]))
        (out / f"view_{i:02d}.prec").write_bytes(base64.b64decode(artifact["prec_b64"]))
        if raw and artifact.get("dmap_b64"):
            (out / f"view_{i:02d}.dmap").write_bytes(base64.b64decode(artifact["dmap_b64"]))
    (out / "project.json").write_text(
        json.dumps({"config": result["config"], "config_hash": result["config_hash"]}, indent=2)
    )
    click.echo(f"wrote {len(result['maps'])} views to {out}")


@main.command()
@config_options
@click.option("--in", "in_path", required=True, help="Input point cloud file.")
@click.option(
    "--format", "fmt", default="ascii-xyz", type=click.Choice(["ascii-xyz", "binary-pcv2"])
)
@click.option("--weights", "weights_path", default=None, help="Class weights EMB1 file.")
@click.option("--out", "out_path", default=None, help="Result JSON path (default: stdout).")
@handle_errors
def classify(server, config_path, in_path, fmt, weights_path, out_path, **flags):
    """Zero-shot classification of one cloud against class weights."""
    cfg = build_config(config_path, **flags)
    if not cfg.provider:
        raise DomainError("classification needs --provider (file:DIR or http URL)")
    pc = _read_cloud(in_path, fmt)
    payload = {
        "points": pc.points.tolist(),
        "grid": _grid_payload(cfg),
        "views": _views_payload(cfg),
        "provider": cfg.provider,
        "weights_path": weights_path,
        "threads": cfg.threads,
    }
    result = ServiceClient(server).post("/classify", payload)
    text = json.dumps(result, indent=2)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"predicted class {result['predicted']} -> {out_path}")
    else:
        click.echo(text)


@main.command()
@config_options
@click.option("--in", "in_path", required=True, help="Input point cloud file.")
@click.option(
    "--format", "fmt", default="ascii-xyz", type=click.Choice(["ascii-xyz", "binary-pcv2"])
)
@click.option("--weights", "weights_path", default=None, help="Part weights EMB1 file.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option(
    "--fallback",
    default="all-views",
    type=click.Choice(["all-views", "uniform-prior"]),
    help="Logits for points visible in no view.",
)
@click.option("--softmax/--no-softmax", default=False, help="Average softmaxed logits.")
@handle_errors
def segment(server, config_path, in_path, fmt, weights_path, out_dir, fallback, softmax, **flags):
    """Zero-shot part segmentation with per-point back-projection."""
    cfg = build_config(config_path, **flags)
    if not cfg.provider:
        raise DomainError("segmentation needs --provider (file:DIR or http URL)")
    pc = _read_cloud(in_path, fmt)
    payload = {
        "points": pc.points.tolist(),
        "grid": _grid_payload(cfg),
        "views": _views_payload(cfg),
        "provider": cfg.provider,
        "weights_path": weights_path,
        "fallback": fallback,
        "softmax": softmax,
        "threads": cfg.threads,
    }
    result = ServiceClient(server).post("/segment", payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "labels.txt").write_text("\n".join(str(l) for l in result["labels"]) + "\n")
    (out / "logits.segl").write_bytes(base64.b64decode(result["segl_b64"]))
    (out / "segment.json").write_text(
        json.dumps(
            {
                "coverage": result["coverage"],
                "config": result["config"],
                "config_hash": result["config_hash"],
            },
            indent=2,
        )
    )
    click.echo(f"wrote per-point labels for {len(result['labels'])} points to {out}")


@main.command()
@config_options
@click.option("--in", "in_path", required=True, help="Input scene point cloud.")
@click.option(
    "--format", "fmt", default="ascii-xyz", type=click.Choice(["ascii-xyz", "binary-pcv2"])
)
@click.option("--boxes", "boxes_path", required=True, help="Input boxes JSON.")
@click.option("--weights", "weights_path", default=None, help="Class weights EMB1 file.")
@click.option("--out", "out_path", required=True, help="Labeled boxes JSON path.")
@click.option("--min-points", default=1024, type=int, help="Points sampled per crop.")
@handle_errors
def detect(server, config_path, in_path, fmt, boxes_path, weights_path, out_path, min_points, **flags):
    """Classify externally proposed 3D boxes (crop-and-classify)."""
    cfg = build_config(config_path, **flags)
    if not cfg.provider:
        raise DomainError("detection needs --provider (file:DIR or http URL)")
    pc = _read_cloud(in_path, fmt)
    try:
        boxes = json.loads(Path(boxes_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"{boxes_path}: cannot read boxes: {exc}")
    payload = {
        "points": pc.points.tolist(),
        "boxes": boxes,
        "grid": _grid_payload(cfg),
        "views": _views_payload(cfg),
        "provider": cfg.provider,
        "weights_path": weights_path,
        "min_points": min_points,
        "seed": cfg.seed,
        "threads": cfg.threads,
    }
    result = ServiceClient(server).post("/detect", payload)
    Path(out_path).write_text(json.dumps(result, indent=2))
    labeled = sum(1 for b in result["boxes"] if not b["empty"])
    click.echo(f"labeled {labeled}/{len(result['boxes'])} boxes -> {out_path}")


@main.command()
@config_options
@click.option("--classes", "classes_path", required=True, help="Class names: JSON list or one per line.")
@click.option("--templates", "templates_path", default=None, help="Override template JSON file.")
@click.option("--out", "out_path", required=True, help="Output JSON path.")
@click.option("--commands-only", is_flag=True, help="Emit commands without querying the LLM.")
@handle_errors
def prompts(server, config_path, classes_path, templates_path, out_path, commands_only, **flags):
    """Build 3D language commands and generate cached descriptions."""
    cfg = build_config(config_path, **flags)
    raw = read_text_checked(classes_path)
    try:
        class_names = json.loads(raw)
    except json.JSONDecodeError:
        class_names = [line.strip() for line in raw.splitlines() if line.strip()]
    templates = None
    if templates_path:
        try:
            templates = json.loads(read_text_checked(templates_path))
        except json.JSONDecodeError as exc:
            raise DomainError(f"{templates_path}: cannot parse templates: {exc}")
    client = ServiceClient(server)
    if commands_only:
        result = client.post(
            "/prompts/commands", {"class_names": class_names, "templates": templates}
        )
        Path(out_path).write_text(json.dumps(result, indent=2))
        click.echo(f"built {result['total']} commands for {len(class_names)} classes")
        return
    if not cfg.llm_url:
        raise DomainError("description generation needs --llm URL (or --commands-only)")
    if not cfg.cache_dir:
        raise DomainError("description generation needs --cache DIR")
    result = client.post(
        "/prompts/descriptions",
        {
            "class_names": class_names,
            "llm_url": cfg.llm_url,
            "cache_dir": cfg.cache_dir,
            "templates": templates,
            "n_per_command": cfg.n_per_command,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "engine": cfg.engine,
            "max_workers": cfg.threads,
        },
    )
    Path(out_path).write_text(json.dumps(result, indent=2))
    total = sum(result["counts"].values())
    click.echo(f"generated {total} descriptions across {len(class_names)} classes")


@main.command()
@config_options
@click.option("--reps", default=10, type=int, help="Timed repetitions (first warm-up excluded).")
@click.option("--out", "out_path", default=None, help="Report JSON path.")
@click.option("--csv", "csv_path", default=None, help="Per-stage medians as CSV.")
@click.option("--svg", "svg_path", default=None, help="Per-stage medians as an SVG bar chart.")
@handle_errors
def bench(server, config_path, reps, out_path, csv_path, svg_path, **flags):
    """Benchmark the projection pipeline and print per-stage medians."""
    from .bench import BenchReport

    cfg = build_config(config_path, **flags)
    if cfg.views not in ("ten-view", "six-ortho"):
        raise DomainError("bench supports the ten-view or six-ortho presets")
    payload = {
        "points": cfg.points,
        "reps": reps,
        "threads": cfg.threads,
        "seed": cfg.seed,
        "grid": _grid_payload(cfg),
        "views": cfg.views,
    }
    result = ServiceClient(server).post("/bench", payload)
    for line in result["summary"]:
        click.echo(line)
    report = BenchReport.from_json(json.dumps(result["report"]))
    if out_path:
        Path(out_path).write_text(report.to_json())
        click.echo(f"report -> {out_path}")
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
        click.echo(f"csv -> {csv_path}")
    if svg_path:
        Path(svg_path).write_text(report.to_svg())
        click.echo(f"svg -> {svg_path}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
