"""FastAPI application exposing the engine over HTTP.

Handlers stay thin: decode the request into library objects, call the
engine, encode artifacts back. Library errors map to HTTP statuses through
one exception handler keyed on the error category.
"""

from __future__ import annotations

import base64
import contextlib
import hashlib
import json
from typing import Callable, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import run_benchmark
from ..config import RunConfig, run_config_from_options
from ..embeddings import (
    EmbeddingMatrix,
    FileProvider,
    encode_depth_maps,
    load_embedding_matrix,
    provider_from_spec,
)
from ..errors import CloudcastError, DomainError
from ..inference import (
    ClassifierConfig,
    DetectionBox,
    detect_zero_shot,
    segl_bytes,
    segment_point_cloud,
    zero_shot_classify,
)
from ..pointcloud import PointCloud, normalize_unit_cube
from ..projection import dmap_bytes, pgm_bytes, prec_bytes, project_views
from ..prompts import (
    CommandTemplate,
    LlmClient,
    build_commands,
    build_part_command,
    generate_descriptions,
)
from . import schemas

_STATUS_BY_CATEGORY = {
    "usage": 422,
    "format": 400,
    "transport": 502,
    "capability": 501,
}


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _resolved(request_dump: dict) -> tuple:
    """Resolved config dict plus its short hash for report embedding."""
    cleaned = {k: v for k, v in request_dump.items() if k not in ("points", "labels", "boxes")}
    blob = json.dumps(cleaned, sort_keys=True, separators=(",", ":"), default=str)
    return cleaned, hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _cloud(points, labels, normalize: bool) -> PointCloud:
    pc = PointCloud(np.asarray(points, dtype=np.float64).reshape(len(points), 3), labels)
    return normalize_unit_cube(pc) if normalize else pc


@contextlib.contextmanager
def _closing(obj):
    """Close per-request HTTP clients deterministically; stubs may lack close()."""
    try:
        yield obj
    finally:
        close = getattr(obj, "close", None)
        if callable(close):
            close()


def _weights(provider_spec: str, weights_path: Optional[str], provider) -> EmbeddingMatrix:
    if weights_path:
        return load_embedding_matrix(weights_path)
    if isinstance(provider, FileProvider):
        return provider.text_matrix()
    raise DomainError(
        "no class weights: pass weights_path or use a file provider holding text.emb1"
    )


def create_app(
    llm_client_factory: Optional[Callable[[str], object]] = None,
    provider_factory: Optional[Callable[[str], object]] = None,
) -> FastAPI:
    """Build the service; the factories exist so tests can inject stubs."""
    make_llm = llm_client_factory or (lambda url: LlmClient(url))
    make_provider = provider_factory or provider_from_spec

    app = FastAPI(title="cloudcast", version=__version__)

    @app.exception_handler(CloudcastError)
    async def _cloudcast_error(request: Request, exc: CloudcastError):
        status = _STATUS_BY_CATEGORY.get(exc.category, 500)
        return JSONResponse(
            status_code=status,
            content={"error": {"category": exc.category, "message": str(exc)}},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/project", response_model=schemas.ProjectResponse)
    def project(req: schemas.ProjectRequest):
        pc = _cloud(req.points, req.labels, req.normalize)
        cfg = req.grid.to_config()
        views = req.views.to_view_set()
        maps, records = project_views(
            pc, views, cfg, max_workers=req.threads if req.threads > 1 else None
        )
        artifacts = []
        for i, (dm, rec) in enumerate(zip(maps, records)):
            artifacts.append(
                schemas.ViewArtifact(
                    view=i,
                    pgm_b64=_b64(pgm_bytes(dm)),
                    prec_b64=_b64(prec_bytes(rec)),
                    dmap_b64=_b64(dmap_bytes(dm)) if req.include_raw else None,
                )
            )
        config, config_hash = _resolved(req.model_dump())
        return schemas.ProjectResponse(maps=artifacts, config=config, config_hash=config_hash)

    @app.post("/classify", response_model=schemas.ClassifyResponse)
    def classify(req: schemas.ClassifyRequest):
        pc = _cloud(req.points, None, req.normalize)
        cfg = req.grid.to_config()
        views = req.views.to_view_set()
        with _closing(make_provider(req.provider)) as provider:
            weights = _weights(req.provider, req.weights_path, provider)
            maps, _ = project_views(
                pc, views, cfg, max_workers=req.threads if req.threads > 1 else None
            )
            features = encode_depth_maps(maps, provider)
            result = zero_shot_classify(features, weights, views.weights)
        config, config_hash = _resolved(req.model_dump())
        return schemas.ClassifyResponse(
            predicted=result.predicted,
            logits=result.logits.tolist(),
            per_view_logits=result.per_view_logits.tolist(),
            config=config,
            config_hash=config_hash,
        )

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def segment(req: schemas.SegmentRequest):
        pc = _cloud(req.points, None, req.normalize)
        cfg = req.grid.to_config()
        views = req.views.to_view_set()
        with _closing(make_provider(req.provider)) as provider:
            weights = _weights(req.provider, req.weights_path, provider)
            result = segment_point_cloud(
                pc,
                views,
                cfg,
                weights,
                provider,
                fallback=req.fallback,
                softmax=req.softmax,
                max_workers=req.threads if req.threads > 1 else None,
            )
        config, config_hash = _resolved(req.model_dump())
        return schemas.SegmentResponse(
            labels=result.labels.tolist(),
            coverage=result.coverage.tolist(),
            segl_b64=_b64(segl_bytes(result)),
            config=config,
            config_hash=config_hash,
        )

    @app.post("/detect", response_model=schemas.DetectResponse)
    def detect(req: schemas.DetectRequest):
        scene = PointCloud(np.asarray(req.points, dtype=np.float64).reshape(len(req.points), 3))
        boxes = [
            DetectionBox(tuple(b.center), tuple(b.size), b.yaw) for b in req.boxes
        ]
        with _closing(make_provider(req.provider)) as provider:
            weights = _weights(req.provider, req.weights_path, provider)
            clf = ClassifierConfig(
                views=req.views.to_view_set(),
                grid=req.grid.to_config(),
                weights=weights,
                provider=provider,
                seed=req.seed,
                max_workers=req.threads if req.threads > 1 else None,
            )
            labeled = detect_zero_shot(scene, boxes, clf, min_points=req.min_points)
        config, config_hash = _resolved(req.model_dump())
        return schemas.DetectResponse(
            boxes=[
                schemas.BoxResult(
                    center=list(b.center),
                    size=list(b.size),
                    yaw=b.yaw,
                    label=b.label,
                    score=b.score,
                    empty=b.empty,
                )
                for b in labeled
            ],
            config=config,
            config_hash=config_hash,
        )

    @app.post("/prompts/commands", response_model=schemas.CommandsResponse)
    def prompts_commands(req: schemas.CommandsRequest):
        templates = (
            [CommandTemplate(t.family, t.text) for t in req.templates]
            if req.templates
            else None
        )
        commands = build_commands(req.class_names, templates)
        return schemas.CommandsResponse(
            classes={
                name: [schemas.CommandPayload(family=c.family, text=c.text) for c in cmds]
                for name, cmds in commands.classes.items()
            },
            total=commands.total(),
        )

    @app.post("/prompts/part-command", response_model=schemas.PartCommandResponse)
    def prompts_part_command(req: schemas.PartCommandRequest):
        return schemas.PartCommandResponse(command=build_part_command(req.part, req.cls))

    @app.post("/prompts/descriptions", response_model=schemas.DescriptionsResponse)
    def prompts_descriptions(req: schemas.DescriptionsRequest):
        templates = (
            [CommandTemplate(t.family, t.text) for t in req.templates]
            if req.templates
            else None
        )
        commands = build_commands(req.class_names, templates)
        with _closing(make_llm(req.llm_url)) as client:
            descriptions = generate_descriptions(
                commands,
                client,
                req.cache_dir,
                n_per_command=req.n_per_command,
                temperature=req.temperature,
                max_tokens=req.max_tokens,
                engine=req.engine,
                max_workers=req.max_workers,
            )
        return schemas.DescriptionsResponse(
            classes={
                name: [schemas.DescriptionPayload(text=d.text, family=d.family) for d in descs]
                for name, descs in descriptions.classes.items()
            },
            counts=descriptions.counts(),
            engine=descriptions.engine,
            temperature=descriptions.temperature,
            max_tokens=descriptions.max_tokens,
        )

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(req: schemas.BenchRequest):
        cfg = run_config_from_options(
            {"points": req.points, "seed": req.seed, "threads": req.threads, "views": req.views},
            base=RunConfig(grid=req.grid.to_config()),
        )
        report = run_benchmark(cfg, req.reps)
        return schemas.BenchResponse(
            report=json.loads(report.to_json()), summary=report.summary_lines()
        )

    return app
