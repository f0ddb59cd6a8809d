"""Pydantic request/response models for the service API."""

from __future__ import annotations

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from ..projection import GridConfig
from ..views import ViewSet, make_view_set


class GridSpec(BaseModel):
    height: int = 112
    width: int = 112
    depth: int = 8
    scale: float = 0.7
    pool_window: List[int] = Field(default=[6, 6, 2], min_length=3, max_length=3)
    gauss_size: List[int] = Field(default=[3, 3, 1], min_length=3, max_length=3)
    gauss_sigma: Optional[List[float]] = Field(default=None, min_length=3, max_length=3)
    out_size: List[int] = Field(default=[224, 224], min_length=2, max_length=2)
    vis_eps: Optional[float] = None

    def to_config(self) -> GridConfig:
        return GridConfig(
            height=self.height,
            width=self.width,
            depth=self.depth,
            scale=self.scale,
            pool_window=tuple(self.pool_window),
            gauss_size=tuple(self.gauss_size),
            gauss_sigma=tuple(self.gauss_sigma) if self.gauss_sigma else None,
            out_size=tuple(self.out_size),
            vis_eps=self.vis_eps,
        )


class CustomView(BaseModel):
    azimuth_deg: float
    elevation_deg: float
    weight: float = 1.0


class ViewSpec(BaseModel):
    preset: Literal["ten-view", "six-ortho", "custom"] = "ten-view"
    custom: Optional[List[CustomView]] = None
    alphas: Optional[List[float]] = None

    def to_view_set(self) -> ViewSet:
        import math

        if self.preset == "custom":
            triples = [
                (math.radians(v.azimuth_deg), math.radians(v.elevation_deg), v.weight)
                for v in (self.custom or [])
            ]
            vs = make_view_set("custom", triples)
        else:
            vs = make_view_set(self.preset)
        if self.alphas is not None:
            vs = ViewSet(vs.views, self.alphas)
        return vs


class ProjectRequest(BaseModel):
    points: List[List[float]]
    labels: Optional[List[int]] = None
    grid: GridSpec = GridSpec()
    views: ViewSpec = ViewSpec()
    normalize: bool = True
    threads: int = 1
    include_raw: bool = False


class ViewArtifact(BaseModel):
    view: int
    pgm_b64: str
    prec_b64: str
    dmap_b64: Optional[str] = None


class ProjectResponse(BaseModel):
    maps: List[ViewArtifact]
    config: dict
    config_hash: str


class ClassifyRequest(BaseModel):
    points: List[List[float]]
    grid: GridSpec = GridSpec()
    views: ViewSpec = ViewSpec()
    provider: str
    weights_path: Optional[str] = None
    normalize: bool = True
    threads: int = 1


class ClassifyResponse(BaseModel):
    predicted: int
    logits: List[float]
    per_view_logits: List[List[float]]
    config: dict
    config_hash: str


class SegmentRequest(BaseModel):
    points: List[List[float]]
    grid: GridSpec = GridSpec()
    views: ViewSpec = ViewSpec()
    provider: str
    weights_path: Optional[str] = None
    fallback: Literal["all-views", "uniform-prior"] = "all-views"
    softmax: bool = False
    normalize: bool = True
    threads: int = 1


class SegmentResponse(BaseModel):
    labels: List[int]
    coverage: List[int]
    segl_b64: str
    config: dict
    config_hash: str


class BoxSpec(BaseModel):
    center: List[float] = Field(min_length=3, max_length=3)
    size: List[float] = Field(min_length=3, max_length=3)
    yaw: float = 0.0


class BoxResult(BaseModel):
    center: List[float]
    size: List[float]
    yaw: float
    label: Optional[int] = None
    score: Optional[float] = None
    empty: bool = False


class DetectRequest(BaseModel):
    points: List[List[float]]
    boxes: List[BoxSpec]
    grid: GridSpec = GridSpec()
    views: ViewSpec = ViewSpec()
    provider: str
    weights_path: Optional[str] = None
    min_points: int = 1024
    seed: int = 0
    threads: int = 1


class DetectResponse(BaseModel):
    boxes: List[BoxResult]
    config: dict
    config_hash: str


class TemplateSpec(BaseModel):
    family: str
    text: str


class CommandsRequest(BaseModel):
    class_names: List[str]
    templates: Optional[List[TemplateSpec]] = None


class CommandPayload(BaseModel):
    family: str
    text: str


class CommandsResponse(BaseModel):
    classes: Dict[str, List[CommandPayload]]
    total: int


class DescriptionsRequest(BaseModel):
    class_names: List[str]
    llm_url: str
    cache_dir: str
    templates: Optional[List[TemplateSpec]] = None
    n_per_command: int = 20
    temperature: float = 0.7
    max_tokens: int = 40
    engine: str = "text-davinci-002"
    max_workers: int = 1


class DescriptionPayload(BaseModel):
    text: str
    family: str


class DescriptionsResponse(BaseModel):
    classes: Dict[str, List[DescriptionPayload]]
    counts: Dict[str, int]
    engine: str
    temperature: float
    max_tokens: int


class BenchRequest(BaseModel):
    points: int = 1024
    reps: int = 10
    threads: int = 1
    seed: int = 0
    grid: GridSpec = GridSpec()
    views: Literal["ten-view", "six-ortho"] = "ten-view"


class BenchResponse(BaseModel):
    report: dict
    summary: List[str]


class PartCommandRequest(BaseModel):
    part: str
    cls: str


class PartCommandResponse(BaseModel):
    command: str
