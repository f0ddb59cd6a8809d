"""Zero-shot open-world heads over projected views.

Classification sums per-view alignment logits under view weights; part
segmentation scores every pixel against part weights and back-projects the
fields onto the points that produced them; detection crops externally
proposed boxes and classifies each crop independently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .embeddings import DenseFeature, EmbeddingMatrix, ViewFeature, encode_dense, encode_depth_maps
from .errors import DomainError, FormatError, read_bytes_checked
from .pointcloud import PointCloud, normalize_unit_cube, sample_points
from .projection import GridConfig, ProjectionRecord, project_views
from .views import ViewSet

SEGL_MAGIC = b"SEGL"

FALLBACKS = ("all-views", "uniform-prior")


@dataclass(frozen=True)
class ClassificationResult:
    logits: np.ndarray
    predicted: int
    per_view_logits: np.ndarray


@dataclass(frozen=True)
class SegmentationResult:
    logits: np.ndarray
    labels: np.ndarray
    coverage: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DetectionBox:
    """Axis sizes about a yawed center; yaw spins about the world +z axis."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float
    label: Optional[int] = None
    score: Optional[float] = None
    empty: bool = False

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise DomainError(f"box sizes must be positive, got {self.size}")


def zero_shot_classify(
    features: Sequence[ViewFeature],
    weights: EmbeddingMatrix,
    alphas: Sequence[float],
) -> ClassificationResult:
    """Weighted multi-view logit sum; argmax ties break to the lowest index."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if len(features) != len(alphas):
        raise DomainError(f"need one weight per view: {len(alphas)} vs {len(features)}")
    if len(features) == 0:
        raise DomainError("classification needs at least one view feature")
    stacked = np.stack([f.vector for f in features])
    if stacked.shape[1] != weights.dim:
        raise DomainError(
            f"feature dim {stacked.shape[1]} does not match weight dim {weights.dim}"
        )
    per_view = stacked @ weights.data.T
    logits = alphas @ per_view
    return ClassificationResult(logits, int(np.argmax(logits)), per_view)


def segment_pixels(feature_grid, weights: EmbeddingMatrix) -> np.ndarray:
    """Pixel-wise alignment logits: grid (H, W, C) x weights (K, C) -> (H, W, K)."""
    grid = feature_grid.grid if isinstance(feature_grid, DenseFeature) else np.asarray(feature_grid)
    if grid.ndim != 3 or grid.shape[2] != weights.dim:
        raise DomainError(
            f"feature grid must be (H, W, {weights.dim}), got {grid.shape}"
        )
    return grid @ weights.data.T


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def back_project(
    pixel_logits: Sequence[np.ndarray],
    records: Sequence[ProjectionRecord],
    n_points: int,
    grid_size: Tuple[int, int],
    fallback: str = "all-views",
    softmax: bool = False,
) -> SegmentationResult:
    """Average each point's pixel logits over the views that actually see it.

    Points visible in no view fall back to either the average over all
    views' samples ("all-views") or flat zero logits ("uniform-prior").
    """
    if fallback not in FALLBACKS:
        raise DomainError(f"unknown fallback {fallback!r}; expected one of {FALLBACKS}")
    if len(pixel_logits) != len(records):
        raise DomainError(f"{len(pixel_logits)} logit fields vs {len(records)} records")
    if not records:
        raise DomainError("back-projection needs at least one view")
    for rec in records:
        if len(rec) != n_points:
            raise DomainError(f"record covers {len(rec)} points, expected {n_points}")

    h, w = grid_size
    k = pixel_logits[0].shape[2]
    samples = np.zeros((len(records), n_points, k))
    visible = np.zeros((len(records), n_points), dtype=bool)
    for i, (field, rec) in enumerate(zip(pixel_logits, records)):
        if field.ndim != 3 or field.shape[2] != k:
            raise DomainError(f"view {i}: logit field shape {field.shape} disagrees")
        fh, fw = field.shape[:2]
        u = np.minimum(rec.u * fh // h, fh - 1)
        v = np.minimum(rec.v * fw // w, fw - 1)
        view_samples = field[u, v]
        samples[i] = _softmax(view_samples) if softmax else view_samples
        visible[i] = rec.visible

    coverage = visible.sum(axis=0)
    weighted = (samples * visible[:, :, None]).sum(axis=0)
    covered = coverage > 0
    logits = np.zeros((n_points, k))
    logits[covered] = weighted[covered] / coverage[covered, None]
    if (~covered).any():
        if fallback == "all-views":
            logits[~covered] = samples.mean(axis=0)[~covered]
        # uniform-prior keeps the zero row: every part equally likely
    labels = np.argmax(logits, axis=1)
    return SegmentationResult(logits, labels, coverage)


def segment_point_cloud(
    pc: PointCloud,
    views: ViewSet,
    cfg: GridConfig,
    part_weights: EmbeddingMatrix,
    provider,
    fallback: str = "all-views",
    softmax: bool = False,
    max_workers: Optional[int] = None,
) -> SegmentationResult:
    """Project, densely encode, score pixels, and back-project per point."""
    if len(pc) == 0:
        raise DomainError("segmentation needs a non-empty point cloud")
    maps, records = project_views(pc, views, cfg, max_workers=max_workers)
    dense = encode_dense(maps, provider)
    fields = [segment_pixels(d.upsampled(cfg.out_size), part_weights) for d in dense]
    return back_project(
        fields,
        records,
        len(pc),
        (cfg.height, cfg.width),
        fallback=fallback,
        softmax=softmax,
    )


def instance_iou(pred, truth, parts: Sequence[int]) -> float:
    """Mean IoU over one instance's part set; empty-union parts count as 1."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DomainError(f"label arity mismatch: {pred.shape} vs {truth.shape}")
    part_set = set(int(p) for p in parts)
    if not part_set:
        raise DomainError("instance part set is empty")
    present = set(np.unique(pred)) | set(np.unique(truth))
    unknown = present - part_set
    if unknown:
        raise DomainError(f"unknown part id(s) {sorted(unknown)} outside {sorted(part_set)}")
    scores = []
    for p in sorted(part_set):
        pred_p = pred == p
        true_p = truth == p
        union = int(np.logical_or(pred_p, true_p).sum())
        if union == 0:
            scores.append(1.0)
        else:
            scores.append(int(np.logical_and(pred_p, true_p).sum()) / union)
    return float(np.mean(scores))


def compute_miou(preds, truths, categories, parts_per_class) -> float:
    """Instance-averaged mean IoU, each instance over its category's parts."""
    if len(preds) != len(truths) or len(preds) != len(categories):
        raise DomainError("preds, truths, and categories must align per instance")
    if len(preds) == 0:
        raise DomainError("need at least one instance")
    scores = []
    for pred, truth, category in zip(preds, truths, categories):
        if category not in parts_per_class:
            raise DomainError(f"no part set known for category {category!r}")
        labels = pred.labels if isinstance(pred, SegmentationResult) else pred
        scores.append(instance_iou(labels, truth, parts_per_class[category]))
    return float(np.mean(scores))


def box_interior_mask(points: np.ndarray, box: DetectionBox) -> np.ndarray:
    """Containment test in the box frame: un-yaw about +z, compare half-sizes."""
    delta = points - np.asarray(box.center, dtype=np.float64)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    xb = c * delta[:, 0] + s * delta[:, 1]
    yb = -s * delta[:, 0] + c * delta[:, 1]
    zb = delta[:, 2]
    half = np.asarray(box.size, dtype=np.float64) / 2.0
    return (np.abs(xb) <= half[0]) & (np.abs(yb) <= half[1]) & (np.abs(zb) <= half[2])


@dataclass(frozen=True)
class ClassifierConfig:
    """Everything the zero-shot classification pipeline needs for one crop."""

    views: ViewSet
    grid: GridConfig
    weights: EmbeddingMatrix
    provider: object
    seed: int = 0
    max_workers: Optional[int] = None


def classify_cloud(pc: PointCloud, clf: ClassifierConfig) -> ClassificationResult:
    maps, _ = project_views(pc, clf.views, clf.grid, max_workers=clf.max_workers)
    features = encode_depth_maps(maps, clf.provider)
    return zero_shot_classify(features, clf.weights, clf.views.weights)


def detect_zero_shot(
    scene: PointCloud,
    boxes: Sequence[DetectionBox],
    clf: ClassifierConfig,
    min_points: int = 1024,
) -> List[DetectionBox]:
    """Crop-and-classify over externally proposed boxes, order preserved.

    Each crop is renormalized on its own before projection; boxes holding
    no points come back unlabeled with the empty flag set.
    """
    out = []
    for box in boxes:
        mask = box_interior_mask(scene.points, box)
        if not mask.any():
            out.append(replace(box, label=None, score=None, empty=True))
            continue
        labels = scene.labels[mask] if scene.labels is not None else None
        crop = normalize_unit_cube(PointCloud(scene.points[mask], labels))
        crop = sample_points(crop, min_points, seed=clf.seed)
        result = classify_cloud(crop, clf)
        out.append(
            replace(
                box,
                label=result.predicted,
                score=float(result.logits[result.predicted]),
                empty=False,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Artifact formats


def load_boxes(path: Union[str, Path]) -> List[DetectionBox]:
    """Boxes file: JSON list of {"center": [x,y,z], "size": [dx,dy,dz], "yaw": r}."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse boxes file: {exc}")
    if not isinstance(entries, list):
        raise FormatError(f"{path}: expected a JSON list of boxes")
    boxes = []
    for i, entry in enumerate(entries):
        try:
            boxes.append(
                DetectionBox(
                    tuple(float(x) for x in entry["center"]),
                    tuple(float(x) for x in entry["size"]),
                    float(entry["yaw"]),
                )
            )
        except (TypeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: box {i}: {exc}")
    return boxes


def boxes_to_json(boxes: Sequence[DetectionBox]) -> list:
    out = []
    for box in boxes:
        entry = {
            "center": list(box.center),
            "size": list(box.size),
            "yaw": box.yaw,
            "empty": box.empty,
        }
        if box.label is not None:
            entry["label"] = box.label
        if box.score is not None:
            entry["score"] = box.score
        out.append(entry)
    return out


def save_boxes(boxes: Sequence[DetectionBox], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(boxes_to_json(boxes), indent=2) + "\n", encoding="utf-8")


def segl_bytes(result: SegmentationResult) -> bytes:
    n, k = result.logits.shape
    return SEGL_MAGIC + struct.pack("<II", n, k) + result.logits.astype("<f4").tobytes()


def write_segl(result: SegmentationResult, path: Union[str, Path]) -> None:
    Path(path).write_bytes(segl_bytes(result))


def read_segl(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    data = read_bytes_checked(path)
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need 12")
    if data[:4] != SEGL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
    n, k = struct.unpack_from("<II", data, 4)
    expected = 12 + n * k * 4
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", count=n * k, offset=12).reshape(n, k).astype(np.float64)
