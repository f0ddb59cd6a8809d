"""Rigid view transforms applied to a normalized cloud before projection.

The depth axis after a transform is always +z. Azimuth spins the shape
about the vertical axis (the image-row axis, x); elevation then tips it
toward the camera about the image-column axis (y). Angles that are exact
multiples of 90 degrees produce exact sign-permutation matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, FormatError
from .pointcloud import PointCloud, normalize_unit_cube

PRESETS = ("ten-view", "six-ortho", "custom")

# Elevation of a cube corner seen from its diagonal: atan(1/sqrt(2)) = 35.264 deg.
CUBE_DIAGONAL_ELEVATION = math.atan(1.0 / math.sqrt(2.0))

# cos/sin of right-angle multiples land within ~1e-16 of {-1, 0, 1}; snapping
# keeps the six orthogonal views exact without touching generic angles.
_SNAP_TOL = 1e-12


def rotation_matrix(azimuth: float, elevation: float) -> np.ndarray:
    """R = Ry(elevation) @ Rx(azimuth), applied to column vectors."""
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[ce, 0.0, se], [0.0, 1.0, 0.0], [-se, 0.0, ce]])
    r = ry @ rx
    snapped = np.round(r)
    return np.where(np.abs(r - snapped) < _SNAP_TOL, snapped, r)


@dataclass(frozen=True)
class ViewTransform:
    """One view: angles plus the derived (or explicitly given) rotation."""

    azimuth: float
    elevation: float
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rotation is None:
            r = rotation_matrix(self.azimuth, self.elevation)
        else:
            r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise DomainError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise DomainError("rotation is not orthonormal")
        if abs(float(np.linalg.det(r)) - 1.0) > 1e-6:
            raise DomainError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)

    def inverse(self) -> "ViewTransform":
        return ViewTransform(-self.azimuth, -self.elevation, rotation=self.rotation.T.copy())


@dataclass(frozen=True)
class ViewSet:
    """An ordered set of views with per-view aggregation weights."""

    views: Tuple[ViewTransform, ...]
    weights: np.ndarray

    def __post_init__(self):
        views = tuple(self.views)
        w = np.asarray(self.weights, dtype=np.float64)
        if len(views) < 1:
            raise DomainError("a view set needs at least one view")
        if w.shape != (len(views),):
            raise DomainError(f"need one weight per view: {w.shape} vs {len(views)} views")
        if not np.isfinite(w).all() or (w < 0).any():
            raise DomainError("view weights must be finite and nonnegative")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.views)


_SIX_ORTHO = (
    (0.0, 0.0),                 # +z
    (math.pi, 0.0),             # -z
    (math.pi / 2.0, 0.0),       # +y
    (-math.pi / 2.0, 0.0),      # -y
    (0.0, math.pi / 2.0),       # +x
    (0.0, -math.pi / 2.0),      # -x
)

_FOUR_CORNERS = tuple(
    (math.radians(a), CUBE_DIAGONAL_ELEVATION) for a in (45.0, 135.0, 225.0, 315.0)
)


def make_view_set(
    preset: str,
    custom: Optional[Sequence[Tuple[float, float, float]]] = None,
) -> ViewSet:
    """Build a view set from a preset name or custom (azimuth, elevation, weight) triples."""
    if preset == "ten-view":
        angles = _SIX_ORTHO + _FOUR_CORNERS
        views = tuple(ViewTransform(a, e) for a, e in angles)
        return ViewSet(views, np.full(len(views), 1.0 / len(views)))
    if preset == "six-ortho":
        views = tuple(ViewTransform(a, e) for a, e in _SIX_ORTHO)
        return ViewSet(views, np.full(len(views), 1.0 / len(views)))
    if preset == "custom":
        if not custom:
            raise DomainError("custom preset requires a non-empty view list")
        views = tuple(ViewTransform(a, e) for a, e, _ in custom)
        weights = np.asarray([w for _, _, w in custom], dtype=np.float64)
        return ViewSet(views, weights)
    raise DomainError(f"unknown view preset {preset!r}; expected one of {PRESETS}")


def load_view_file(path: Union[str, Path]) -> list:
    """Read custom views from JSON: [{"azimuth_deg", "elevation_deg", "weight"}, ...]."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse view file: {exc}")
    if not isinstance(entries, list):
        raise FormatError(f"{path}: expected a JSON list of views")
    if not entries:
        raise DomainError(f"{path}: custom view set must contain at least one view")
    triples = []
    for i, entry in enumerate(entries):
        try:
            az = math.radians(float(entry["azimuth_deg"]))
            el = math.radians(float(entry["elevation_deg"]))
            weight = float(entry.get("weight", 1.0))
        except (TypeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: view {i}: {exc}")
        triples.append((az, el, weight))
    return triples


def apply_view(pc: PointCloud, view: ViewTransform) -> PointCloud:
    """Rotate about the cube center, then renormalize into [0,1]^3."""
    rotated = (pc.points - 0.5) @ view.rotation.T + 0.5
    return normalize_unit_cube(PointCloud(rotated, pc.labels))
