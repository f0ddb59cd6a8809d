"""The depth-map projection pipeline and its on-disk artifact formats.

A normalized cloud is rasterized into a voxel grid (smallest depth wins a
collision), densified by window minimum pooling, smoothed by an
occupancy-masked Gaussian, and squeezed along depth into an image.
Background cells never enter any statistic: every step carries an explicit
occupancy mask instead of a magic empty value.
"""

from __future__ import annotations

import math
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import DomainError, FormatError, read_bytes_checked
from .pointcloud import PointCloud
from .views import ViewSet, apply_view

DMAP_MAGIC = b"DMAP"
PREC_MAGIC = b"PREC"

_PREC_DTYPE = np.dtype([("u", "<u2"), ("v", "<u2"), ("z", "<f4"), ("visible", "u1")])


def default_sigma(size: Tuple[int, int, int]) -> Tuple[float, float, float]:
    """Kernel std of size/4 per axis keeps nearly all mass inside the support."""
    return tuple(max(s, 1) / 4.0 for s in size)


@dataclass(frozen=True)
class GridConfig:
    """Resolution and filter settings for one projection."""

    height: int = 112
    width: int = 112
    depth: int = 8
    scale: float = 0.7
    pool_window: Tuple[int, int, int] = (6, 6, 2)
    gauss_size: Tuple[int, int, int] = (3, 3, 1)
    gauss_sigma: Optional[Tuple[float, float, float]] = None
    out_size: Tuple[int, int] = (224, 224)
    vis_eps: Optional[float] = None

    def __post_init__(self):
        for name in ("height", "width", "depth"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if not (0.0 < self.scale <= 1.0):
            raise DomainError(f"scale factor must be in (0, 1], got {self.scale}")
        if any(w < 1 for w in self.pool_window):
            raise DomainError(f"pool window components must be >= 1, got {self.pool_window}")
        if any(g < 1 or g % 2 == 0 for g in self.gauss_size):
            raise DomainError(f"gaussian sizes must be odd (or 1), got {self.gauss_size}")
        if self.gauss_sigma is not None and any(s <= 0 for s in self.gauss_sigma):
            raise DomainError(f"gaussian sigmas must be positive, got {self.gauss_sigma}")
        if any(o < 1 for o in self.out_size):
            raise DomainError(f"output size must be positive, got {self.out_size}")
        if self.vis_eps is not None and self.vis_eps <= 0:
            raise DomainError("visibility tolerance must be positive")

    @property
    def sigma(self) -> Tuple[float, float, float]:
        return self.gauss_sigma if self.gauss_sigma is not None else default_sigma(self.gauss_size)

    @property
    def visibility_eps(self) -> float:
        # One depth voxel plus slack for the smoothing perturbation.
        return self.vis_eps if self.vis_eps is not None else 1.5 / self.depth

    def resolved(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "depth": self.depth,
            "scale": self.scale,
            "pool_window": list(self.pool_window),
            "gauss_size": list(self.gauss_size),
            "gauss_sigma": list(self.sigma),
            "out_size": list(self.out_size),
            "visibility_eps": self.visibility_eps,
        }


@dataclass(frozen=True)
class VoxelGrid:
    """Depth values over an explicit occupancy mask; empty cells hold NaN."""

    values: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        occ = np.asarray(self.occupied, dtype=bool)
        if vals.ndim != 3 or vals.shape != occ.shape:
            raise DomainError(f"grid shapes disagree: {vals.shape} vs {occ.shape}")
        filled = vals[occ]
        # 1e-9 slack: masked convolution can overshoot the hull by rounding.
        if filled.size and (
            not np.isfinite(filled).all() or filled.min() < -1e-9 or filled.max() > 1.0 + 1e-9
        ):
            raise DomainError("occupied voxels must hold depth values in [0, 1]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "occupied", occ)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DepthMap:
    """Squeezed view: depth, background mask, and near-bright intensity."""

    depth: np.ndarray
    background: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        b = np.asarray(self.background, dtype=bool)
        it = np.asarray(self.intensity, dtype=np.float64)
        if d.ndim != 2 or d.shape != b.shape or d.shape != it.shape:
            raise DomainError("depth, background, and intensity must share one 2D shape")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "background", b)
        object.__setattr__(self, "intensity", it)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class ProjectionRecord:
    """Per input point: grid-resolution pixel, depth, and z-buffer visibility."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        v = np.asarray(self.v, dtype=np.int64)
        z = np.asarray(self.z, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        n = len(u)
        if not (len(v) == len(z) == len(vis) == n):
            raise DomainError("record columns must have equal length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "visible", vis)

    def __len__(self) -> int:
        return len(self.u)


class StageTimes:
    """Thread-safe accumulator of per-stage wall time, in seconds."""

    def __init__(self):
        self._lock = threading.Lock()
        self.totals: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self.totals[name] = self.totals.get(name, 0.0) + elapsed


def quantize(pc: PointCloud, cfg: GridConfig) -> Tuple[VoxelGrid, ProjectionRecord]:
    """Rasterize a normalized cloud; colliding points keep the minimum depth."""
    pts = pc.points
    if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
        raise DomainError("quantize requires coordinates in [0, 1]; normalize the cloud first")
    h, w, d, s = cfg.height, cfg.width, cfg.depth, cfg.scale
    sh, sw = math.ceil(s * h), math.ceil(s * w)
    off_x = int(math.floor((1.0 - s) * h / 2.0))
    off_y = int(math.floor((1.0 - s) * w / 2.0))
    sh_f, sw_f = s * h, s * w

    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    # Eq-style 1-based ceil indices, clamped so x=0 stays on-grid, then the
    # centering offset; converted to 0-based at the end.
    u = np.clip(np.ceil(sh_f * x), 1, sh).astype(np.int64) + off_x - 1
    v = np.clip(np.ceil(sw_f * y), 1, sw).astype(np.int64) + off_y - 1
    k = np.clip(np.ceil(d * z), 1, d).astype(np.int64) - 1

    values = np.full((h, w, d), np.inf)
    np.minimum.at(values, (u, v, k), z)
    occupied = np.isfinite(values)
    grid = VoxelGrid(np.where(occupied, values, np.nan), occupied)
    record = ProjectionRecord(u, v, z.copy(), np.zeros(len(pts), dtype=bool))
    return grid, record


def densify(grid: VoxelGrid, window: Tuple[int, int, int]) -> VoxelGrid:
    """Window minimum pooling over occupied cells; background stays empty.

    Even windows anchor at offsets [-floor(w/2), ceil(w/2)-1] per axis,
    clipped at the borders.
    """
    if any(w < 1 for w in window):
        raise DomainError(f"pool window components must be >= 1, got {window}")
    work = np.where(grid.occupied, grid.values, np.inf)
    for axis, size in enumerate(window):
        if size > 1:
            work = ndimage.minimum_filter1d(work, size=size, axis=axis, mode="constant", cval=np.inf)
    occupied = np.isfinite(work)
    return VoxelGrid(np.where(occupied, work, np.nan), occupied)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    return np.exp(-(t * t) / (2.0 * sigma * sigma))


def smooth(
    grid: VoxelGrid,
    size: Tuple[int, int, int],
    sigma: Tuple[float, float, float],
) -> VoxelGrid:
    """Occupancy-masked separable Gaussian: weights renormalize over the
    occupied support, so background never bleeds into edges. Occupancy is
    unchanged."""
    if any(g < 1 or g % 2 == 0 for g in size):
        raise DomainError(f"gaussian sizes must be odd (or 1), got {size}")
    if any(s <= 0 for s in sigma):
        raise DomainError(f"gaussian sigmas must be positive, got {sigma}")
    num = np.where(grid.occupied, grid.values, 0.0)
    den = grid.occupied.astype(np.float64)
    for axis in range(3):
        if size[axis] > 1:
            kernel = _gaussian_kernel(size[axis], sigma[axis])
            num = ndimage.correlate1d(num, kernel, axis=axis, mode="constant", cval=0.0)
            den = ndimage.correlate1d(den, kernel, axis=axis, mode="constant", cval=0.0)
    safe_den = np.where(grid.occupied, den, 1.0)
    values = np.where(grid.occupied, num / safe_den, np.nan)
    return VoxelGrid(values, grid.occupied.copy())


def column_min(grid: VoxelGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Native-resolution squeeze: per-column minimum depth and background mask."""
    work = np.where(grid.occupied, grid.values, np.inf)
    col = work.min(axis=2)
    background = ~np.isfinite(col)
    return np.where(background, 1.0, col), background


def bilinear_resize(img: np.ndarray, out_size: Tuple[int, int]) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling; identity when sizes match."""
    h, w = img.shape[:2]
    ho, wo = out_size
    r = (np.arange(ho) + 0.5) * (h / ho) - 0.5
    c = (np.arange(wo) + 0.5) * (w / wo) - 0.5
    r0 = np.clip(np.floor(r), 0, h - 1).astype(np.int64)
    c0 = np.clip(np.floor(c), 0, w - 1).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = np.clip(r - r0, 0.0, 1.0)
    fc = np.clip(c - c0, 0.0, 1.0)
    if img.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
        top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
        bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    else:
        fr = fr[:, None]
        fc = fc[None, :]
        top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
        bot = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def nearest_resize(img: np.ndarray, out_size: Tuple[int, int]) -> np.ndarray:
    h, w = img.shape[:2]
    ho, wo = out_size
    r = np.minimum(np.floor((np.arange(ho) + 0.5) * (h / ho)).astype(np.int64), h - 1)
    c = np.minimum(np.floor((np.arange(wo) + 0.5) * (w / wo)).astype(np.int64), w - 1)
    return img[np.ix_(r, c)]


def _finalize_map(depth: np.ndarray, background: np.ndarray, out_size: Tuple[int, int]) -> DepthMap:
    up_depth = bilinear_resize(depth, out_size)
    up_bg = nearest_resize(background, out_size)
    intensity = np.where(up_bg, 0.0, 1.0 - up_depth)
    return DepthMap(up_depth, up_bg, intensity)


def squeeze(grid: VoxelGrid, out_size: Tuple[int, int]) -> DepthMap:
    """Column-minimum depth map, upsampled to out_size (mask: nearest)."""
    depth, background = column_min(grid)
    return _finalize_map(depth, background, out_size)


def project_views(
    pc: PointCloud,
    views: ViewSet,
    cfg: GridConfig,
    max_workers: Optional[int] = None,
    stage_times: Optional[StageTimes] = None,
) -> Tuple[List[DepthMap], List[ProjectionRecord]]:
    """Run orient -> quantize -> densify -> smooth -> squeeze per view.

    The record's visibility flag is a z-buffer test at grid resolution:
    a point is visible when its depth is within the tolerance of the final
    column minimum at its pixel.
    """
    timer = stage_times.stage if stage_times is not None else (lambda name: nullcontext())
    eps = cfg.visibility_eps

    def one(view):
        oriented = apply_view(pc, view)
        with timer("quantize"):
            grid, record = quantize(oriented, cfg)
        with timer("densify"):
            grid = densify(grid, cfg.pool_window)
        with timer("smooth"):
            grid = smooth(grid, cfg.gauss_size, cfg.sigma)
        with timer("squeeze"):
            depth, background = column_min(grid)
        if len(record):
            visible = np.abs(record.z - depth[record.u, record.v]) <= eps
            record = replace(record, visible=visible)
        with timer("upsample"):
            depth_map = _finalize_map(depth, background, cfg.out_size)
        return depth_map, record

    if max_workers is not None and max_workers > 1 and len(views) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, views.views))
    else:
        results = [one(v) for v in views.views]
    return [r[0] for r in results], [r[1] for r in results]


# ---------------------------------------------------------------------------
# Artifact formats


def pgm_bytes(dm: DepthMap) -> bytes:
    """8-bit P5 image of the intensity channel, rounded half-up."""
    h, w = dm.shape
    gray = np.floor(dm.intensity * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()


def ppm_bytes(dm: DepthMap) -> bytes:
    """P6 image with the intensity replicated over three channels."""
    h, w = dm.shape
    gray = np.floor(dm.intensity * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_pgm(dm: DepthMap, path: Union[str, Path]) -> None:
    Path(path).write_bytes(pgm_bytes(dm))


def write_ppm(dm: DepthMap, path: Union[str, Path]) -> None:
    Path(path).write_bytes(ppm_bytes(dm))


def dmap_bytes(dm: DepthMap) -> bytes:
    h, w = dm.shape
    return (
        DMAP_MAGIC
        + struct.pack("<II", h, w)
        + dm.depth.astype("<f4").tobytes()
        + dm.background.astype("u1").tobytes()
    )


def write_dmap(dm: DepthMap, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dmap_bytes(dm))


def read_dmap(path: Union[str, Path]) -> DepthMap:
    path = Path(path)
    data = read_bytes_checked(path)
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need 12")
    if data[:4] != DMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
    h, w = struct.unpack_from("<II", data, 4)
    expected = 12 + h * w * 4 + h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", count=h * w, offset=12).reshape(h, w)
    background = (
        np.frombuffer(data, dtype="u1", count=h * w, offset=12 + h * w * 4).reshape(h, w) > 0
    )
    depth = depth.astype(np.float64)
    intensity = np.where(background, 0.0, 1.0 - depth)
    return DepthMap(depth, background, intensity)


def prec_bytes(record: ProjectionRecord) -> bytes:
    rows = np.empty(len(record), dtype=_PREC_DTYPE)
    rows["u"] = record.u
    rows["v"] = record.v
    rows["z"] = record.z
    rows["visible"] = record.visible.astype("u1")
    return PREC_MAGIC + struct.pack("<I", len(record)) + rows.tobytes()


def write_prec(record: ProjectionRecord, path: Union[str, Path]) -> None:
    Path(path).write_bytes(prec_bytes(record))


def read_prec(path: Union[str, Path]) -> ProjectionRecord:
    path = Path(path)
    data = read_bytes_checked(path)
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need 8")
    if data[:4] != PREC_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
    (count,) = struct.unpack_from("<I", data, 4)
    expected = 8 + count * _PREC_DTYPE.itemsize
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    rows = np.frombuffer(data, dtype=_PREC_DTYPE, count=count, offset=8)
    return ProjectionRecord(
        rows["u"].astype(np.int64),
        rows["v"].astype(np.int64),
        rows["z"].astype(np.float64),
        rows["visible"] > 0,
    )
