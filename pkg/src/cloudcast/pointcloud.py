"""Point cloud container plus loading, normalization, and subsampling.

Two on-disk formats are supported:

* ``ascii-xyz``: one ``x y z`` line per point, optional trailing integer
  part label, ``#`` starts a comment line.
* ``binary-pcv2``: magic ``PCV2``, little-endian u32 point count, a label
  flag byte, ``N x 3`` float32 coordinates, and (flag == 1) ``N`` u16 labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DomainError, FormatError, read_bytes_checked, read_text_checked

PCV2_MAGIC = b"PCV2"
FORMATS = ("ascii-xyz", "binary-pcv2")

# Header: magic(4) + count(4) + label flag(1).
_PCV2_HEADER = 9


@dataclass(frozen=True)
class PointCloud:
    """N points with optional per-point integer part labels."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DomainError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise DomainError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (len(pts),):
                raise DomainError(
                    f"labels must have one entry per point: {lab.shape} vs {len(pts)} points"
                )
            if len(lab) and lab.min() < 0:
                raise DomainError("part labels must be nonnegative")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, labels)


def normalize_unit_cube(pc: PointCloud) -> PointCloud:
    """Map the tight bounding box into [0,1]^3 with a single global scale.

    All axes are divided by the largest extent so the shape's aspect ratio
    survives; shorter axes are centered inside [0,1] and degenerate (flat)
    axes collapse to 0.5.
    """
    if len(pc) == 0:
        raise DomainError("cannot normalize an empty point cloud")
    lo = pc.points.min(axis=0)
    hi = pc.points.max(axis=0)
    extent = hi - lo
    scale = float(extent.max())
    if scale == 0.0:
        out = np.full_like(pc.points, 0.5)
    else:
        span = extent / scale
        out = (pc.points - lo) / scale + (1.0 - span) / 2.0
    return PointCloud(out, pc.labels)


def sample_points(pc: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniformly sample n points, without replacement while n <= N."""
    if len(pc) == 0:
        raise DomainError("cannot sample from an empty point cloud")
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pc), size=n, replace=n > len(pc))
    labels = pc.labels[idx] if pc.labels is not None else None
    return PointCloud(pc.points[idx], labels)


def load_point_cloud(path: Union[str, Path], fmt: str) -> PointCloud:
    path = Path(path)
    if fmt == "ascii-xyz":
        return _load_ascii(path)
    if fmt == "binary-pcv2":
        return _load_pcv2(path)
    raise DomainError(f"unknown point cloud format {fmt!r}; expected one of {FORMATS}")


def save_point_cloud(pc: PointCloud, path: Union[str, Path], fmt: str) -> None:
    path = Path(path)
    if fmt == "ascii-xyz":
        _save_ascii(pc, path)
    elif fmt == "binary-pcv2":
        _save_pcv2(pc, path)
    else:
        raise DomainError(f"unknown point cloud format {fmt!r}; expected one of {FORMATS}")


def load_label_sidecar(path: Union[str, Path]) -> np.ndarray:
    """Read one integer label per line, aligned with ascii-xyz data rows."""
    labels = []
    for lineno, raw in enumerate(read_text_checked(path).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: expected an integer label, got {line!r}")
    return np.asarray(labels, dtype=np.int64)


def _load_ascii(path: Path) -> PointCloud:
    points: list = []
    labels: list = []
    for lineno, raw in enumerate(read_text_checked(path).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) not in (3, 4):
            raise FormatError(f"{path}: line {lineno}: expected 3 or 4 columns, got {len(cols)}")
        try:
            xyz = [float(c) for c in cols[:3]]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: malformed coordinate")
        if not all(np.isfinite(xyz)):
            raise FormatError(f"{path}: line {lineno}: non-finite coordinate")
        if len(cols) == 4:
            try:
                labels.append(int(cols[3]))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: malformed label {cols[3]!r}")
        elif labels:
            raise FormatError(f"{path}: line {lineno}: missing label column")
        if labels and len(labels) != len(points) + 1:
            raise FormatError(f"{path}: line {lineno}: unexpected label column")
        points.append(xyz)
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), 3)
    return PointCloud(pts, np.asarray(labels, dtype=np.int64) if labels else None)


def _save_ascii(pc: PointCloud, path: Path) -> None:
    lines = []
    for i, (x, y, z) in enumerate(pc.points):
        row = f"{x:.9g} {y:.9g} {z:.9g}"
        if pc.labels is not None:
            row += f" {pc.labels[i]}"
        lines.append(row)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _load_pcv2(path: Path) -> PointCloud:
    data = read_bytes_checked(path)
    if len(data) < _PCV2_HEADER:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need {_PCV2_HEADER}")
    if data[:4] != PCV2_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0, expected {PCV2_MAGIC!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    flag = data[8]
    if flag not in (0, 1):
        raise FormatError(f"{path}: bad label flag {flag} at byte 8")
    expected = _PCV2_HEADER + count * 12 + (count * 2 if flag else 0)
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload size mismatch at byte {min(len(data), expected)}: "
            f"have {len(data)} bytes, expected {expected}"
        )
    pts = np.frombuffer(data, dtype="<f4", count=count * 3, offset=_PCV2_HEADER)
    pts = pts.reshape(count, 3).astype(np.float64)
    if not np.isfinite(pts).all():
        raise FormatError(f"{path}: non-finite coordinate in payload")
    labels = None
    if flag:
        labels = np.frombuffer(
            data, dtype="<u2", count=count, offset=_PCV2_HEADER + count * 12
        ).astype(np.int64)
    return PointCloud(pts, labels)


def _save_pcv2(pc: PointCloud, path: Path) -> None:
    flag = 1 if pc.labels is not None else 0
    if flag and len(pc) and pc.labels.max() > 0xFFFF:
        raise DomainError("binary-pcv2 stores labels as u16; label out of range")
    blob = bytearray()
    blob += PCV2_MAGIC
    blob += struct.pack("<IB", len(pc), flag)
    blob += pc.points.astype("<f4").tobytes()
    if flag:
        blob += pc.labels.astype("<u2").tobytes()
    Path(path).write_bytes(bytes(blob))
