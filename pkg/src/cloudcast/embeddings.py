"""Embedding matrices, view features, and the provider gateway.

Vectors come from pluggable providers: a directory of precomputed files or
an HTTP encoder service. Whatever the source, everything is checked finite
and L2-normalized before it can reach inference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Protocol, Tuple, Union

import httpx
import numpy as np

from .errors import (
    CapabilityError,
    DomainError,
    FormatError,
    LookupMissError,
    ProtocolError,
    TransportError,
    read_bytes_checked,
)
from .projection import DepthMap, bilinear_resize, ppm_bytes

EMB1_MAGIC = b"EMB1"
EMBD_MAGIC = b"EMBD"

NORM_TOL = 1e-4


def _gate(vec: np.ndarray, what: str) -> np.ndarray:
    """Finite-and-nonzero check applied to every provider output."""
    arr = np.asarray(vec, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DomainError(f"{what}: non-finite embedding component")
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise DomainError(f"{what}: zero-norm embedding cannot be normalized")
    return arr / norms


@dataclass(frozen=True)
class EmbeddingMatrix:
    """K x C row-wise unit-norm weights (class or part text features)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"embedding matrix must be (K>=1, C>=1), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DomainError("embedding matrix contains non-finite values")
        norms = np.linalg.norm(arr, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise DomainError("embedding matrix rows must be unit norm; use from_rows()")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_rows(cls, rows) -> "EmbeddingMatrix":
        return cls(_gate(np.asarray(rows, dtype=np.float64), "matrix row"))

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ViewFeature:
    """Unit-norm global feature of one projected view."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.isfinite(vec).all():
            raise DomainError("view feature contains non-finite values")
        if abs(np.linalg.norm(vec) - 1.0) > NORM_TOL:
            raise DomainError("view feature must be unit norm")
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return len(self.vector)


@dataclass(frozen=True)
class DenseFeature:
    """H_f x W_f x C per-pixel unit-norm features of one view."""

    grid: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.grid, dtype=np.float64)
        if arr.ndim != 3:
            raise DomainError(f"dense feature grid must be (H, W, C), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DomainError("dense feature contains non-finite values")
        norms = np.linalg.norm(arr, axis=2)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise DomainError("dense feature pixels must be unit norm")
        object.__setattr__(self, "grid", arr)

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    def upsampled(self, out_size: Tuple[int, int]) -> np.ndarray:
        """Bilinear resample of the feature grid to the depth-map resolution."""
        if self.grid.shape[:2] == tuple(out_size):
            return self.grid
        return bilinear_resize(self.grid, out_size)


class EmbeddingProvider(Protocol):
    """What the gateway needs from any embedding source."""

    def view_embedding(self, index: int, depth_map: DepthMap) -> np.ndarray: ...

    def view_dense(self, index: int, depth_map: DepthMap) -> np.ndarray: ...

    def text_embedding(self, text: str) -> np.ndarray: ...


class FileProvider:
    """Precomputed vectors on disk: view_{i}.emb1 / view_{i}.embd / text.emb1."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def view_embedding(self, index: int, depth_map: DepthMap) -> np.ndarray:
        path = self.directory / f"view_{index}.emb1"
        if not path.exists():
            raise LookupMissError(f"view {index}: missing embedding file {path}")
        matrix = load_embedding_matrix(path)
        if matrix.num_classes != 1:
            raise FormatError(f"{path}: expected a single row, got {matrix.num_classes}")
        return matrix.data[0]

    def view_dense(self, index: int, depth_map: DepthMap) -> np.ndarray:
        path = self.directory / f"view_{index}.embd"
        if not path.exists():
            raise LookupMissError(f"view {index}: missing dense feature file {path}")
        return load_dense_feature(path).grid

    def text_embedding(self, text: str) -> np.ndarray:
        raise CapabilityError(
            "file provider cannot embed text; supply a precomputed text.emb1 instead"
        )

    def text_matrix(self) -> EmbeddingMatrix:
        path = self.directory / "text.emb1"
        if not path.exists():
            raise LookupMissError(f"missing class weight file {path}")
        return load_embedding_matrix(path)


class HttpProvider:
    """Encoder service: POST PPM bytes (or text) with a mode query parameter."""

    def __init__(self, url: str, timeout: float = 60.0, transport=None):
        self.url = url
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "HttpProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _post(self, mode: str, content: bytes) -> dict:
        try:
            resp = self._client.post(self.url, params={"mode": mode}, content=content)
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding service unreachable: {exc}")
        if resp.status_code != 200:
            raise TransportError(
                f"embedding service returned HTTP {resp.status_code} for mode={mode}"
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"embedding service reply is not JSON: {exc}")

    def view_embedding(self, index: int, depth_map: DepthMap) -> np.ndarray:
        payload = self._post("global", ppm_bytes(depth_map))
        try:
            dim = int(payload["dim"])
            vec = np.asarray(payload["vector"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed global embedding reply: {exc}")
        if vec.shape != (dim,):
            raise ProtocolError(f"embedding reply claims dim {dim} but has {vec.shape}")
        return vec

    def view_dense(self, index: int, depth_map: DepthMap) -> np.ndarray:
        payload = self._post("dense", ppm_bytes(depth_map))
        if "data" not in payload:
            raise CapabilityError("embedding service does not support dense mode")
        try:
            h, w, dim = int(payload["h"]), int(payload["w"]), int(payload["dim"])
            data = np.asarray(payload["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed dense embedding reply: {exc}")
        if data.size != h * w * dim:
            raise ProtocolError(
                f"dense reply claims {h}x{w}x{dim} but carries {data.size} values"
            )
        return data.reshape(h, w, dim)

    def text_embedding(self, text: str) -> np.ndarray:
        payload = self._post("text", text.encode("utf-8"))
        try:
            dim = int(payload["dim"])
            vec = np.asarray(payload["vector"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed text embedding reply: {exc}")
        if vec.shape != (dim,):
            raise ProtocolError(f"text reply claims dim {dim} but has {vec.shape}")
        return vec


def provider_from_spec(spec: str) -> Union[FileProvider, HttpProvider]:
    """Parse "file:DIR" or "http(s)://URL" provider specifications."""
    if spec.startswith("file:"):
        return FileProvider(spec[len("file:"):])
    if spec.startswith(("http://", "https://")):
        return HttpProvider(spec)
    raise DomainError(f"provider must be file:DIR or an http(s) URL, got {spec!r}")


def encode_texts(description_set, provider: EmbeddingProvider) -> EmbeddingMatrix:
    """Average the unit embeddings of each class's descriptions, renormalize."""
    rows = []
    dim = None
    for name, descriptions in description_set.classes.items():
        if not descriptions:
            raise DomainError(f"class {name!r} has no descriptions to encode")
        vecs = []
        for desc in descriptions:
            vec = _gate(provider.text_embedding(desc.text), f"description of {name!r}")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ProtocolError(
                    f"provider changed dimensions: {len(vec)} vs {dim} for {name!r}"
                )
            vecs.append(vec)
        rows.append(np.mean(vecs, axis=0))
    return EmbeddingMatrix.from_rows(np.stack(rows))


def encode_depth_maps(maps: List[DepthMap], provider: EmbeddingProvider) -> List[ViewFeature]:
    features = []
    dim = None
    for index, dm in enumerate(maps):
        vec = _gate(provider.view_embedding(index, dm), f"view {index}")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise ProtocolError(f"provider changed dimensions: view {index} has {len(vec)}, expected {dim}")
        features.append(ViewFeature(vec))
    return features


def encode_dense(maps: List[DepthMap], provider: EmbeddingProvider) -> List[DenseFeature]:
    features = []
    dim = None
    for index, dm in enumerate(maps):
        grid = np.asarray(provider.view_dense(index, dm), dtype=np.float64)
        if grid.ndim != 3:
            raise ProtocolError(f"view {index}: dense feature must be (H, W, C), got {grid.shape}")
        grid = _gate(grid, f"dense view {index}")
        if dim is None:
            dim = grid.shape[2]
        elif grid.shape[2] != dim:
            raise ProtocolError(
                f"provider changed dimensions: view {index} has {grid.shape[2]}, expected {dim}"
            )
        features.append(DenseFeature(grid))
    return features


# ---------------------------------------------------------------------------
# File formats


def save_embedding_matrix(matrix: EmbeddingMatrix, path: Union[str, Path]) -> None:
    k, c = matrix.data.shape
    blob = EMB1_MAGIC + struct.pack("<II", k, c) + matrix.data.astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def load_embedding_matrix(path: Union[str, Path]) -> EmbeddingMatrix:
    path = Path(path)
    data = read_bytes_checked(path)
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need 12")
    if data[:4] != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
    k, c = struct.unpack_from("<II", data, 4)
    if k < 1 or c < 1:
        raise FormatError(f"{path}: degenerate shape {k}x{c}")
    expected = 12 + k * c * 4
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    raw = np.frombuffer(data, dtype="<f4", count=k * c, offset=12).reshape(k, c)
    raw = raw.astype(np.float64)
    if not np.isfinite(raw).all():
        raise FormatError(f"{path}: non-finite embedding value")
    norms = np.linalg.norm(raw, axis=1)
    if (norms == 0).any():
        raise FormatError(f"{path}: zero-norm row {int(np.argmin(norms))}")
    return EmbeddingMatrix(raw / norms[:, None])


def save_dense_feature(feature: DenseFeature, path: Union[str, Path]) -> None:
    h, w, c = feature.grid.shape
    blob = EMBD_MAGIC + struct.pack("<III", h, w, c) + feature.grid.astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def load_dense_feature(path: Union[str, Path]) -> DenseFeature:
    path = Path(path)
    data = read_bytes_checked(path)
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header at byte {len(data)}, need 16")
    if data[:4] != EMBD_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
    h, w, c = struct.unpack_from("<III", data, 4)
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"{path}: degenerate shape {h}x{w}x{c}")
    expected = 16 + h * w * c * 4
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    raw = np.frombuffer(data, dtype="<f4", count=h * w * c, offset=16).reshape(h, w, c)
    raw = raw.astype(np.float64)
    if not np.isfinite(raw).all():
        raise FormatError(f"{path}: non-finite feature value")
    norms = np.linalg.norm(raw, axis=2)
    if (norms == 0).any():
        raise FormatError(f"{path}: zero-norm feature pixel")
    return DenseFeature(raw / norms[:, :, None])
