"""Run configuration: defaults, TOML files, flag-style string parsing.

The TOML file mirrors the CLI flags one to one ("grid = \"112x112x8\"",
"pool = \"6x6x2\"", ...), so a config file and a flag set resolve through
the same parsers.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, Union

from .errors import DomainError, FormatError
from .projection import GridConfig
from .views import ViewSet, load_view_file, make_view_set

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .prompts import (
    DEFAULT_ENGINE,
    DEFAULT_MAX_TOKENS,
    DEFAULT_N_PER_COMMAND,
    DEFAULT_TEMPERATURE,
)


def parse_triple(text: str, what: str) -> Tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise DomainError(f"{what} must look like AxBxC, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise DomainError(f"{what} must hold integers, got {text!r}")


def parse_pair(text: str, what: str) -> Tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise DomainError(f"{what} must look like AxB, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise DomainError(f"{what} must hold integers, got {text!r}")


def parse_sigma(text: str) -> Optional[Tuple[float, float, float]]:
    if text == "auto":
        return None
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise DomainError(f"sigma must be 'auto' or AxBxC, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise DomainError(f"sigma components must be numbers, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs, resolvable to a flat reportable dict."""

    grid: GridConfig = field(default_factory=GridConfig)
    views: str = "ten-view"
    alpha: str = "uniform"
    points: int = 1024
    seed: int = 0
    threads: int = 1
    provider: Optional[str] = None
    llm_url: Optional[str] = None
    cache_dir: Optional[str] = None
    n_per_command: int = DEFAULT_N_PER_COMMAND
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    engine: str = DEFAULT_ENGINE

    def __post_init__(self):
        if self.points < 1:
            raise DomainError("points must be >= 1")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")
        if self.n_per_command < 1:
            raise DomainError("n_per_command must be >= 1")

    def view_set(self) -> ViewSet:
        """Resolve the views field: a preset name or a custom JSON file path."""
        if self.views in ("ten-view", "six-ortho"):
            vs = make_view_set(self.views)
        else:
            vs = make_view_set("custom", load_view_file(self.views))
        if self.alpha != "uniform":
            weights = _load_alpha_file(self.alpha, len(vs))
            vs = ViewSet(vs.views, weights)
        return vs

    def resolved(self) -> dict:
        out = {
            "grid": self.grid.resolved(),
            "views": self.views,
            "alpha": self.alpha,
            "points": self.points,
            "seed": self.seed,
            "threads": self.threads,
            "provider": self.provider,
            "llm_url": self.llm_url,
            "cache_dir": self.cache_dir,
            "n_per_command": self.n_per_command,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "engine": self.engine,
        }
        out["num_views"] = len(self.view_set()) if self.views in ("ten-view", "six-ortho") else None
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _load_alpha_file(path: str, m: int):
    import numpy as np

    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse alpha file: {exc}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (m,):
        raise FormatError(f"{path}: expected {m} view weights, got shape {arr.shape}")
    return arr


_KNOWN_KEYS = {
    "grid", "scale", "pool", "gauss", "sigma", "out_size", "views", "alpha",
    "points", "seed", "threads", "provider", "llm", "cache",
    "n_per_command", "temperature", "max_tokens", "engine",
}


def run_config_from_options(options: dict, base: Optional[RunConfig] = None) -> RunConfig:
    """Apply flag-string options (as the CLI and TOML both produce) to a config."""
    cfg = base or RunConfig()
    unknown = set(options) - _KNOWN_KEYS
    if unknown:
        raise DomainError(f"unknown config key(s): {sorted(unknown)}")

    grid_kwargs = {}
    if "grid" in options:
        h, w, d = parse_triple(str(options["grid"]), "grid")
        grid_kwargs.update(height=h, width=w, depth=d)
    if "scale" in options:
        grid_kwargs["scale"] = float(options["scale"])
    if "pool" in options:
        grid_kwargs["pool_window"] = parse_triple(str(options["pool"]), "pool")
    if "gauss" in options:
        grid_kwargs["gauss_size"] = parse_triple(str(options["gauss"]), "gauss")
    if "sigma" in options:
        grid_kwargs["gauss_sigma"] = parse_sigma(str(options["sigma"]))
    if "out_size" in options:
        grid_kwargs["out_size"] = parse_pair(str(options["out_size"]), "out-size")
    if grid_kwargs:
        cfg = replace(cfg, grid=replace(cfg.grid, **grid_kwargs))

    simple = {
        "views": "views",
        "alpha": "alpha",
        "provider": "provider",
        "llm": "llm_url",
        "cache": "cache_dir",
        "engine": "engine",
    }
    for key, attr in simple.items():
        if key in options:
            cfg = replace(cfg, **{attr: str(options[key])})
    for key, conv in (
        ("points", int),
        ("seed", int),
        ("threads", int),
        ("n_per_command", int),
        ("max_tokens", int),
        ("temperature", float),
    ):
        if key in options:
            cfg = replace(cfg, **{key: conv(options[key])})
    return cfg


def load_run_config(path: Union[str, Path], base: Optional[RunConfig] = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            options = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse config file: {exc}")
    return run_config_from_options(options, base)
