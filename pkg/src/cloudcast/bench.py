"""Wall-clock benchmark of the projection pipeline with per-stage medians.

Measures only the projection itself: orient/quantize/densify/smooth/
squeeze/upsample over the full view fan-out. Encoder latency belongs to
the embedding provider and is out of scope here.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .config import RunConfig
from .errors import DomainError
from .pointcloud import PointCloud, normalize_unit_cube
from .projection import StageTimes, project_views

# Published 10-view projection latency on dedicated hardware; printed next
# to measurements for context, never asserted against.
REFERENCE_LATENCY_MS = 16.7

STAGES = ("quantize", "densify", "smooth", "squeeze", "upsample")


def _stats(samples: List[float]) -> Dict[str, float]:
    arr = np.asarray(samples, dtype=np.float64)
    return {"median_ms": float(np.median(arr)), "p90_ms": float(np.percentile(arr, 90))}


@dataclass(frozen=True)
class BenchReport:
    stages: Dict[str, Dict[str, float]]
    total: Dict[str, float]
    total_without_upsample: Dict[str, float]
    reps: int
    points: int
    num_views: int
    threads: int
    machine: str
    config: dict
    config_hash: str
    reference_ms: float = REFERENCE_LATENCY_MS

    def to_json(self) -> str:
        return json.dumps(
            {
                "stages": self.stages,
                "total": self.total,
                "total_without_upsample": self.total_without_upsample,
                "reps": self.reps,
                "points": self.points,
                "num_views": self.num_views,
                "threads": self.threads,
                "machine": self.machine,
                "config": self.config,
                "config_hash": self.config_hash,
                "reference_ms": self.reference_ms,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        data = json.loads(text)
        return cls(
            stages=data["stages"],
            total=data["total"],
            total_without_upsample=data["total_without_upsample"],
            reps=data["reps"],
            points=data["points"],
            num_views=data["num_views"],
            threads=data["threads"],
            machine=data["machine"],
            config=data["config"],
            config_hash=data["config_hash"],
            reference_ms=data["reference_ms"],
        )

    def to_csv(self) -> str:
        rows = ["stage,median_ms,p90_ms"]
        for name in STAGES:
            if name in self.stages:
                stats = self.stages[name]
                rows.append(f"{name},{stats['median_ms']:.6f},{stats['p90_ms']:.6f}")
        rows.append(f"total,{self.total['median_ms']:.6f},{self.total['p90_ms']:.6f}")
        rows.append(
            "total_without_upsample,"
            f"{self.total_without_upsample['median_ms']:.6f},"
            f"{self.total_without_upsample['p90_ms']:.6f}"
        )
        rows.append(f"reference,{self.reference_ms:.6f},{self.reference_ms:.6f}")
        return "\n".join(rows) + "\n"

    def to_svg(self) -> str:
        """Horizontal bar chart of stage medians, total, and the reference."""
        entries = [(name, self.stages[name]["median_ms"]) for name in STAGES if name in self.stages]
        entries.append(("total", self.total["median_ms"]))
        entries.append(("reference", self.reference_ms))
        peak = max(value for _, value in entries) or 1.0
        bar_h, gap, left, width = 22, 8, 150, 420
        height = len(entries) * (bar_h + gap) + 60
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 120}" '
            f'height="{height}" font-family="monospace" font-size="13">',
            f'<text x="10" y="20">projection latency (ms), {self.num_views} views x '
            f"{self.points} points, median of {self.reps} reps</text>",
        ]
        for i, (name, value) in enumerate(entries):
            y = 40 + i * (bar_h + gap)
            bar = max(value / peak * width, 1.0)
            fill = "#888888" if name == "reference" else "#4477aa"
            parts.append(f'<text x="10" y="{y + 15}">{name}</text>')
            parts.append(
                f'<rect x="{left}" y="{y}" width="{bar:.1f}" height="{bar_h}" fill="{fill}"/>'
            )
            parts.append(f'<text x="{left + bar + 6:.1f}" y="{y + 15}">{value:.2f}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def summary_lines(self) -> List[str]:
        lines = [
            f"projection benchmark: {self.num_views} views x {self.points} points, "
            f"{self.reps} reps, {self.threads} thread(s)",
            f"machine: {self.machine}",
            f"config hash: {self.config_hash}",
        ]
        for name in STAGES:
            if name in self.stages:
                stats = self.stages[name]
                lines.append(
                    f"  {name:<9} median {stats['median_ms']:8.3f} ms   p90 {stats['p90_ms']:8.3f} ms"
                )
        lines.append(
            f"  total     median {self.total['median_ms']:8.3f} ms   p90 {self.total['p90_ms']:8.3f} ms"
        )
        lines.append(
            f"  (no upsample)    {self.total_without_upsample['median_ms']:8.3f} ms   "
            f"p90 {self.total_without_upsample['p90_ms']:8.3f} ms"
        )
        lines.append(
            f"measured total median {self.total['median_ms']:.3f} ms vs published reference "
            f"{self.reference_ms} ms (different hardware; context only)"
        )
        return lines


def run_benchmark(cfg: RunConfig, reps: int) -> BenchReport:
    """Time repeated full view fan-outs on a seeded synthetic cloud.

    One warm-up run is excluded. Stage times are summed across views per
    rep; with a parallel fan-out the stage sums can legitimately exceed the
    wall-clock total.
    """
    if reps < 3:
        raise DomainError(f"need at least 3 repetitions, got {reps}")
    rng = np.random.default_rng(cfg.seed)
    cloud = normalize_unit_cube(PointCloud(rng.random((cfg.points, 3))))
    views = cfg.view_set()
    workers = cfg.threads if cfg.threads > 1 else None

    project_views(cloud, views, cfg.grid, max_workers=workers)  # warm-up

    stage_samples: Dict[str, List[float]] = {name: [] for name in STAGES}
    totals: List[float] = []
    totals_no_up: List[float] = []
    for _ in range(reps):
        timer = StageTimes()
        start = time.perf_counter()
        project_views(cloud, views, cfg.grid, max_workers=workers, stage_times=timer)
        elapsed_ms = (time.perf_counter() - start) * 1e3
        totals.append(elapsed_ms)
        upsample_ms = timer.totals.get("upsample", 0.0) * 1e3
        totals_no_up.append(max(elapsed_ms - upsample_ms, 0.0))
        for name in STAGES:
            stage_samples[name].append(timer.totals.get(name, 0.0) * 1e3)

    machine = f"{platform.platform()} / {platform.machine()}"
    return BenchReport(
        stages={name: _stats(samples) for name, samples in stage_samples.items()},
        total=_stats(totals),
        total_without_upsample=_stats(totals_no_up),
        reps=reps,
        points=cfg.points,
        num_views=len(views),
        threads=cfg.threads,
        machine=machine,
        config=cfg.resolved(),
        config_hash=cfg.config_hash(),
    )
