"""Accuracy metrics, the comparison table and throughput benchmarking."""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .learned import StreamEstimator, TrainConfig, _single_thread
from .optics import Pose

__all__ = [
    "TargetStats",
    "MetricsReport",
    "abs_errors",
    "mae_std",
    "comparison_table",
    "BenchResult",
    "bench_throughput",
    "PAPER_ACCURACY_DEG",
]

# published accuracies of the hardware system, degrees
PAPER_ACCURACY_DEG = {"learned": 0.3, "analytical": 0.6}


@dataclass
class TargetStats:
    mae: float
    std: float


@dataclass
class MetricsReport:
    """Per-target MAE and std of absolute errors (degrees, degrees, cm).

    ``std`` is the population standard deviation of the absolute errors.
    """

    theta_y: TargetStats
    theta_z: TargetStats
    depth_cm: TargetStats
    count: int
    config_hash: str = ""
    method: str = ""
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("a report needs at least one sample")

    def to_dict(self) -> dict:
        return asdict(self)

    def lines(self) -> List[str]:
        out = [f"method: {self.method or '-'}   samples: {self.count}   config: {self.config_hash[:16] or '-'}"]
        for name, unit, s in (
            ("theta_y", "deg", self.theta_y),
            ("theta_z", "deg", self.theta_z),
            ("depth", "cm", self.depth_cm),
        ):
            out.append(f"  {name:8s} MAE {s.mae:8.4f} {unit:3s}  std {s.std:8.4f} {unit}")
        for k, v in self.timing.items():
            out.append(f"  {k}: {v}")
        return out


def _poses(seq) -> np.ndarray:
    return np.array([p.as_tuple() if isinstance(p, Pose) else tuple(p) for p in seq], dtype=float).reshape(-1, 3)


def abs_errors(predictions: Sequence, labels: Sequence) -> np.ndarray:
    """Absolute errors per sample: (theta_y deg, theta_z deg, depth cm)."""
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    err = np.abs(_poses(predictions) - _poses(labels))
    err[:, 2] *= 100.0
    return err


def mae_std(
    predictions: Sequence, labels: Sequence, config_hash: str = "", method: str = "", timing: Optional[dict] = None
) -> MetricsReport:
    if len(labels) < 1:
        raise ValueError("need at least one sample")
    e = abs_errors(predictions, labels)
    stats = [TargetStats(float(e[:, i].mean()), float(e[:, i].std())) for i in range(3)]
    return MetricsReport(*stats, count=len(e), config_hash=config_hash, method=method, timing=dict(timing or {}))


def comparison_table(analytical: MetricsReport, learned: MetricsReport) -> str:
    """Side-by-side accuracy of both estimators against the published figures."""
    if analytical.config_hash != learned.config_hash or analytical.count != learned.count:
        raise ConfigError("reports come from different test splits; refusing to compare")
    rows = [
        ("Learned (5-frame CNN)", "Abs.", 3, 1, PAPER_ACCURACY_DEG["learned"], learned),
        ("Analytical baseline", "Abs.", 2, 1, PAPER_ACCURACY_DEG["analytical"], analytical),
    ]
    head = f"{'Method':24s} {'Type':5s} {'DOF':>3s} {'Sensors':>7s} {'paper (hardware)':>17s} {'this run (synthetic)':>21s}"
    lines = [head, "-" * len(head)]
    for name, kind, dof, sensors, paper, rep in rows:
        lines.append(
            f"{name:24s} {kind:5s} {dof:3d} {sensors:7d} {paper:17.1f} {rep.theta_y.mae:21.2f}"
        )
    lines.append("")
    lines.append("Accuracy column: theta_y MAE in degrees.")
    lines.append(
        f"this run, learned: theta_z MAE {learned.theta_z.mae:.2f} deg, depth MAE {learned.depth_cm.mae:.3f} cm"
    )
    lines.append(f"test split: {learned.count} samples, config {learned.config_hash[:16]}")
    return "\n".join(lines) + "\n"


@dataclass
class BenchResult:
    fps_runs: List[float]
    n_frames: int

    @property
    def median_fps(self) -> float:
        return float(statistics.median(self.fps_runs))


def bench_throughput(net, frames: Sequence, n_frames: int = 100, runs: int = 5, cfg=None, crop=(128, 128)) -> BenchResult:
    """Frames per second through the sliding-window estimator, including preprocessing.

    Frames are cycled if the source is shorter than ``n_frames``. Each run
    starts a fresh window; the rate counts every pushed frame.
    """
    if n_frames < 50:
        raise ValueError("benchmark needs at least 50 frames")
    if not frames:
        raise ValueError("no frames to benchmark")
    cfg = cfg or TrainConfig()
    src = [frames[i % len(frames)] for i in range(n_frames)]
    pix = [f.pixels if hasattr(f, "pixels") else f for f in src]
    rates = []
    with _single_thread():
        for _ in range(runs):
            est = StreamEstimator(net, cfg, crop)
            t = time.perf_counter()
            for p in pix:
                est.push(p)
            rates.append(n_frames / (time.perf_counter() - t))
    return BenchResult(rates, n_frames)
