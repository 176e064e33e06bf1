"""Pose schedules and labeled synthetic capture sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .optics import (
    ApertureSpec,
    LaserSpec,
    OpticalParams,
    Pose,
    SpeckleFrame,
    expose,
    generate_surface,
    render_intensity,
)

__all__ = [
    "SweepSpec",
    "CaptureSequence",
    "derive_seed",
    "grid_values",
    "make_schedule",
    "simulate_dataset",
    "split_dataset",
    "split_counts",
]

SURFACE_STREAM = 0
NOISE_STREAM = 1


@dataclass(frozen=True)
class SweepSpec:
    """Capture sweep. Ranges are (lo, hi, step); a step of 0 or None means a single value."""

    theta_y_range_deg: Tuple = (0.0, 40.0, 5.0)
    theta_z_range_deg: Tuple = (0.0, 90.0, 15.0)
    depth_range_m: Tuple = (0.20, 0.20, 0.0)
    rpm: Tuple = (0.0,)
    fps: float = 30.0
    frames_per_pose: int = 5
    motion_axis: str = "z"
    factorial: bool = True

    def __post_init__(self):
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if self.frames_per_pose < 5:
            raise ConfigError("frames_per_pose must be at least 5")
        if self.motion_axis not in ("y", "z"):
            raise ConfigError("motion_axis is 'y' or 'z'")
        if len(self.rpm) == 0 or any(r < 0 for r in self.rpm):
            raise ConfigError("rpm must be a non-empty list of non-negative speeds")
        for rng, (lo, hi) in (
            (self.theta_y_range_deg, Pose.Y_RANGE),
            (self.theta_z_range_deg, Pose.Z_RANGE),
            (self.depth_range_m, Pose.D_RANGE),
        ):
            if rng[0] < lo - 1e-12 or rng[1] > hi + 1e-12:
                raise ConfigError(f"range {rng} outside [{lo}, {hi}]")
        object.__setattr__(self, "rpm", tuple(float(r) for r in self.rpm))

    def step_deg(self, rpm: float) -> float:
        """Rotation per frame at the given speed."""
        return rpm * 360.0 / 60.0 / self.fps


@dataclass
class CaptureSequence:
    frames: List[SpeckleFrame]
    schedule: List[Pose]
    provenance: dict = field(default_factory=dict)
    groups: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) != len(self.schedule):
            raise ValueError("frames and schedule differ in length")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        if not self.groups:
            fpp = self.provenance.get("frames_per_pose", 5)
            self.groups = [i // fpp for i in range(len(self.frames))]

    def __len__(self):
        return len(self.frames)

    def group_ids(self) -> List[int]:
        return sorted(set(self.groups))

    def group(self, gid: int) -> List[SpeckleFrame]:
        return [f for f, g in zip(self.frames, self.groups) if g == gid]

    def subset(self, gids: Sequence[int]) -> "CaptureSequence":
        keep = set(gids)
        sel = [i for i, g in enumerate(self.groups) if g in keep]
        return CaptureSequence(
            [self.frames[i] for i in sel],
            [self.schedule[i] for i in sel],
            dict(self.provenance),
            [self.groups[i] for i in sel],
        )


def derive_seed(master_seed: int, *counters: int) -> int:
    """Counter-based seed splitting: (master, stream, index) -> 64-bit seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(c) for c in counters))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(hi) << 32 | int(lo)


def grid_values(rng: Sequence[float]) -> np.ndarray:
    lo, hi = float(rng[0]), float(rng[1])
    step = rng[2] if len(rng) > 2 else None
    if hi < lo:
        raise ConfigError(f"empty range {tuple(rng)}")
    if not step or hi == lo:
        return np.array([lo])
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _grid(spec: SweepSpec) -> List[Tuple[float, float, float]]:
    ys = grid_values(spec.theta_y_range_deg)
    zs = grid_values(spec.theta_z_range_deg)
    ds = grid_values(spec.depth_range_m)
    out = []
    for d in ds:
        if spec.factorial:
            out += [(y, z, d) for y in ys for z in zs]
        else:
            out += [(y, zs[0], d) for y in ys]
            out += [(ys[0], z, d) for z in zs[1:]]
    return out


def make_schedule(spec: SweepSpec) -> List[Pose]:
    """Grid poses, each expanded into ``frames_per_pose`` moving sub-poses.

    Sub-pose k advances the active axis by k * rpm*6/fps degrees. The start
    is pulled back where needed so the whole stack stays inside the sweep
    range, keeping the per-frame increment exact.
    """
    out = []
    F = spec.frames_per_pose
    ax = 0 if spec.motion_axis == "y" else 1
    hi = (spec.theta_y_range_deg[1], spec.theta_z_range_deg[1])[ax]
    lo = (spec.theta_y_range_deg[0], spec.theta_z_range_deg[0])[ax]
    for rpm in spec.rpm:
        inc = spec.step_deg(rpm)
        for g in _grid(spec):
            start = max(min(g[ax], hi - (F - 1) * inc), lo)
            for k in range(F):
                p = list(g)
                p[ax] = start + k * inc
                out.append(Pose(float(p[0]), float(p[1]), float(p[2])))
    return out


def simulate_dataset(
    spec: SweepSpec,
    optics: OpticalParams,
    laser: LaserSpec,
    master_seed: int,
    aperture: ApertureSpec = ApertureSpec(),
    roughness_rms_m: float = 2e-6,
    progress: Optional[Callable[[int, int], None]] = None,
) -> CaptureSequence:
    """Render every scheduled pose with one marker and fresh noise per frame.

    Seeds: surface = derive_seed(master, 0, 0); frame k noise =
    derive_seed(master, 1, k). Identical consecutive poses reuse the
    noiseless render.
    """
    schedule = make_schedule(spec)
    surf_seed = derive_seed(master_seed, SURFACE_STREAM, 0)
    surface = generate_surface(surf_seed, optics, roughness_rms_m, aperture)
    frames = []
    cache = (None, None)
    for k, pose in enumerate(schedule):
        if cache[0] != pose:
            cache = (pose, render_intensity(surface, pose, laser, optics))
        seed = derive_seed(master_seed, NOISE_STREAM, k)
        frames.append(
            SpeckleFrame(
                expose(cache[1], optics, seed),
                pose,
                k,
                optics,
                laser,
                {"surface": surf_seed, "noise": seed},
            )
        )
        if progress is not None:
            progress(k + 1, len(schedule))
    prov = {
        "master_seed": int(master_seed),
        "frames_per_pose": spec.frames_per_pose,
        "surface_seed": surf_seed,
    }
    groups = [k // spec.frames_per_pose for k in range(len(schedule))]
    return CaptureSequence(frames, schedule, prov, groups)


def split_counts(n: int, ratios: Sequence[float]) -> List[int]:
    """Group counts per split: floor for all but the last split, which takes the rest.

    For 63 groups at (0.8, 0.1, 0.1) this gives 50/6/7.
    """
    r = np.asarray(ratios, dtype=float)
    if np.any(r < 0) or not np.isclose(r.sum(), 1.0):
        raise ConfigError("split ratios must be non-negative and sum to 1")
    counts = [int(np.floor(n * x + 1e-9)) for x in r[:-1]]
    counts.append(n - sum(counts))
    return counts


def split_dataset(
    seq: CaptureSequence, ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> Tuple[CaptureSequence, ...]:
    """Partition by pose group, stratified over theta_y deciles.

    Groups are shuffled inside each decile and ranked by their fractional
    position within it, so consecutive slices of the ranking draw evenly
    from every decile.
    """
    gids = seq.group_ids()
    nonzero = sum(1 for x in ratios if x > 0)
    if len(gids) < nonzero:
        raise ConfigError(f"{len(gids)} groups cannot fill {nonzero} splits")
    counts = split_counts(len(gids), ratios)
    label = {}
    for g, p in zip(seq.groups, seq.schedule):
        label.setdefault(g, []).append(p.theta_y_deg)
    ty = np.array([np.median(label[g]) for g in gids])
    order = np.argsort(ty, kind="stable")
    decile = np.empty(len(gids), int)
    decile[order] = (10 * np.arange(len(gids))) // len(gids)
    rng = np.random.default_rng(seed)
    key = np.empty(len(gids))
    for d in range(10):
        members = np.flatnonzero(decile == d)
        if len(members) == 0:
            continue
        perm = rng.permutation(len(members))
        key[members[perm]] = (np.arange(len(members)) + rng.random()) / len(members)
    ranked = [gids[i] for i in np.lexsort((decile, key))]
    out, start = [], 0
    for c in counts:
        out.append(seq.subset(ranked[start : start + c]))
        start += c
    return tuple(out)
