"""Desk- and paper-scale profiles and JSON run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

from .analytical import AnalysisConfig, CalibrationParams
from .errors import ConfigError
from .learned import DESK_NET, PAPER_NET, NetworkSpec, TrainConfig
from .optics import ApertureSpec, LaserSpec, OpticalParams, Pose
from .scene import SweepSpec

__all__ = [
    "RunConfig",
    "desk_profile",
    "paper_profile",
    "profile",
    "analysis_for",
    "load_config",
    "config_from_dict",
    "config_dict",
]


def analysis_for(optics: OpticalParams, laser: LaserSpec, aperture: ApertureSpec) -> AnalysisConfig:
    """Search radii matched to the grating geometry.

    A grating of period T on the marker puts autocorrelation peaks at lag
    rho(d) = lambda0*d/(T*pitch^2) along its normal. Tilt peaks are searched
    inside rho(d_min) and stripes are measured on an annulus around
    [rho(d_min), rho(d_max)].
    """
    if aperture.kind != "grating":
        return AnalysisConfig(exclusion_radius_px=8, threshold=0.05)
    rho = lambda d: laser.lambda0_m * d / (aperture.period_px * optics.pitch_m**2)
    lo, hi = rho(Pose.D_RANGE[0]), rho(Pose.D_RANGE[1])
    margin = 8.0
    half = min(optics.sensor_w_px, optics.sensor_h_px) // 2 - 2
    return AnalysisConfig(
        exclusion_radius_px=4,
        threshold=0.1,
        max_radius_px=lo - margin,
        orient_inner_px=lo - margin,
        orient_outer_px=min(hi + margin, half),
    )


@dataclass(frozen=True)
class RunConfig:
    scale: str = "desk"
    optics: OpticalParams = OpticalParams()
    laser: LaserSpec = LaserSpec()
    aperture: ApertureSpec = ApertureSpec()
    roughness_rms_m: float = 2e-6
    sweep: SweepSpec = SweepSpec()
    analysis: AnalysisConfig = AnalysisConfig()
    train: TrainConfig = TrainConfig()
    network: NetworkSpec = DESK_NET
    crop: Tuple[int, int] = (128, 128)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    master_seed: int = 0

    def calibration_guess(self) -> CalibrationParams:
        """Nominal calibration from the configured optics (zero offset and residual)."""
        return CalibrationParams(
            lambda0_m=self.laser.lambda0_m,
            delta_lambda_m=self.laser.delta_lambda_m,
            pitch_m=self.optics.pitch_m,
        )


DESK_SWEEP = SweepSpec(
    theta_y_range_deg=(0.0, 40.0, 2.5),
    theta_z_range_deg=(0.0, 90.0, 5.0),
    depth_range_m=(0.16, 0.28, 0.04),
)


def desk_profile() -> RunConfig:
    optics = OpticalParams()
    laser = LaserSpec()
    aperture = ApertureSpec()
    return RunConfig(
        "desk",
        optics,
        laser,
        aperture,
        2e-6,
        DESK_SWEEP,
        analysis_for(optics, laser, aperture),
        TrainConfig(),
        DESK_NET,
        (128, 128),
    )


def paper_profile() -> RunConfig:
    """640x360 sensor and (5, 320, 180) network input; used for shape checks."""
    optics = OpticalParams(grid_n=1024, pitch_m=12.5e-6, sensor_w_px=640, sensor_h_px=360)
    laser = LaserSpec()
    aperture = ApertureSpec()
    sweep = SweepSpec((0.0, 40.0, 1.0), (0.0, 90.0, 1.0), (0.16, 0.28, 0.04))
    return RunConfig(
        "paper",
        optics,
        laser,
        aperture,
        2e-6,
        sweep,
        analysis_for(optics, laser, aperture),
        TrainConfig(),
        PAPER_NET,
        (320, 180),
    )


def profile(scale: str) -> RunConfig:
    if scale == "desk":
        return desk_profile()
    if scale == "paper":
        return paper_profile()
    raise ConfigError(f"unknown scale {scale!r}")


def _merge(obj, overrides: dict, where: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(obj)}
    bad = set(overrides) - names
    if bad:
        raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
    conv = {}
    for k, v in overrides.items():
        conv[k] = tuple(v) if isinstance(v, list) else v
    try:
        return replace(obj, **conv)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


_SECTIONS = ("optics", "laser", "aperture", "sweep", "analysis", "train")


def load_config(path: Optional[str], scale: Optional[str] = None) -> RunConfig:
    """Profile defaults overridden by a JSON file.

    Sections ``optics``, ``laser``, ``aperture``, ``sweep``, ``analysis`` and
    ``train`` mirror the corresponding dataclasses. When optics, laser or
    aperture change and no ``analysis`` section is given, search radii are
    re-derived from the new geometry.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(data, scale)


def config_from_dict(data: dict, scale: Optional[str] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    base = profile(scale or data.get("scale", "desk"))
    allowed = set(_SECTIONS) | {"network", "scale", "roughness_rms_m", "crop", "split_ratios", "split_seed", "master_seed"}
    bad = set(data) - allowed
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    kw = {}
    for sec in _SECTIONS:
        if sec in data:
            kw[sec] = _merge(getattr(base, sec), data[sec], sec)
    if "network" in data:
        kw["network"] = _merge(base.network, data["network"], "network")
    for k in ("roughness_rms_m", "split_seed", "master_seed"):
        if k in data:
            kw[k] = data[k]
    for k in ("crop", "split_ratios"):
        if k in data:
            kw[k] = tuple(data[k])
    cfg = replace(base, **kw)
    if "analysis" not in data and any(s in data for s in ("optics", "laser", "aperture")):
        cfg = replace(cfg, analysis=analysis_for(cfg.optics, cfg.laser, cfg.aperture))
    if cfg.crop != tuple(cfg.network.in_shape[1:]):
        cfg = replace(cfg, network=replace(cfg.network, in_shape=(5, *cfg.crop)))
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    """JSON-ready snapshot (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
