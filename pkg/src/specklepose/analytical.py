"""Closed-form rotation recovery and its gradient-descent calibration.

Shift model
-----------
Tilting the marker by theta_y tilts the reflected beam by 2*theta_y, which
appears as a linear phase ramp of 4*pi*sin(theta_y)*x/lambda on the marker.
The ramp is a fixed spatial frequency for each line, so after free-space
propagation over a distance d the two speckle copies drift apart by::

    delta = 2 * d_eff * sin(theta_y) * (dl / l0) / pitch      [pixels]

The illumination is collimated along the shared source/sensor axis, so the
copies separate over the marker-to-sensor leg only and
``d_eff = d_z - S_z``, with S_z the axial offset of the effective source
plane from the sensor. Lateral source components do not enter. A residual
polynomial ``c1*t + c2*t**2`` (t in radians) absorbs model mismatch and is
zero at the origin.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dsp import (
    PeakPair,
    Spectrum,
    autocorrelation,
    fft_logmag,
    find_side_peaks,
    stripe_orientation,
)
from .errors import ConfigError, ConvergenceError, NotResolvable, OutOfRange
from .optics import Pose, SpeckleFrame

__all__ = [
    "CalibrationParams",
    "AnalysisConfig",
    "OptimizerOpts",
    "CalibrationResult",
    "forward_shift_model",
    "estimate_theta_y",
    "estimate_theta_z",
    "measure_shift",
    "calibration_loss",
    "loss_gradient",
    "richardson_gradient",
    "fit_shift_model",
    "calibrate",
    "AnalyticalEstimator",
]

THETA_MAX_DEG = 60.0


@dataclass(frozen=True)
class CalibrationParams:
    lambda0_m: float = 532e-9
    delta_lambda_m: float = 1.0e-9
    source_pos_m: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    pitch_m: float = 17.5e-6
    residual: Tuple[float, float] = (0.0, 0.0)
    reference_orientation_deg: float = 0.0

    def __post_init__(self):
        if not self.lambda0_m > 0 or not 0 < self.delta_lambda_m < self.lambda0_m / 100:
            raise ConfigError("calibration violates 0 < dl < lambda0/100")
        if not self.pitch_m > 0:
            raise ConfigError("pitch must be positive")
        object.__setattr__(self, "source_pos_m", tuple(float(v) for v in self.source_pos_m))
        object.__setattr__(self, "residual", tuple(float(v) for v in self.residual))

    @property
    def ratio(self) -> float:
        return self.delta_lambda_m / self.lambda0_m

    def d_eff(self, depth_m):
        return np.asarray(depth_m, dtype=float) - self.source_pos_m[2]

    def to_dict(self) -> dict:
        return asdict(self)


def forward_shift_model(theta_y_deg, pose_depth_m, calib: CalibrationParams):
    """Expected separation (px) between the two speckle copies."""
    t = np.deg2rad(np.asarray(theta_y_deg, dtype=float))
    c1, c2 = calib.residual
    base = 2.0 * calib.d_eff(pose_depth_m) * np.sin(t) * calib.ratio / calib.pitch_m
    out = base + c1 * t + c2 * t * t
    return float(out) if np.ndim(out) == 0 else out


def estimate_theta_y(
    peaks, pose_depth_m: float, calib: CalibrationParams, tol_deg: float = 1e-10
) -> float:
    """Invert the shift model by bisection on [0, 60] degrees.

    ``peaks`` is a PeakPair or a bare separation in pixels.
    """
    if isinstance(peaks, PeakPair):
        if not peaks.valid:
            raise NotResolvable("no side peak above threshold")
        shift = float(np.hypot(*peaks.offset_px))
    else:
        shift = abs(float(peaks))
    f = lambda th: forward_shift_model(th, pose_depth_m, calib) - shift
    lo, hi = 0.0, THETA_MAX_DEG
    if f(hi) < 0:
        raise OutOfRange(f"shift {shift:.3f} px exceeds the model range")
    if f(lo) >= 0:
        return 0.0
    while hi - lo > tol_deg:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AnalysisConfig:
    """Peak and orientation search settings (pixels in lag units)."""

    exclusion_radius_px: int = 4
    threshold: float = 0.1
    max_radius_px: Optional[float] = None
    orient_inner_px: float = 8.0
    orient_outer_px: Optional[float] = None
    orient_step_deg: float = 0.1


def measure_shift(frame, cfg: AnalysisConfig = AnalysisConfig()) -> PeakPair:
    return find_side_peaks(
        autocorrelation(frame), cfg.exclusion_radius_px, cfg.threshold, cfg.max_radius_px
    )


def _orientation(spec: Spectrum, cfg: AnalysisConfig):
    return stripe_orientation(spec, cfg.orient_inner_px, cfg.orient_outer_px, cfg.orient_step_deg)


def estimate_theta_z(
    spec: Spectrum, reference_orientation_deg: float = 0.0, cfg: AnalysisConfig = AnalysisConfig()
) -> float:
    """In-plane rotation from stripe orientation, mapped into [0, 90]."""
    o = _orientation(spec, cfg)
    if not o.valid:
        raise NotResolvable("spectrum is too isotropic for an orientation")
    rel = (o.angle_deg - reference_orientation_deg) % 180.0
    if rel >= 135.0:
        rel -= 180.0
    return float(np.clip(rel, 0.0, 90.0))


# --- calibration -----------------------------------------------------------


@dataclass(frozen=True)
class OptimizerOpts:
    max_iter: int = 20000
    rel_tol: float = 1e-8
    fd_step: float = 1e-5
    max_backoff: int = 60
    armijo: float = 1e-4
    fit_linear_residual: bool = False
    fit_quadratic_residual: bool = True


@dataclass
class CalibrationResult:
    params: CalibrationParams
    loss: float
    iterations: int
    n_used: int
    trace: List[float] = field(default_factory=list)

    @property
    def rms_px(self) -> float:
        return float(np.sqrt(self.loss / max(self.n_used, 1)))


def _free_names(opts: OptimizerOpts) -> List[str]:
    names = ["ratio", "s_z"]
    if opts.fit_linear_residual:
        names.append("c1")
    if opts.fit_quadratic_residual:
        names.append("c2")
    return names


def _params_from(p: np.ndarray, names, base: CalibrationParams) -> CalibrationParams:
    v = dict(zip(names, p))
    c1, c2 = base.residual
    sx, sy, sz = base.source_pos_m
    ratio = v.get("ratio", base.ratio)
    return replace(
        base,
        delta_lambda_m=ratio * base.lambda0_m,
        source_pos_m=(sx, sy, v.get("s_z", sz)),
        residual=(v.get("c1", c1), v.get("c2", c2)),
    )


def _vector_from(c: CalibrationParams, names) -> np.ndarray:
    all_ = {"ratio": c.ratio, "s_z": c.source_pos_m[2], "c1": c.residual[0], "c2": c.residual[1]}
    return np.array([all_[n] for n in names], dtype=float)


def _residuals(p, names, base, theta, depth, shift):
    # evaluated directly on the raw vector so ratio may leave the LaserSpec range
    v = dict(zip(names, p))
    c1 = v.get("c1", base.residual[0])
    c2 = v.get("c2", base.residual[1])
    t = np.deg2rad(theta)
    d = depth - v.get("s_z", base.source_pos_m[2])
    model = 2.0 * d * np.sin(t) * v.get("ratio", base.ratio) / base.pitch_m + c1 * t + c2 * t * t
    return model - shift


def calibration_loss(p, names, base, theta, depth, shift) -> float:
    r = _residuals(p, names, base, theta, depth, shift)
    return float(np.dot(r, r))


def loss_gradient(z, scale, h, *args) -> np.ndarray:
    """Central-difference gradient of the loss in scaled coordinates."""
    g = np.zeros_like(z)
    for j in range(len(z)):
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (calibration_loss((z + e) * scale, *args) - calibration_loss((z - e) * scale, *args)) / (2 * h)
    return g


def richardson_gradient(z, scale, h, *args) -> np.ndarray:
    """Richardson-extrapolated central difference (fourth-order accurate)."""
    return (4 * loss_gradient(z, scale, h / 2, *args) - loss_gradient(z, scale, h, *args)) / 3


def fit_shift_model(
    theta_deg: Sequence[float],
    depth_m: Sequence[float],
    shift_px: Sequence[float],
    init: CalibrationParams,
    opts: OptimizerOpts = OptimizerOpts(),
) -> CalibrationResult:
    """Least-squares fit of the shift model by gradient descent.

    Parameters are rescaled so each has unit effect on the residuals at the
    starting point; steps use backtracking (halving) line search, so the
    loss never increases across accepted steps.
    """
    theta = np.asarray(theta_deg, float)
    depth = np.asarray(depth_m, float)
    shift = np.asarray(shift_px, float)
    names = _free_names(opts)
    args = (names, init, theta, depth, shift)

    p0 = _vector_from(init, names)
    # unit-order scaling from the Jacobian column norms at the start
    scale = np.empty_like(p0)
    for j, n in enumerate(names):
        step = max(abs(p0[j]) * 1e-3, 1e-9 if n == "ratio" else 1e-6)
        e = np.zeros_like(p0)
        e[j] = step
        col = (_residuals(p0 + e, *args) - _residuals(p0 - e, *args)) / (2 * step)
        nrm = np.linalg.norm(col)
        scale[j] = 1.0 / nrm if nrm > 0 else 1.0
    z = p0 / scale

    loss = calibration_loss(z * scale, *args)
    trace = [loss]
    t = 1.0
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = loss_gradient(z, scale, opts.fd_step, *args)
        gg = float(g @ g)
        if gg == 0.0:
            break
        t *= 2.0
        for _ in range(opts.max_backoff):
            cand = z - t * g
            new = calibration_loss(cand * scale, *args)
            if new <= loss - opts.armijo * t * gg:
                break
            t *= 0.5
        else:
            if gg < 1e-20 * max(loss, 1.0):
                break
            raise ConvergenceError("no decrease after step backoff", trace)
        z = cand
        rel = (loss - new) / max(loss, 1e-300)
        loss = new
        trace.append(loss)
        if rel < opts.rel_tol:
            break
    return CalibrationResult(_params_from(z * scale, names, init), loss, it, len(shift), trace)


def calibrate(
    training: Sequence[Tuple[SpeckleFrame, Pose]],
    init: CalibrationParams,
    opts: OptimizerOpts = OptimizerOpts(),
    analysis: AnalysisConfig = AnalysisConfig(),
) -> CalibrationResult:
    """Fit the shift model to labeled frames; unresolvable frames are dropped.

    The stripe reference orientation is estimated alongside as the circular
    mean of (measured orientation - labeled theta_z).
    """
    theta, depth, shift, ref = [], [], [], []
    for frame, pose in training:
        pk = measure_shift(frame, analysis)
        if pk.valid:
            theta.append(pose.theta_y_deg)
            depth.append(pose.d_z_m)
            shift.append(float(np.hypot(*pk.offset_px)))
        o = _orientation(fft_logmag(frame), analysis)
        if o.valid:
            ref.append(o.angle_deg - pose.theta_z_deg)
    if len(theta) < 8:
        raise ConfigError(f"need at least 8 resolvable frames, got {len(theta)}")
    if max(theta) - min(theta) < 20:
        raise ConfigError("training frames must span at least 20 degrees of theta_y")
    res = fit_shift_model(theta, depth, shift, init, opts)
    if ref:
        ang = np.deg2rad(2 * np.asarray(ref))
        mean = np.rad2deg(np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())) / 2
        res.params = replace(res.params, reference_orientation_deg=float(mean % 180.0))
    return res


class AnalyticalEstimator:
    """Frame-by-frame baseline estimator (theta_y and theta_z; depth is given).

    When no side peak is resolvable the copies overlap inside the exclusion
    disk; the estimate then falls back to the midpoint of the unresolvable
    interval [0, theta_min(d)].
    """

    def __init__(self, calib: CalibrationParams, analysis: AnalysisConfig = AnalysisConfig()):
        self.calib = calib
        self.analysis = analysis

    def theta_min(self, depth_m: float) -> float:
        try:
            return estimate_theta_y(self.analysis.exclusion_radius_px, depth_m, self.calib)
        except OutOfRange:
            return THETA_MAX_DEG

    def estimate(self, frame, depth_m: float) -> Tuple[Pose, bool, bool]:
        pk = measure_shift(frame, self.analysis)
        y_ok = pk.valid
        if y_ok:
            try:
                ty = estimate_theta_y(pk, depth_m, self.calib)
            except OutOfRange:
                ty, y_ok = THETA_MAX_DEG, False
        else:
            ty = 0.5 * self.theta_min(depth_m)
        try:
            tz = estimate_theta_z(fft_logmag(frame), self.calib.reference_orientation_deg, self.analysis)
            z_ok = True
        except NotResolvable:
            tz, z_ok = 45.0, False
        return Pose(ty, tz, float(depth_m)), y_ok, z_ok
