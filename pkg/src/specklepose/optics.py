"""Speckle frame synthesis for a rough, coded-aperture marker.

The marker is a rough reflective plane seen in reflection by a lensless
sensor placed on the illumination axis. Each laser line gives one complex
field; the lines are propagated separately and their intensities add.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .errors import ConfigError, SamplingError

__all__ = [
    "OpticalParams",
    "LaserSpec",
    "ApertureSpec",
    "SurfaceRealization",
    "Pose",
    "SpeckleFrame",
    "make_aperture",
    "generate_surface",
    "reflected_field",
    "transfer_function",
    "propagate_angular_spectrum",
    "max_unaliased_distance",
    "render_intensity",
    "expose",
    "render_speckle_frame",
    "speckle_contrast",
]


@dataclass(frozen=True)
class OpticalParams:
    grid_n: int = 512
    pitch_m: float = 17.5e-6
    sensor_w_px: int = 256
    sensor_h_px: int = 256
    read_noise_dn: float = 1.0
    shot_noise: bool = True
    bit_depth: int = 8
    exposure_dn: float = 40.0
    electrons_per_dn: float = 20.0

    def __post_init__(self):
        n = self.grid_n
        if n < 2 or n & (n - 1):
            raise ConfigError(f"grid_n must be a power of two, got {n}")
        if n < max(self.sensor_w_px, self.sensor_h_px):
            raise ConfigError("grid_n must be at least the sensor size")
        if self.sensor_w_px < 2 or self.sensor_h_px < 2:
            raise ConfigError("sensor must be at least 2x2")
        if not self.pitch_m > 0:
            raise ConfigError("pitch_m must be positive")
        if self.bit_depth not in (8, 16):
            raise ConfigError("bit_depth must be 8 or 16")
        if self.read_noise_dn < 0 or self.exposure_dn <= 0 or self.electrons_per_dn <= 0:
            raise ConfigError("noise and exposure settings must be non-negative/positive")

    @property
    def noiseless(self) -> "OpticalParams":
        return _replace(self, read_noise_dn=0.0, shot_noise=False)


@dataclass(frozen=True)
class LaserSpec:
    lambda0_m: float = 532e-9
    delta_lambda_m: float = 1.0e-9
    source_pos_m: tuple = (0.0, 0.0, 0.0)
    # intensity of the second line relative to the first
    power_ratio: float = 1.0

    def __post_init__(self):
        if not self.lambda0_m > 0:
            raise ConfigError("lambda0_m must be positive")
        if not 0 < self.delta_lambda_m < self.lambda0_m / 100:
            raise ConfigError("delta_lambda_m must satisfy 0 < dl < lambda0/100")
        if len(self.source_pos_m) != 3:
            raise ConfigError("source_pos_m must have three components")
        if self.power_ratio < 0:
            raise ConfigError("power_ratio must be non-negative")
        object.__setattr__(self, "source_pos_m", tuple(float(v) for v in self.source_pos_m))

    @property
    def lambda1_m(self) -> float:
        return self.lambda0_m - self.delta_lambda_m

    @property
    def ratio(self) -> float:
        return self.delta_lambda_m / self.lambda0_m


@dataclass(frozen=True)
class ApertureSpec:
    """Coded aperture on the marker.

    kind
        ``"open"``: fully transmitting; ``"bars"``: circular pupil crossed by
        ``n_stripes`` opaque stripes; ``"grating"``: elliptical pupil with a
        sinusoidal intensity grating of period ``period_px``.
    semi_x, semi_y
        Pupil semi-axes as fractions of half the grid. For a Gaussian
        envelope they are 1/e amplitude radii.

    At zero in-plane rotation the stripes run along x.
    """

    kind: str = "grating"
    semi_x: float = 0.55
    semi_y: float = 0.28
    envelope: str = "gaussian"
    cutoff: float = 3.0
    period_px: float = 5.0
    n_stripes: int = 4
    stripe_width_px: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("open", "bars", "grating"):
            raise ConfigError(f"unknown aperture kind {self.kind!r}")
        if self.envelope not in ("hard", "gaussian"):
            raise ConfigError(f"unknown envelope {self.envelope!r}")
        if self.semi_x <= 0 or self.semi_y <= 0 or self.cutoff <= 0:
            raise ConfigError("pupil size parameters must be positive")


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


@dataclass(frozen=True)
class Pose:
    theta_y_deg: float
    theta_z_deg: float
    d_z_m: float

    Y_RANGE = (0.0, 40.0)
    Z_RANGE = (0.0, 90.0)
    D_RANGE = (0.16, 0.28)

    def clamped(self) -> "Pose":
        return Pose(
            float(np.clip(self.theta_y_deg, *self.Y_RANGE)),
            float(np.clip(self.theta_z_deg, *self.Z_RANGE)),
            float(np.clip(self.d_z_m, *self.D_RANGE)),
        )

    def in_range(self) -> bool:
        return self == self.clamped()

    def as_tuple(self) -> tuple:
        return (self.theta_y_deg, self.theta_z_deg, self.d_z_m)


@dataclass
class SurfaceRealization:
    height_map: np.ndarray
    aperture_mask: np.ndarray
    seed: int

    def __post_init__(self):
        if self.height_map.shape != self.aperture_mask.shape:
            raise ConfigError("height map and aperture mask must share dimensions")


@dataclass
class SpeckleFrame:
    pixels: np.ndarray
    pose: Optional[Pose] = None
    frame_index: int = 0
    optics: Optional[OpticalParams] = None
    laser: Optional[LaserSpec] = None
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError("frame pixels must be 2-D")
        if self.optics is not None:
            h, w = self.pixels.shape
            if (h, w) != (self.optics.sensor_h_px, self.optics.sensor_w_px):
                raise ValueError("frame dimensions do not match optical params")
            if self.pixels.max(initial=0) >= 2 ** self.optics.bit_depth:
                raise ValueError("pixel values exceed bit depth")


def make_aperture(n: int, spec: ApertureSpec) -> np.ndarray:
    """Render an aperture transmission map on an n x n grid (values in [0, 1])."""
    if spec.kind == "open":
        return np.ones((n, n))
    half = n / 2
    y, x = np.mgrid[:n, :n] - n // 2
    q = (x / (spec.semi_x * half)) ** 2 + (y / (spec.semi_y * half)) ** 2
    if spec.envelope == "gaussian":
        if spec.cutoff * max(spec.semi_x, spec.semi_y) ** 2 > 1:
            raise ConfigError("grid too small: truncated Gaussian pupil exceeds the grid")
        pupil = np.exp(-q) * (q <= spec.cutoff)
    else:
        if max(spec.semi_x, spec.semi_y) > 1:
            raise ConfigError("grid too small: pupil exceeds the grid")
        pupil = (q <= 1).astype(float)

    if spec.kind == "grating":
        if spec.period_px < 2:
            raise ConfigError("grid too small: grating period below two samples")
        return pupil * np.sqrt(0.5 + 0.5 * np.cos(2 * np.pi * y / spec.period_px))

    width = spec.stripe_width_px if spec.stripe_width_px is not None else n / 32
    if width < 1:
        raise ConfigError("grid too small: stripe narrower than one sample")
    radius = spec.semi_y * half
    gaps = np.linspace(-radius, radius, spec.n_stripes + 2)[1:-1]
    mask = pupil.copy()
    for c in gaps:
        mask[np.abs(y - c) < width / 2] = 0.0
    return mask


def generate_surface(
    seed: int,
    params: OpticalParams,
    roughness_rms_m: float,
    aperture: ApertureSpec = ApertureSpec(),
) -> SurfaceRealization:
    if roughness_rms_m < 0:
        raise ConfigError("roughness must be non-negative")
    n = params.grid_n
    rng = np.random.default_rng(seed)
    height = rng.standard_normal((n, n)) * roughness_rms_m
    return SurfaceRealization(height, make_aperture(n, aperture), int(seed))


def _rotate(a: np.ndarray, theta_deg: float, mode: str) -> np.ndarray:
    if theta_deg == 0:
        return a
    return ndimage.rotate(a, theta_deg, reshape=False, order=1, mode=mode)


def _rotated_marker(surface: SurfaceRealization, theta_z_deg: float):
    mask = np.clip(_rotate(surface.aperture_mask, theta_z_deg, "constant"), 0.0, 1.0)
    height = _rotate(surface.height_map, theta_z_deg, "reflect")
    return mask, height


def _field(mask, height, theta_y_deg, lam, pitch):
    n = mask.shape[1]
    x = (np.arange(n) - n // 2) * pitch
    # double pass: surface height and tilt both count twice
    ramp = np.exp(1j * 4 * np.pi * np.sin(np.deg2rad(theta_y_deg)) * x / lam)
    return mask * np.exp(1j * 4 * np.pi * height / lam) * ramp[None, :]


def reflected_field(
    surface: SurfaceRealization, pose: Pose, lambda_m: float, pitch_m: float = 17.5e-6
) -> np.ndarray:
    """Complex field leaving the marker for one wavelength.

    In-plane rotation is applied by resampling the mask and height map
    (bilinear); out-of-plane tilt is a linear phase ramp along x.
    """
    if not lambda_m > 0:
        raise ValueError("wavelength must be positive")
    mask, height = _rotated_marker(surface, pose.theta_z_deg)
    return _field(mask, height, pose.theta_y_deg, lambda_m, pitch_m)


def max_unaliased_distance(n: int, pitch_m: float, lambda_m: float) -> float:
    """Largest distance for which the sampled transfer function needs no band limit."""
    return n * pitch_m**2 / lambda_m


def transfer_function(shape, distance_m, lambda_m, pitch_m, band_limit=False) -> np.ndarray:
    ny, nx = shape
    fx = sfft.fftfreq(nx, pitch_m)[None, :]
    fy = sfft.fftfreq(ny, pitch_m)[:, None]
    arg = 1.0 / lambda_m**2 - fx**2 - fy**2
    kz = 2 * np.pi * np.sqrt(np.maximum(arg, 0.0))
    H = np.where(arg > 0, np.exp(1j * kz * distance_m), 0.0)
    if band_limit:
        # Matsushima-Shimobaba limit on each frequency axis
        lim_x = 1.0 / (lambda_m * np.sqrt((2 * distance_m / (nx * pitch_m)) ** 2 + 1))
        lim_y = 1.0 / (lambda_m * np.sqrt((2 * distance_m / (ny * pitch_m)) ** 2 + 1))
        H = H * ((np.abs(fx) <= lim_x) & (np.abs(fy) <= lim_y))
    return H


def propagate_angular_spectrum(
    field: np.ndarray, distance_m: float, lambda_m: float, pitch_m: float, band_limit="auto"
) -> np.ndarray:
    """Angular-spectrum propagation over ``distance_m`` (negative allowed).

    ``band_limit="auto"`` applies the band limit only when the distance
    exceeds what the grid samples without aliasing.
    """
    field = np.asarray(field)
    if not np.all(np.isfinite(field)):
        raise ValueError("field contains non-finite values")
    if band_limit == "auto":
        n = min(field.shape)
        band_limit = abs(distance_m) > max_unaliased_distance(n, pitch_m, lambda_m)
    H = transfer_function(field.shape, distance_m, lambda_m, pitch_m, bool(band_limit))
    return sfft.ifft2(sfft.fft2(field) * H)


def _crop(a: np.ndarray, h: int, w: int) -> np.ndarray:
    cy, cx = a.shape[0] // 2, a.shape[1] // 2
    return a[cy - h // 2 : cy - h // 2 + h, cx - w // 2 : cx - w // 2 + w]


def render_intensity(
    surface: SurfaceRealization, pose: Pose, laser: LaserSpec, params: OpticalParams
) -> np.ndarray:
    """Noiseless sensor intensity: incoherent sum of the two laser lines."""
    n = params.grid_n
    if surface.height_map.shape != (n, n):
        raise ConfigError("surface grid does not match optical params")
    if not pose.d_z_m > 0:
        raise SamplingError("marker depth must be positive")
    dmax = max_unaliased_distance(n, params.pitch_m, laser.lambda0_m)
    if pose.d_z_m > dmax:
        raise SamplingError(
            f"depth {pose.d_z_m:.4g} m exceeds the {dmax:.4g} m the grid can sample"
        )
    mask, height = _rotated_marker(surface, pose.theta_z_deg)
    total = np.zeros((n, n))
    for lam, power in ((laser.lambda0_m, 1.0), (laser.lambda1_m, laser.power_ratio)):
        if power == 0:
            continue
        u = _field(mask, height, pose.theta_y_deg, lam, params.pitch_m)
        u = propagate_angular_spectrum(u, pose.d_z_m, lam, params.pitch_m, band_limit=False)
        total += power * (u.real**2 + u.imag**2)
    return _crop(total, params.sensor_h_px, params.sensor_w_px)


def expose(intensity: np.ndarray, params: OpticalParams, noise_seed: int) -> np.ndarray:
    """Scale to the target mean level, add sensor noise and quantize."""
    mean = intensity.mean()
    signal = intensity * (params.exposure_dn / mean) if mean > 0 else np.zeros_like(intensity)
    rng = np.random.default_rng(noise_seed)
    if params.shot_noise:
        signal = rng.poisson(signal * params.electrons_per_dn) / params.electrons_per_dn
    if params.read_noise_dn > 0:
        signal = signal + rng.normal(0.0, params.read_noise_dn, signal.shape)
    top = 2**params.bit_depth - 1
    dtype = np.uint8 if params.bit_depth == 8 else np.uint16
    return np.clip(np.rint(signal), 0, top).astype(dtype)


def render_speckle_frame(
    surface: SurfaceRealization,
    pose: Pose,
    laser: LaserSpec,
    params: OpticalParams,
    noise_seed: int,
    frame_index: int = 0,
) -> SpeckleFrame:
    pixels = expose(render_intensity(surface, pose, laser, params), params, noise_seed)
    return SpeckleFrame(
        pixels,
        pose,
        frame_index,
        params,
        laser,
        {"surface": surface.seed, "noise": int(noise_seed)},
    )


def speckle_contrast(intensity: np.ndarray) -> float:
    return float(intensity.std() / intensity.mean())
