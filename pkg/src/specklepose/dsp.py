"""Frequency-domain primitives: log-magnitude spectra, autocorrelation,
sub-pixel side-peak localization and stripe orientation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .optics import SpeckleFrame

__all__ = [
    "Spectrum",
    "Autocorrelogram",
    "PeakPair",
    "Orientation",
    "fft_logmag",
    "central_crop",
    "autocorrelation",
    "autocorrelation_from_spectrum",
    "brute_force_autocorrelation",
    "parabola_vertex",
    "find_side_peaks",
    "stripe_orientation",
]

FrameLike = Union[SpeckleFrame, np.ndarray]


def _pixels(frame: FrameLike) -> np.ndarray:
    a = frame.pixels if isinstance(frame, SpeckleFrame) else frame
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("expected a non-empty 2-D frame")
    return a


@dataclass
class Spectrum:
    logmag: np.ndarray
    source_dims: Tuple[int, int]

    def __post_init__(self):
        if any(s % 2 for s in self.logmag.shape):
            raise ValueError("spectrum dimensions must be even")
        if not np.all(np.isfinite(self.logmag)):
            raise ValueError("spectrum contains non-finite values")

    @property
    def cropped(self) -> bool:
        return self.logmag.shape != tuple(self.source_dims)


@dataclass
class Autocorrelogram:
    ac: np.ndarray

    def __post_init__(self):
        cy, cx = self.center
        if not np.all(np.isfinite(self.ac)) or abs(self.ac[cy, cx] - 1.0) > 1e-9:
            raise ValueError("autocorrelogram must be finite with unit zero lag")

    @property
    def center(self) -> Tuple[int, int]:
        return self.ac.shape[0] // 2, self.ac.shape[1] // 2


@dataclass
class PeakPair:
    offset_px: Tuple[float, float]
    prominence: float
    valid: bool
    mirror_offset_px: Tuple[float, float] = (0.0, 0.0)

    @property
    def separation_px(self) -> float:
        """Distance of one copy from zero lag (0 when no peak is resolved)."""
        return float(np.hypot(*self.offset_px)) if self.valid else 0.0


@dataclass
class Orientation:
    angle_deg: float
    anisotropy: float
    valid: bool


def fft_logmag(frame: FrameLike) -> Spectrum:
    a = _pixels(frame)
    F = sfft.fft2(a - a.mean())
    return Spectrum(sfft.fftshift(np.log1p(np.abs(F))), a.shape)


def central_crop(spec: Spectrum, w: int, h: int) -> Spectrum:
    """Keep a w x h window (columns x rows) around zero frequency."""
    H, W = spec.logmag.shape
    if w > W or h > H or w < 1 or h < 1:
        raise ValueError(f"crop {w}x{h} does not fit spectrum {W}x{H}")
    r0, c0 = H // 2 - h // 2, W // 2 - w // 2
    return Spectrum(spec.logmag[r0 : r0 + h, c0 : c0 + w].copy(), spec.source_dims)


def _normalize(c: np.ndarray) -> Autocorrelogram:
    c = sfft.fftshift(c)
    zero = c[c.shape[0] // 2, c.shape[1] // 2]
    if not zero > 0:
        raise ValueError("zero-variance frame: autocorrelation undefined")
    return Autocorrelogram(c / zero)


def autocorrelation(frame: FrameLike) -> Autocorrelogram:
    """Cyclic autocorrelation via the power spectrum, zero lag at the center."""
    a = _pixels(frame)
    a = a - a.mean()
    if not np.any(a):
        raise ValueError("zero-variance frame: autocorrelation undefined")
    F = sfft.fft2(a)
    return _normalize(sfft.ifft2(F.real**2 + F.imag**2).real)


def autocorrelation_from_spectrum(spec: Spectrum) -> Autocorrelogram:
    """Autocorrelation recovered from an uncropped log-magnitude spectrum."""
    if spec.cropped:
        raise ValueError("autocorrelation needs the full spectrum")
    power = np.expm1(spec.logmag) ** 2
    return _normalize(sfft.ifft2(sfft.ifftshift(power)).real)


def brute_force_autocorrelation(frame: FrameLike) -> np.ndarray:
    """Direct cyclic autocorrelation, O(N^4); reference for small frames."""
    a = _pixels(frame)
    a = a - a.mean()
    H, W = a.shape
    out = np.empty((H, W))
    for u in range(H):
        for v in range(W):
            out[u, v] = np.sum(a * np.roll(a, (-u, -v), axis=(0, 1)))
    out = np.fft.fftshift(out)
    return out / out[H // 2, W // 2]


def parabola_vertex(fm: float, f0: float, fp: float) -> float:
    """Offset of the vertex of the parabola through (-1, fm), (0, f0), (1, fp)."""
    den = fm - 2 * f0 + fp
    if den == 0:
        return 0.0
    return 0.5 * (fm - fp) / den


def _refine(a: np.ndarray, r: int, c: int) -> Tuple[float, float]:
    H, W = a.shape
    du = parabola_vertex(a[r, (c - 1) % W], a[r, c], a[r, (c + 1) % W])
    dv = parabola_vertex(a[(r - 1) % H, c], a[r, c], a[(r + 1) % H, c])
    return c + du, r + dv


def find_side_peaks(
    ac: Autocorrelogram,
    exclusion_radius_px: int = 8,
    threshold: float = 0.05,
    max_radius_px: Optional[float] = None,
) -> PeakPair:
    """Locate the pair of symmetric side peaks produced by two shifted copies.

    Offsets are (du, dv) in (column, row) lag units. The search covers the
    half-plane dv > 0 (or dv = 0, du > 0) outside the exclusion disk.
    Prominence is the peak value above the median of the search region.
    """
    if exclusion_radius_px < 2:
        raise ValueError("exclusion radius must be at least 2 px")
    a = ac.ac
    H, W = a.shape
    cy, cx = ac.center
    yy, xx = np.mgrid[:H, :W]
    rr = np.hypot(xx - cx, yy - cy)
    region = (rr > exclusion_radius_px) & (yy > 0) & (yy < H - 1) & (xx > 0) & (xx < W - 1)
    if max_radius_px is not None:
        region &= rr <= max_radius_px
    half = region & ((yy > cy) | ((yy == cy) & (xx > cx)))
    if not half.any():
        return PeakPair((0.0, 0.0), 0.0, False)
    masked = np.where(half, a, -np.inf)
    r, c = np.unravel_index(np.argmax(masked), a.shape)
    prominence = float(a[r, c] - np.median(a[region]))
    x, y = _refine(a, r, c)
    offset = (x - cx, y - cy)
    # mirror copy: local maximum around the reflected position
    mr, mc = 2 * cy - r, 2 * cx - c
    win = a[mr - 1 : mr + 2, mc - 1 : mc + 2]
    k = np.unravel_index(np.argmax(win), win.shape)
    mx, my = _refine(a, mr - 1 + k[0], mc - 1 + k[1])
    mirror = (mx - cx, my - cy)
    symmetric = np.hypot(offset[0] + mirror[0], offset[1] + mirror[1]) <= 0.5
    return PeakPair(offset, prominence, bool(prominence > threshold and symmetric), mirror)


def stripe_orientation(
    spec: Spectrum,
    exclusion_radius_px: float = 8,
    outer_radius_px: Optional[float] = None,
    step_deg: float = 0.1,
    highpass_sigma: float = 3.0,
    min_anisotropy: float = 2.0,
) -> Orientation:
    """Orientation of the frame's stripe structure in [0, 180) degrees.

    Works in the lag domain: the stripes imprinted by the coded aperture
    give autocorrelation peaks along the stripe normal. The autocorrelation
    is high-passed, its positive part squared, and summed along rays through
    zero lag over an annulus; the strongest ray is the normal direction.
    Angles are counter-clockwise with rows pointing down the image.
    """
    a = autocorrelation_from_spectrum(spec).ac
    a = a - ndimage.gaussian_filter(a, highpass_sigma, mode="wrap")
    a = np.maximum(a, 0.0) ** 2
    H, W = a.shape
    cy, cx = H // 2, W // 2
    rmax = min(cy, cx) - 2 if outer_radius_px is None else outer_radius_px
    radii = np.arange(exclusion_radius_px, rmax, 0.5)
    phis = np.arange(0.0, 180.0, step_deg)
    ph = np.deg2rad(phis)
    xs = cx + np.outer(np.cos(ph), radii)
    ys = cy - np.outer(np.sin(ph), radii)
    E = ndimage.map_coordinates(a, [ys.ravel(), xs.ravel()], order=1).reshape(xs.shape).sum(1)
    n = len(E)
    i = int(np.argmax(E))
    frac = parabola_vertex(E[(i - 1) % n], E[i], E[(i + 1) % n])
    normal = phis[i] + step_deg * frac
    mean = E.mean()
    anis = float((E[i] - np.median(E)) / mean) if mean > 0 else 0.0
    return Orientation(float((normal - 90.0) % 180.0), anis, anis > min_anisotropy)
