"""Absolute marker rotation from multi-wavelength laser speckle.

Simulation of coded-aperture speckle captures, an autocorrelation-based
analytical estimator with gradient-descent calibration, and a small
convolutional regressor on stacks of log-magnitude spectra.
"""

from .errors import ConfigError, ConvergenceError, FormatError, NotResolvable, OutOfRange, SamplingError
from .optics import ApertureSpec, LaserSpec, OpticalParams, Pose, SpeckleFrame, SurfaceRealization

__version__ = "0.1.0"

__all__ = [
    "ApertureSpec",
    "LaserSpec",
    "OpticalParams",
    "Pose",
    "SpeckleFrame",
    "SurfaceRealization",
    "ConfigError",
    "ConvergenceError",
    "FormatError",
    "NotResolvable",
    "OutOfRange",
    "SamplingError",
]
