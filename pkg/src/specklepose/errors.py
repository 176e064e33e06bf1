"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SamplingError(ValueError):
    """Requested geometry cannot be simulated on the configured grid."""


class NotResolvable(ValueError):
    """Measurement is below the resolvable limit (e.g. coincident speckle copies)."""


class OutOfRange(ValueError):
    """Measurement lies outside the range covered by a model."""


class ConvergenceError(RuntimeError):
    """An optimizer failed to make progress."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class FormatError(ValueError):
    """Malformed or incompatible file."""
