"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor or map shapes are incompatible."""


class DegenerateError(ValueError):
    """Raised when a statistic is undefined (constant map, no fixations, empty set)."""


class ConfigError(ValueError):
    """Raised when a run configuration fails validation."""


class NumericError(FloatingPointError):
    """Raised when a non-finite value shows up where it must not."""
