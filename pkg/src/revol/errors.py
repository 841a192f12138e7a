"""Exception types shared across the package."""


class RevolError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RevolError):
    """Malformed input file (CSV row, config line)."""


class ValidationError(RevolError):
    """Data violates a structural invariant (bad bar, bad ordering)."""


class SizingError(RevolError):
    """Not enough data for the requested window/split."""


class ConfigError(RevolError):
    """Invalid configuration (ratios, grids, empty splits)."""


class ShapeError(RevolError):
    """Tensor shapes incompatible with the requested operation."""


class NumericDomainError(RevolError):
    """Operand outside an op's domain (log/sqrt of nonpositive values)."""


class StateError(RevolError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class DegenerateVolatilityError(RevolError):
    """Estimated volatility below the usable floor; caller decides policy."""


class MetricUndefinedError(RevolError):
    """Metric has no valid inputs (no qualifying days, zero variance)."""


class CheckpointError(RevolError):
    """Checkpoint file unreadable or incompatible with the config."""


class DivergenceError(RevolError):
    """Training produced a non-finite loss."""
