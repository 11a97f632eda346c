"""Exception types shared across the package."""


class NumericError(FloatingPointError):
    """A non-finite value reached a gradient, loss or policy output."""


class ShapeError(ValueError):
    """Array shapes do not agree with a network or buffer layout."""


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value or missing constant."""


class NotReadyError(RuntimeError):
    """A buffer holds fewer transitions than the requested batch."""


class TraceError(RuntimeError):
    """Identification rollouts produced no usable trace."""
