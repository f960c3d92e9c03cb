"""Exception hierarchy shared across the package."""


class TwoScaleError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TwoScaleError):
    """Array shapes inconsistent with the system dimension."""


class FlowError(TwoScaleError):
    """The periodic flow is invalid at an evaluation point (e.g. singular Jacobian)."""


class QuadratureError(TwoScaleError):
    """Adaptive quadrature failed to converge within the node budget."""

    def __init__(self, message, last_estimates=None):
        super().__init__(message)
        self.last_estimates = last_estimates


class UnsupportedOrderError(TwoScaleError):
    """Requested expansion order is not available for this system or regime."""


class BlowUpError(TwoScaleError):
    """An integration produced a non-finite state."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class AxisError(TwoScaleError):
    """A variable-field evaluation point came too close to the magnetic axis."""


class ConfigError(TwoScaleError):
    """Invalid run configuration."""
