"""Exception types raised by the solvers, designers and simulator."""


class WatermarkError(Exception):
    """Base class for all package errors."""


class InvalidModel(WatermarkError, ValueError):
    """A system or drop model violates its structural invariants."""


class NonConvergence(WatermarkError):
    """A fixed-point iteration hit its iteration cap."""


class UnboundedCost(WatermarkError):
    """The LQG cost iteration diverged; the drop rate is too high for the plant."""


class Singular(WatermarkError):
    """A vectorized fixed-point map is not invertible (operator not stable)."""


class Infeasible(WatermarkError):
    """No grid point satisfies the cost budget."""


class NonPositiveCostForm(WatermarkError):
    """The cost quadratic form of a design point is not positive definite."""


class ConfigMismatch(WatermarkError, ValueError):
    """Drop process, LQG solution and watermark type are inconsistent."""
