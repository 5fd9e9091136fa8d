"""Exception types shared across the package."""


class RpgaussError(Exception):
    """Base class for all package errors."""


class ConfigError(RpgaussError):
    """Invalid run configuration; message carries the offending field path."""


class SupportError(RpgaussError):
    """A test function, region or transform violates torus guard margins."""


class QuadratureError(RpgaussError):
    """A quadrature failed to meet its tolerance.

    Carries the best available estimate and the achieved error so callers
    can decide whether to proceed anyway.
    """

    def __init__(self, message, estimate=None, achieved_error=None):
        super().__init__(message)
        self.estimate = estimate
        self.achieved_error = achieved_error


class DegenerateWeightsError(RpgaussError):
    """All reweighting factors underflowed to zero.

    The penalty strength is too large for reweighted Monte Carlo; use the
    exact Gaussian solve in the constraints module instead.
    """


class SolverError(RpgaussError):
    """An iterative or dense linear solve did not converge."""


class SampleBudgetError(RpgaussError):
    """The sample budget ran out before the requested confidence was reached."""


class SeparationError(RpgaussError):
    """The conditioning band does not separate the requested probe sites."""
