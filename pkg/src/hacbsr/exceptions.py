"""Exception types raised across the package."""


class HACBSRError(Exception):
    """Base class for all package errors."""


class ShapeError(HACBSRError, ValueError):
    """Array shapes are inconsistent with the requested operation."""


class ParameterDomainError(HACBSRError, ValueError):
    """A parameter lies outside its mathematical domain (e.g. non-PD covariance)."""


class CapacityError(HACBSRError, ValueError):
    """A dense construction would exceed the configured size guard."""


class ConditioningError(HACBSRError, ArithmeticError):
    """A system matrix is singular or too ill-conditioned to solve reliably."""

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class DivergenceError(HACBSRError, RuntimeError):
    """An optimization loss became non-finite or exploded."""

    def __init__(self, message, iteration=None, report=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report
