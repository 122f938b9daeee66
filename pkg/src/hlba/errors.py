"""Exception types shared across the package."""


class HlbaError(Exception):
    """Base class for package errors."""


class ParameterDomainError(HlbaError, ValueError):
    """Parameters outside the model's domain (A > b, tau <= 0, non-PD covariance, ...)."""


class DataValidationError(HlbaError, ValueError):
    """Malformed or out-of-range trial data."""


class DegenerateWeightsError(HlbaError, FloatingPointError):
    """Every importance weight of a subject or cloud is zero."""

    def __init__(self, message, subject=None, iteration=None):
        super().__init__(message)
        self.subject = subject
        self.iteration = iteration
