"""Exception types shared across the package."""


class HardEdgeError(Exception):
    """Base class for all package errors."""


class DomainError(HardEdgeError, ValueError):
    """An argument lies outside the domain of a map."""


class RangeError(HardEdgeError, ValueError):
    """A requested time lies outside the sampled range of a path or field."""


class UsageError(HardEdgeError, ValueError):
    """An operation was called in a regime where it is not defined."""


class ConfigError(HardEdgeError, ValueError):
    """Invalid experiment or grid configuration."""


class IntegrationError(HardEdgeError, ArithmeticError):
    """A numerical integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class IntegrityError(HardEdgeError, ArithmeticError):
    """A structural identity of the exact flow was violated by the integrator."""


class CouplingError(HardEdgeError, ArithmeticError):
    """The coupling construction hit a numerically singular covariance."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class DegenerateBoundaryError(HardEdgeError, ArithmeticError):
    """A boundary construction needed a Wronskian that is numerically zero."""


class ResolutionError(HardEdgeError, ArithmeticError):
    """An eigenvalue scan was too coarse to certify its roots."""
