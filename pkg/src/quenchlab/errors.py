"""Exception types shared across the package."""

from __future__ import annotations


class QuenchlabError(Exception):
    """Base class for all package errors."""


class ArgumentError(QuenchlabError, ValueError):
    """An argument is outside its admissible range."""


class ModelError(QuenchlabError):
    """A model is structurally invalid (reducible chain, non-expanding map, ...)."""


class PreconditionError(QuenchlabError):
    """A mathematical precondition of an operation does not hold."""


class EmptyRecordError(QuenchlabError):
    """A level set is never visited on the supplied path."""


class WindowError(QuenchlabError):
    """A request reaches outside the stored window."""


class PrimitivityError(ModelError):
    """A matrix product never becomes positive within the cutoff."""


class DimensionError(QuenchlabError, ValueError):
    """Operator or vector shapes do not match."""


class ConvergenceError(QuenchlabError):
    """An iteration failed to converge.

    Parameters
    ----------
    message : str
        Human readable description.
    trace : sequence of float
        Residual history collected before giving up.
    """

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class MembershipError(QuenchlabError):
    """A vector is not an interior member of the requested cone."""


class CalibrationError(QuenchlabError):
    """Empirical thresholds cannot reach their probability targets."""


class TruncationError(QuenchlabError):
    """A truncated series has a tail bound that is too large."""


class DegenerateVarianceError(QuenchlabError):
    """The asymptotic variance vanishes, so normalized limits are undefined."""


class DomainError(QuenchlabError):
    """A complex parameter lies outside the admissible perturbation domain."""


class DemandError(QuenchlabError):
    """A window is too short for the requested construction."""


class ConfigError(QuenchlabError):
    """An experiment configuration is malformed.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int or None
        One-based line number in the config file, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
