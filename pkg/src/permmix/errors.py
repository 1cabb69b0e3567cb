"""Exception hierarchy.

Each family of errors maps to one CLI exit code, so callers that only care
about the category can catch the base class.
"""

from __future__ import annotations


class PermmixError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 4


class ValidationError(PermmixError, ValueError):
    """Bad input: wrong shape, out-of-range parameter, violated precondition."""

    exit_code = 2


class FamilyMismatchError(ValidationError, TypeError):
    """Members of different model kinds were combined."""


class IncompatibleObservationError(ValidationError, TypeError):
    """An observation does not belong to the sample space of a member."""


class PreconditionError(ValidationError):
    """A lemma's hypothesis is not met by the supplied inputs."""


class CapacityError(PermmixError):
    """A size limit or enumeration budget would be exceeded."""

    exit_code = 3


class NumericalError(PermmixError, ArithmeticError):
    """A numerical procedure failed to deliver the requested accuracy."""

    exit_code = 4


class QuadratureError(NumericalError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DegenerateLikelihoodError(NumericalError):
    """Every candidate parameter assigns zero likelihood to the data."""
