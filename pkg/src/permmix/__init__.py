"""Permutation mixtures: exact chi^2 via permanents, spectral bounds, and compound oracles."""

from .errors import (
    CapacityError,
    ConvergenceError,
    DegenerateLikelihoodError,
    FamilyMismatchError,
    IncompatibleObservationError,
    NumericalError,
    PermmixError,
    PreconditionError,
    QuadratureError,
    ValidationError,
)
from .families import Discrete, GaussianLoc, GaussianLocMulti, GaussianScale, Poisson
from .overlap import OverlapMatrix, QuadConfig, build_overlap
from .permanent import (
    LogValue,
    chi2_exact,
    mixing_scalar,
    permanent_exact,
    replicated_chi2,
    two_component_chi2,
)
from .spectrum import eigen_sym, spectral_lower, spectral_upper

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConvergenceError",
    "DegenerateLikelihoodError",
    "Discrete",
    "FamilyMismatchError",
    "GaussianLoc",
    "GaussianLocMulti",
    "GaussianScale",
    "IncompatibleObservationError",
    "LogValue",
    "NumericalError",
    "OverlapMatrix",
    "PermmixError",
    "Poisson",
    "PreconditionError",
    "QuadConfig",
    "QuadratureError",
    "ValidationError",
    "build_overlap",
    "chi2_exact",
    "eigen_sym",
    "mixing_scalar",
    "permanent_exact",
    "replicated_chi2",
    "spectral_lower",
    "spectral_upper",
    "two_component_chi2",
]
