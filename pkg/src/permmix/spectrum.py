"""Eigenvalues of overlap matrices and the spectral bounds built from them.

All bounds are on log(1 + chi^2) and use the non-leading eigenvalues
lambda_2 >= ... >= lambda_n of the overlap matrix:

    upper            sum_i -log(1 - lambda_i)
    spectral lower   sum_i -1/2 log(1 - lambda_i^2)
    diagonal lower   -1/2 log n + sum_{i>=2} -1/2 log(1 - A_ii^2)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor

from . import _kernels
from .errors import CapacityError, ConvergenceError, PreconditionError, ValidationError
from .overlap import OverlapMatrix

log = logging.getLogger(__name__)

EIGEN_MAX_N = 200
HESSIAN_MAX_N = 8
SYMMETRY_TOL = 1e-10
LEADING_TOL = 1e-9
SINGULAR_GAP = 1e-12


class AsymmetricMatrixError(ValidationError):
    pass


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: tuple
    source_dim: int
    vectors: np.ndarray | None = field(default=None, repr=False, compare=False)
    sweeps: int = 0
    off_norm: float = 0.0

    @property
    def leading(self) -> float:
        return self.eigenvalues[0]

    @property
    def tail(self) -> np.ndarray:
        return np.asarray(self.eigenvalues[1:])


def _as_array(m) -> np.ndarray:
    return m.entries if isinstance(m, OverlapMatrix) else np.asarray(m, dtype=float)


def eigen_sym(m, rel_tol: float = 1e-13, max_sweeps: int = 100) -> SpectrumReport:
    """Eigenvalues (descending) of a symmetric matrix by cyclic Jacobi."""
    a = _as_array(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValidationError(f"need a nonempty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix entries must be finite")
    n = a.shape[0]
    if n > EIGEN_MAX_N:
        raise CapacityError(f"Jacobi eigensolver limited to n <= {EIGEN_MAX_N}, got {n}")
    asym = float(np.max(np.abs(a - a.T)))
    if asym >= SYMMETRY_TOL:
        raise AsymmetricMatrixError(f"matrix is not symmetric (residual {asym:.3e})")
    a = np.ascontiguousarray(0.5 * (a + a.T))
    w, v, sweeps, off = _kernels.jacobi_eigh(a, rel_tol, max_sweeps)
    if off > rel_tol * np.linalg.norm(a):
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual=float(off))
    order = np.argsort(-w, kind="stable")
    return SpectrumReport(tuple(float(x) for x in w[order]), n, v[:, order], int(sweeps), float(off))


def _spec(s) -> SpectrumReport:
    return s if isinstance(s, SpectrumReport) else eigen_sym(s)


def _bound_tail(s: SpectrumReport) -> np.ndarray:
    if abs(s.leading - 1.0) > LEADING_TOL:
        raise PreconditionError(f"leading eigenvalue {s.leading!r} is not 1 within {LEADING_TOL:g}")
    lam = s.tail
    clamped = np.clip(lam, 0.0, 1.0)
    if np.any(clamped != lam):
        log.debug("clamped eigenvalues %s into [0, 1]", lam[clamped != lam])
    return clamped


def spectral_upper(s) -> float:
    """sum_{i>=2} -log(1 - lambda_i); inf when a lambda_i reaches 1."""
    lam = _bound_tail(_spec(s))
    if np.any(lam >= 1.0 - SINGULAR_GAP):
        return math.inf
    return float(-np.sum(np.log1p(-lam)))


def spectral_lower(s) -> float:
    """sum_{i>=2} -1/2 log(1 - lambda_i^2); inf when a lambda_i reaches 1."""
    lam = _bound_tail(_spec(s))
    if np.any(lam >= 1.0 - SINGULAR_GAP):
        return math.inf
    return float(-0.5 * np.sum(np.log1p(-lam * lam)))


def diagonal_lower(a) -> float:
    """-1/2 log n + sum_{i>=2} -1/2 log(1 - A_ii^2)."""
    e = _as_array(a)
    n = e.shape[0]
    d = np.diag(e)[1:]
    if np.any(d >= 1.0):
        return math.inf
    return float(-0.5 * math.log(n) - 0.5 * np.sum(np.log1p(-d * d)))


@dataclass(frozen=True)
class BoundsReport:
    log_upper: float
    log_lower_spectral: float
    log_lower_diagonal: float
    log_exact: float | None = None

    @property
    def sandwich_ok(self) -> bool | None:
        if self.log_exact is None:
            return None
        return self.log_exact <= self.log_upper


def bounds_report(a, log_exact: float | None = None) -> BoundsReport:
    s = eigen_sym(a)
    return BoundsReport(spectral_upper(s), spectral_lower(s), diagonal_lower(a), log_exact)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HessianCheck:
    lhs: float
    rhs: float
    rel_err: float
    log_lhs: float
    log_rhs: float


def constrained_hessian(a: np.ndarray) -> np.ndarray:
    """Hessian over the free entries z_ij, i, j < n, of a doubly stochastic matrix."""
    n = a.shape[0]
    k = n - 1
    ones = np.ones((k, k))
    h = np.diag(1.0 / a[:k, :k].ravel())
    h += np.kron(np.diag(1.0 / a[:k, n - 1]), ones)
    h += np.kron(ones, np.diag(1.0 / a[n - 1, :k]))
    h += 1.0 / a[n - 1, n - 1]
    return h


def log_abs_det(h: np.ndarray) -> tuple[float, int]:
    """log|det H| and its sign from a pivoted LU factorisation."""
    lu, piv = lu_factor(h, check_finite=True)
    d = np.diag(lu)
    scale = float(np.max(np.abs(d)))
    tiny = np.abs(d) <= 1e-12 * scale
    if np.any(d == 0.0):
        return -math.inf, 0
    sign = int(np.prod(np.sign(d[~tiny])))
    swaps = int(np.sum(piv != np.arange(piv.size)))
    sign *= -1 if swaps % 2 else 1
    return float(np.sum(np.log(np.abs(d)))), sign


def hessian_det_check(a) -> HessianCheck:
    """Compare det of the constrained Hessian with its spectral closed form.

    rhs = prod_{k>=2} (1 - lambda_k^2) / (n prod_ij A_ij).
    """
    e = _as_array(a)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise ValidationError("need a square matrix")
    n = e.shape[0]
    if n < 2:
        raise ValidationError("the constrained Hessian needs n >= 2")
    if n > HESSIAN_MAX_N:
        raise CapacityError(f"Hessian check limited to n <= {HESSIAN_MAX_N}, got {n}")
    if not np.all(e > 0):
        raise ValidationError("every entry must be strictly positive")
    resid = max(np.max(np.abs(e.sum(axis=0) - 1)), np.max(np.abs(e.sum(axis=1) - 1)))
    if resid > 1e-8:
        raise PreconditionError(f"matrix is not doubly stochastic (residual {resid:.3e})")
    log_lhs, sign = log_abs_det(constrained_hessian(e))
    s = eigen_sym(e)
    lam = np.asarray(s.eigenvalues[1:])
    log_rhs = float(-math.log(n) - np.sum(np.log(e)) + np.sum(np.log1p(-lam * lam)))
    rel = abs(math.expm1(log_lhs - log_rhs)) if sign > 0 else math.inf
    return HessianCheck(sign * math.exp(log_lhs), math.exp(log_rhs), rel, log_lhs, log_rhs)
