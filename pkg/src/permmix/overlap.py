"""Channel overlap matrices and doubly stochastic utilities.

The overlap matrix of members P_1..P_n is

    A_ij = (1/n) * integral dP_i dP_j / dPbar,   Pbar = (1/n) sum_k P_k.

Every builder here writes A as a Gram product ``B @ B.T`` with
``B_i(x) = p_i(x) * sqrt(w(x) / sum_k p_k(x))`` over a positive-weight
rule, so the result is symmetric and PSD by construction.  Row sums are never
renormalised: a quadrature failure has to show up as a residual.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, QuadratureError, ValidationError
from .families import (
    Discrete,
    GaussianLoc,
    GaussianLocMulti,
    GaussianScale,
    Member,
    Poisson,
    common_kind,
)
from .quadrature import adaptive_simpson_rule, fixed_panel_rule

ROW_SUM_LIMIT = 1e-6


@dataclass(frozen=True)
class QuadConfig:
    scheme: str = "fixed-panel"
    abs_tol: float = 1e-13
    domain_pad: float = 12.0
    poisson_tail_sd: float = 12.0
    poisson_tail_extra: float = 40.0

    def __post_init__(self):
        if self.scheme not in ("fixed-panel", "adaptive-simpson"):
            raise ValidationError(f"unknown quadrature scheme {self.scheme!r}")
        if not self.abs_tol > 0:
            raise ValidationError("abs_tol must be > 0")
        if not self.domain_pad >= 8:
            raise ValidationError("domain_pad must be >= 8")

    def poisson_cutoff(self, rate_max: float) -> int:
        return int(math.ceil(rate_max + self.poisson_tail_sd * math.sqrt(rate_max + 1.0)
                             + self.poisson_tail_extra))


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    entries: np.ndarray
    members: tuple = ()
    row_sum_residual: float = 0.0
    zero_entries: bool = field(default=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValidationError(f"overlap matrix must be square and nonempty, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_array(cls, entries, members: Sequence[Member] = ()) -> "OverlapMatrix":
        a = np.asarray(entries, dtype=float)
        resid = float(np.max(np.abs(a.sum(axis=1) - 1.0))) if a.size else 0.0
        return cls(a, tuple(members), resid, bool(np.any(a == 0.0)))

    def to_csv(self) -> str:
        return matrix_to_csv(self.entries)


def matrix_to_csv(a: np.ndarray, header: bool = True) -> str:
    buf = io.StringIO()
    if header:
        buf.write(",".join(f"c{j}" for j in range(a.shape[1])) + "\n")
    for row in a:
        buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    return buf.getvalue()


def _gram(logp: np.ndarray, logw: np.ndarray) -> np.ndarray:
    """A = B B^T with log B = logp/1 - lse/2 + logw/2, columns with zero mass dropped."""
    lse = logsumexp(logp, axis=0)
    keep = np.isfinite(lse)
    logb = logp[:, keep] - 0.5 * lse[keep] + 0.5 * logw[keep]
    b = np.exp(logb)
    return b @ b.T


def _continuous_rule(members, cfg: QuadConfig):
    """Integration variable, Jacobian and interval for a continuous family.

    Returns (a, b, to_x, log_jac) where x = to_x(t) and the integral over x
    equals the integral over t of g(to_x(t)) * exp(log_jac(t)).
    """
    if isinstance(members[0], GaussianLoc):
        means = [m.mean for m in members]
        a, b = min(means) - cfg.domain_pad, max(means) + cfg.domain_pad
        return a, b, (lambda t: t), (lambda t: np.zeros_like(t))
    # GaussianScale: the integrand is even in x; integrate x = e^u over (0, inf)
    # and double.  The lower cut sits 45 e-folds below the narrowest member.
    sig = [m.sigma for m in members]
    a = math.log(min(sig)) - 45.0
    b = math.log(cfg.domain_pad * max(sig))
    return a, b, np.exp, (lambda t: t + math.log(2.0))


def density_rule(members: Sequence[Member], cfg: QuadConfig | None = None):
    """Log densities on a positive-weight rule that integrates the overlap to ``cfg.abs_tol``.

    Returns (logp, logw) with logp of shape (n, N): integrals of g(x) against
    the members are approximated by sum_x exp(logw) g(x).
    """
    cfg = cfg or QuadConfig()
    members = tuple(members)
    cls = common_kind(members)
    if cls is GaussianLocMulti:
        raise ValidationError("overlap matrices are not built for multivariate members")
    if cls is Discrete:
        p = np.array([m.pmf for m in members])
        with np.errstate(divide="ignore"):
            return np.log(p), np.zeros(p.shape[1])
    if cls is Poisson:
        xmax = cfg.poisson_cutoff(max(m.rate for m in members))
        x = np.arange(xmax + 1, dtype=float)
        return np.array([m.logpdf(x) for m in members]), np.zeros(x.size)

    lo, hi, to_x, log_jac = _continuous_rule(members, cfg)

    def logp_at(t):
        xs = to_x(t)
        return np.array([m.logpdf(xs) for m in members])

    if cfg.scheme == "fixed-panel":
        t, w, _ = fixed_panel_rule(
            lambda t, w: _gram(logp_at(t), np.log(w) + log_jac(t)), lo, hi, cfg.abs_tol
        )
    else:
        iu = np.triu_indices(len(members))

        def integrand(t):
            lp = logp_at(t)
            lse = logsumexp(lp, axis=0)
            return np.exp(lp[iu[0]] + lp[iu[1]] - lse + log_jac(t))

        t, w = adaptive_simpson_rule(integrand, lo, hi, cfg.abs_tol)
    return logp_at(t), np.log(w) + log_jac(t)


def build_overlap(members: Sequence[Member], cfg: QuadConfig | None = None) -> OverlapMatrix:
    """Overlap matrix of ``members``; quadrature for continuous families."""
    members = tuple(members)
    common_kind(members)
    if len(members) == 1:
        return OverlapMatrix(np.ones((1, 1)), members, 0.0, False)
    a = _gram(*density_rule(members, cfg))
    a = 0.5 * (a + a.T)
    resid = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
    if not resid <= ROW_SUM_LIMIT:
        raise QuadratureError(
            f"overlap row sums deviate from 1 by {resid:.3e} (limit {ROW_SUM_LIMIT:g})",
            residual=resid,
        )
    return OverlapMatrix(a, members, resid, bool(np.any(a == 0.0)))


def _entries(a) -> np.ndarray:
    return a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)


def trace_capacity_lb(a) -> float:
    """Tr(A) - 1: the chi^2 mutual information under a uniform prior on the members."""
    return float(np.trace(_entries(a))) - 1.0


def structure_residuals(a) -> dict:
    """Deviations of ``a`` from the overlap-matrix invariants."""
    m = _entries(a)
    ev = np.linalg.eigvalsh(0.5 * (m + m.T))
    return {
        "symmetry": float(np.max(np.abs(m - m.T))),
        "min_entry": float(m.min()),
        "row_sum": float(np.max(np.abs(m.sum(axis=1) - 1.0))),
        "col_sum": float(np.max(np.abs(m.sum(axis=0) - 1.0))),
        "min_eigenvalue": float(ev[0]),
        "leading_eigenvalue_gap": float(abs(ev[-1] - 1.0)),
    }


def sinkhorn_project(m, tol: float = 1e-12, max_iter: int = 10_000, symmetric: bool = False) -> np.ndarray:
    """Alternate row and column normalisation of a positive matrix.

    With ``symmetric=True`` the iterate is symmetrised as (M + M^T)/2 and
    re-projected until it is both symmetric and doubly stochastic within
    ``tol``.
    """
    x = np.array(m, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValidationError("sinkhorn_project needs a square matrix")
    if not np.all(x > 0):
        raise ValidationError("sinkhorn_project needs strictly positive entries")
    resid = np.inf
    for _ in range(max_iter):
        x /= x.sum(axis=1, keepdims=True)
        x /= x.sum(axis=0, keepdims=True)
        if symmetric:
            x = 0.5 * (x + x.T)
        resid = max(np.max(np.abs(x.sum(axis=1) - 1.0)), np.max(np.abs(x.sum(axis=0) - 1.0)))
        if resid < tol:
            return x
    raise ConvergenceError(f"Sinkhorn did not converge in {max_iter} iterations", residual=float(resid))
