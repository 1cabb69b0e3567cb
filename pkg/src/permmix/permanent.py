"""Exact permanents and the permanent form of the chi^2 divergence.

For members P_1..P_n with overlap matrix A,

    1 + chi^2(permutation mixture || i.i.d. product) = n^n / n! * Perm(A).

Permanents are returned as ``LogValue`` so that neither n^n nor tiny
likelihood products overflow or underflow.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching
from scipy.special import gammaln, logsumexp, xlogy

from . import _kernels
from .errors import CapacityError, NumericalError, ValidationError
from .overlap import OverlapMatrix, QuadConfig, build_overlap
from .quadrature import integrate

log = logging.getLogger(__name__)

NAIVE_MAX_N = 9
RYSER_MAX_N = 30
BALANCE_SWEEPS = 24
CONTINGENCY_BUDGET = 10 ** 8
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LogValue:
    """sign * exp(log_magnitude), or exactly zero when ``zero_flag`` is set."""

    log_magnitude: float
    zero_flag: bool = False
    sign: int = 1

    @classmethod
    def zero(cls) -> "LogValue":
        return cls(-math.inf, True, 0)

    @property
    def value(self) -> float:
        if self.zero_flag:
            return 0.0
        try:
            return self.sign * math.exp(self.log_magnitude)
        except OverflowError:
            return self.sign * math.inf

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class ColumnScaling:
    """Per-column divisors; Perm(M) = exp(log_correction) * Perm(M / scale)."""

    scale_factors: tuple
    log_correction: float

    @classmethod
    def of(cls, m: np.ndarray) -> "ColumnScaling":
        s = np.max(np.abs(m), axis=0)
        s = np.where(s > 0, s, 1.0)
        return cls(tuple(float(v) for v in s), float(np.sum(np.log(s))))

    def apply(self, m: np.ndarray) -> np.ndarray:
        return m / np.asarray(self.scale_factors)[None, :]


def _check_matrix(m, engine: str) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValidationError(f"need a nonempty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix entries must be finite")
    if np.any(a < 0):
        raise ValidationError("matrix entries must be nonnegative")
    n = a.shape[0]
    if engine == "naive":
        if n > NAIVE_MAX_N:
            raise CapacityError(f"naive permanent limited to n <= {NAIVE_MAX_N}, got {n}")
    elif engine == "ryser":
        if n > RYSER_MAX_N:
            raise CapacityError(f"Ryser permanent limited to n <= {RYSER_MAX_N}, got {n}")
    else:
        raise ValidationError(f"unknown permanent engine {engine!r}")
    return a


def has_perfect_matching(m: np.ndarray) -> bool:
    """True iff some permutation avoids every zero entry of ``m``."""
    match = maximum_bipartite_matching(csr_matrix(m != 0), perm_type="column")
    return bool(np.all(match >= 0))


def matchable_entries(m: np.ndarray) -> np.ndarray:
    """Boolean mask of nonzero entries that lie on at least one perfect matching.

    An unmatched edge (k, j) can be swapped into a perfect matching exactly
    when row k and column j share a strongly connected component of the
    graph with unmatched edges row -> column and matched edges column -> row.
    """
    nz = np.asarray(m) != 0
    n = nz.shape[0]
    match = maximum_bipartite_matching(csr_matrix(nz), perm_type="column")
    if np.any(match < 0):
        return np.zeros_like(nz)
    rows, cols = np.nonzero(nz)
    matched = match[rows] == cols
    src = np.where(matched, n + cols, rows)
    dst = np.where(matched, rows, n + cols)
    g = csr_matrix((np.ones(src.size), (src, dst)), shape=(2 * n, 2 * n))
    _, comp = connected_components(g, directed=True, connection="strong")
    ok = np.zeros_like(nz)
    ok[rows, cols] = matched | (comp[rows] == comp[n + cols])
    return ok


def _assignment_scaling(lm: np.ndarray) -> np.ndarray:
    """Rescale log entries so the best assignment is all zeros and nothing exceeds 0.

    With costs c = -lm and an optimal assignment sigma, column potentials v
    are shortest distances over edges sigma(i) -> j of weight
    c_ij - c_i,sigma(i), which has no negative cycle because sigma is optimal.
    Row potentials u_i = c_i,sigma(i) - v_sigma(i) make the assignment tight,
    so every term of the permanent is at most 1 and one term equals 1.
    """
    cost = np.where(np.isfinite(lm), -lm, np.inf)
    rows, sigma = linear_sum_assignment(cost)
    n = lm.shape[0]
    base = cost[rows, sigma]
    step = cost - base[:, None]  # weight of edge sigma(i) -> j, indexed [i, j]
    v = np.zeros(n)
    for _ in range(n + 1):
        nv = np.minimum(v, np.min(v[sigma][:, None] + step, axis=0))
        if np.array_equal(nv, v):
            break
        v = nv
    u = base - v[sigma]
    out = lm + u[:, None] + v[None, :]
    out[rows, sigma] = 0.0
    return np.minimum(out, 0.0)


def _scaled(m: np.ndarray):
    """Rescale rows and columns for the kernels; returns (scaled matrix, log correction).

    Entries on no perfect matching are dropped first: they enter no term, and
    left in place they only feed cancellation.  A few log-domain Sinkhorn
    sweeps bring the matrix towards doubly stochastic, and the assignment
    scaling then pins the largest term at 1 however wide the dynamic range.
    The correction is read off along a perfect matching, where each row and
    each column appears exactly once.
    """
    keep = matchable_entries(m)
    with np.errstate(divide="ignore"):
        lm = np.where(keep, np.log(np.where(keep, m, 1.0)), -np.inf)
    orig = lm.copy()
    if not _kernels._log_sinkhorn(lm, BALANCE_SWEEPS):
        raise NumericalError("balancing met an all-zero line after pruning")
    lm = _assignment_scaling(lm)
    match = maximum_bipartite_matching(csr_matrix(keep), perm_type="column")
    rows = np.arange(m.shape[0])
    corr = math.fsum(orig[rows, match] - lm[rows, match])
    return np.exp(lm), corr


def _naive(a: np.ndarray, col: int, w: np.ndarray | None) -> float:
    n = a.shape[0]
    terms = []
    for p in itertools.permutations(range(n)):
        t = 1.0
        for j in range(n):
            t *= a[p[j], j]
        if col >= 0:
            t *= w[p[col]]
        terms.append(t)
    return math.fsum(terms)


def _run(a: np.ndarray, col: int, w: np.ndarray | None, engine: str) -> float:
    if engine == "naive":
        return _naive(a, col, w)
    if col < 0:
        # Glynn visits half as many subsets as Ryser at the same precision
        hi, lo = _kernels.glynn_dd(np.ascontiguousarray(a))
        return hi + lo
    hi, lo = _kernels.ryser_dd(np.ascontiguousarray(a), np.ascontiguousarray(w, dtype=float), col)
    return hi + lo


def permanent_exact(m, engine: str = "ryser") -> LogValue:
    """Permanent of a nonnegative square matrix."""
    a = _check_matrix(m, engine)
    if not has_perfect_matching(a):
        return LogValue.zero()
    s, corr = _scaled(a)
    v = _run(s, -1, None, engine)
    if not v > 0:
        raise NumericalError(f"permanent of a matrix with a perfect matching evaluated to {v!r}")
    return LogValue(math.log(v) + corr)


def weighted_column_permanent(m, col: int, weights, engine: str = "ryser") -> LogValue:
    """sum over permutations pi of weights[pi(col)] * prod_j M[pi(j), j].

    The same as ``permanent_exact`` after replacing column ``col`` by
    ``weights * M[:, col]``; weights may be negative.
    """
    a = _check_matrix(m, engine)
    n = a.shape[0]
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or not np.all(np.isfinite(w)):
        raise ValidationError(f"weights must be {n} finite reals")
    if not 0 <= col < n:
        raise ValidationError(f"column index {col} out of range for n={n}")
    wmax = float(np.max(np.abs(w)))
    if wmax == 0.0 or not has_perfect_matching(a):
        return LogValue.zero()
    s, corr = _scaled(a)
    v = _run(s, col, w / wmax, engine)
    if v == 0.0:
        return LogValue.zero()
    return LogValue(math.log(abs(v)) + corr + math.log(wmax), False, 1 if v > 0 else -1)


# ---------------------------------------------------------------------------
# chi^2 through the permanent identity


def log_n_pow_n_over_fact(n: int) -> float:
    return n * math.log(n) - float(gammaln(n + 1.0))


def _clamp(chi2: float, n: int) -> float:
    tol = 64.0 * n * _EPS
    if chi2 < -1e-9:
        raise NumericalError(f"chi^2 evaluated to {chi2:.3e} < 0 beyond roundoff")
    if abs(chi2) <= tol:
        return 0.0
    return max(chi2, 0.0)


def log1p_chi2_from_overlap(a) -> float:
    """log(1 + chi^2) = log(n^n/n!) + log Perm(A)."""
    e = a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)
    n = e.shape[0]
    lp = permanent_exact(e)
    if lp.zero_flag:
        raise NumericalError("overlap matrix has zero permanent")
    val = log_n_pow_n_over_fact(n) + lp.log_magnitude
    return max(val, 0.0) if abs(val) <= 64.0 * n * _EPS else val


def chi2_from_overlap(a) -> float:
    e = a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)
    return _clamp(math.expm1(log1p_chi2_from_overlap(e)), e.shape[0])


def chi2_exact(members: Sequence, cfg: QuadConfig | None = None) -> float:
    """chi^2 between the permutation mixture of ``members`` and its mean-field product."""
    if len(members) > RYSER_MAX_N:
        raise CapacityError(f"exact chi^2 limited to n <= {RYSER_MAX_N}")
    return chi2_from_overlap(build_overlap(members, cfg))


# ---------------------------------------------------------------------------
# replicated instances: sum over contingency tables with margins m


class _StreamingLSE:
    """Running log-sum-exp that rebases on a new maximum."""

    def __init__(self):
        self.mx = -math.inf
        self.acc = 0.0

    def add(self, logs: np.ndarray):
        logs = np.asarray(logs, dtype=float)
        if logs.size == 0:
            return
        cm = float(np.max(logs))
        if cm == -math.inf:
            return
        if cm > self.mx:
            self.acc *= math.exp(self.mx - cm) if self.mx > -math.inf else 0.0
            self.mx = cm
        self.acc += math.fsum(np.exp(logs - self.mx))

    @property
    def value(self) -> float:
        return self.mx + math.log(self.acc) if self.acc > 0 else -math.inf


def replicated_log1p_chi2(a, m: int) -> float:
    """log(1 + chi^2) of the instance where each member is repeated ``m`` times."""
    e = a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)
    if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] not in (2, 3):
        raise ValidationError("replicated chi^2 is implemented for n in {2, 3}")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValidationError("overlap entries must be finite and nonnegative")
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValidationError(f"replication factor must be a positive integer, got {m!r}")
    n = e.shape[0]
    m = int(m)
    if n == 3 and (m + 1) ** 4 > CONTINGENCY_BUDGET:
        raise CapacityError(f"n=3 contingency expansion needs (m+1)^4 <= 1e8 terms, m={m}")
    if n == 2 and m > 10 ** 7:
        raise CapacityError("n=2 contingency expansion limited to m <= 1e7")
    N = m * n
    # Perm(A (x) J_m) = (m!)^{2n} sum_X prod A_ij^X_ij / X_ij!, and J_m/m adds m^-N
    pre = N * math.log(N / m) - float(gammaln(N + 1.0)) + 2 * n * float(gammaln(m + 1.0))
    acc = _StreamingLSE()
    if n == 2:
        x11 = np.arange(m + 1, dtype=float)
        x12 = m - x11
        cells = [((0, 0), x11), ((0, 1), x12), ((1, 0), x12), ((1, 1), x11)]
        acc.add(_cell_terms(e, cells))
    else:
        g = np.arange(m + 1, dtype=float)
        x12, x21, x22 = np.meshgrid(g, g, g, indexing="ij")
        x12, x21, x22 = x12.ravel(), x21.ravel(), x22.ravel()
        for v in range(m + 1):
            x11 = np.full_like(x12, v)
            x13 = m - x11 - x12
            x23 = m - x21 - x22
            x31 = m - x11 - x21
            x32 = m - x12 - x22
            x33 = x11 + x12 + x21 + x22 - m
            ok = (x13 >= 0) & (x23 >= 0) & (x31 >= 0) & (x32 >= 0) & (x33 >= 0)
            if not np.any(ok):
                continue
            cells = [
                ((0, 0), x11[ok]), ((0, 1), x12[ok]), ((0, 2), x13[ok]),
                ((1, 0), x21[ok]), ((1, 1), x22[ok]), ((1, 2), x23[ok]),
                ((2, 0), x31[ok]), ((2, 1), x32[ok]), ((2, 2), x33[ok]),
            ]
            acc.add(_cell_terms(e, cells))
    if acc.value == -math.inf:
        raise NumericalError("every contingency table has zero weight")
    return pre + acc.value


def _cell_terms(e: np.ndarray, cells) -> np.ndarray:
    out = 0.0
    for (i, j), xij in cells:
        out = out + xlogy(xij, e[i, j]) - gammaln(xij + 1.0)
    return out


def replicated_chi2(a, m: int) -> float:
    """chi^2 of the m-fold replicated instance via the contingency-table expansion."""
    e = a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)
    return _clamp(math.expm1(replicated_log1p_chi2(e, m)), e.shape[0] * int(m))


@dataclass(frozen=True)
class ReplicationTrajectory:
    ms: tuple
    values: tuple
    target: float
    nondecreasing: bool
    first_decrease: int | None

    def rel_err_final(self) -> float:
        return abs(self.values[-1] - self.target) / self.target if self.target else abs(self.values[-1])


def replication_trajectory(a, ms: Sequence[int]) -> ReplicationTrajectory:
    """replicated_chi2 over ``ms`` next to the spectral product target.

    The target is prod_{i>=2} (1 - lambda_i^2)^{-1/2} - 1.  Monotonicity in m
    is reported, not enforced.
    """
    e = a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)
    ms = tuple(int(v) for v in ms)
    vals = tuple(replicated_chi2(e, v) for v in ms)
    lam = np.sort(np.linalg.eigvalsh(0.5 * (e + e.T)))[::-1][1:]
    lam = np.clip(lam, 0.0, 1.0)
    target = math.inf if np.any(lam >= 1.0) else math.expm1(-0.5 * float(np.sum(np.log1p(-lam * lam))))
    first = None
    for i in range(1, len(vals)):
        if vals[i] < vals[i - 1]:
            first = ms[i]
            break
    return ReplicationTrajectory(ms, vals, target, first is None, first)


# ---------------------------------------------------------------------------
# two-component instances


def two_component_log1p_chi2(m: int, f: float) -> float:
    """log(1 + sum_{l=1}^m C(m,l)^2 / C(2m,2l) f^{2l})."""
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValidationError(f"half size m must be a positive integer, got {m!r}")
    if not (math.isfinite(f) and 0.0 <= f < 1.0):
        raise ValidationError(f"mixing scalar must lie in [0, 1), got {f!r}")
    if f == 0.0:
        return 0.0
    l = np.arange(0, m + 1, dtype=float)
    logc = (
        2.0 * (gammaln(m + 1.0) - gammaln(l + 1.0) - gammaln(m - l + 1.0))
        - (gammaln(2.0 * m + 1.0) - gammaln(2.0 * l + 1.0) - gammaln(2.0 * m - 2.0 * l + 1.0))
    )
    logt = logc + 2.0 * l * math.log(f)
    return float(logsumexp(logt))


def two_component_chi2(m: int, f: float) -> float:
    """chi^2 for n = 2m members, half at each of two parameter values."""
    if not (math.isfinite(f) and 0.0 <= f < 1.0):
        raise ValidationError(f"mixing scalar must lie in [0, 1), got {f!r}")
    if f == 0.0:
        return 0.0
    # the l = 0 term is 1; summing l >= 1 directly avoids cancellation for small f
    l = np.arange(1, m + 1, dtype=float)
    logc = (
        2.0 * (gammaln(m + 1.0) - gammaln(l + 1.0) - gammaln(m - l + 1.0))
        - (gammaln(2.0 * m + 1.0) - gammaln(2.0 * l + 1.0) - gammaln(2.0 * m - 2.0 * l + 1.0))
    )
    return float(np.exp(logsumexp(logc + 2.0 * l * math.log(f))))


def mixing_scalar(model: str, sep: float) -> float:
    """The scalar f with lambda_2 = f for the two-point overlap matrix.

    gaussian: members N(-mu, 1), N(mu, 1); f = 1 - exp(-mu^2/2) E[1/cosh(mu Z)].
    poisson:  f = tanh(M/2) = (1 - e^-M) / (1 + e^-M).
    """
    if not (isinstance(sep, (int, float, np.floating, np.integer)) and math.isfinite(sep) and sep >= 0):
        raise ValidationError(f"separation must be finite and >= 0, got {sep!r}")
    sep = float(sep)
    if model == "poisson":
        return math.tanh(sep / 2.0)
    if model != "gaussian":
        raise ValidationError(f"unknown model {model!r} (expected 'gaussian' or 'poisson')")
    if sep == 0.0:
        return 0.0
    mu = sep
    c = math.log(2.0) - 0.5 * math.log(2.0 * math.pi)

    # 2 phi(z+mu) phi(z-mu) / (phi(z+mu) + phi(z-mu)) integrated over z equals
    # exp(-mu^2/2) E[1/cosh(mu Z)]; written with logaddexp it never overflows.
    def g(z):
        return np.exp(c - np.logaddexp(0.5 * (z - mu) ** 2, 0.5 * (z + mu) ** 2))

    width = 0.5 / max(1.0, mu)
    val = float(integrate(g, -14.0, 14.0, abs_tol=1e-14, panel_width=width)[0])
    return min(max(1.0 - val, 0.0), math.nextafter(1.0, 0.0))
