"""Compound decision oracles and the Monte Carlo audits built on them.

In the postulated Bayes model the parameter vector is shuffled by a uniform
permutation pi before X_j ~ P_{theta_pi(j)} is drawn.  The separable oracle
is then E[theta~_i | X_i] and the permutation-invariant (PI) oracle is
E[theta~_i | X^n].  The PI oracle is a ratio of permanents of the
likelihood matrix M[k, j] = f_{theta_k}(X_j).

Weighted sums over theta are always formed as theta_min + sum w (theta -
theta_min), so a constant theta vector produces exactly constant outputs.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from . import _kernels
from .errors import (
    CapacityError,
    DegenerateLikelihoodError,
    IncompatibleObservationError,
    PreconditionError,
    ValidationError,
)
from .families import GaussianLoc, Poisson
from .permanent import _assignment_scaling, chi2_exact, has_perfect_matching, matchable_entries, permanent_exact
from .quadrature import fixed_panel_rule

PI_MAX_N = 25
BALANCE_SWEEPS = 16
MC_BLOCK = 2048
ABORT_LIMIT = 1e-4
IDENTITY_TOL = 1e-7
LOG_SQRT_PI = 0.5 * math.log(math.pi)


@dataclass(frozen=True)
class CompoundInstance:
    model: str
    theta: tuple

    def __post_init__(self):
        if self.model not in ("gaussian", "poisson"):
            raise ValidationError(f"model must be 'gaussian' or 'poisson', got {self.model!r}")
        th = tuple(float(v) for v in self.theta)
        if not th:
            raise ValidationError("theta must be nonempty")
        if any(not math.isfinite(v) for v in th):
            raise ValidationError("theta must be finite")
        if self.model == "poisson" and any(v < 0 for v in th):
            raise ValidationError("Poisson rates must be >= 0")
        object.__setattr__(self, "theta", th)

    @property
    def n(self) -> int:
        return len(self.theta)

    @property
    def arr(self) -> np.ndarray:
        return np.asarray(self.theta)

    def members(self):
        cls = GaussianLoc if self.model == "gaussian" else Poisson
        return [cls(t) for t in self.theta]

    def loglik(self, x: np.ndarray) -> np.ndarray:
        """log f_{theta_k}(x_j), shape (..., n, len(x)) for x of shape (..., len(x))."""
        th = self.arr[:, None]
        x = np.asarray(x, dtype=float)[..., None, :]
        if self.model == "gaussian":
            return -0.5 * (x - th) ** 2 - 0.5 * math.log(2.0 * math.pi)
        return xlogy(x, th) - th - gammaln(x + 1.0)

    def draw(self, rng: np.random.Generator, th: np.ndarray) -> np.ndarray:
        if self.model == "gaussian":
            return rng.normal(th, 1.0)
        return rng.poisson(th).astype(float)

    def check_x(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.shape != (self.n,):
            raise IncompatibleObservationError(f"expected {self.n} observations, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise IncompatibleObservationError("observations must be finite")
        if self.model == "poisson" and (np.any(arr < 0) or np.any(arr != np.round(arr))):
            raise IncompatibleObservationError("Poisson observations must be nonnegative integers")
        return arr


def _shifted_mean(weights: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """theta_min + weights @ (theta - theta_min), weights along the last axis."""
    lo = theta.min()
    return lo + weights @ (theta - lo)


def _sep_from_loglik(ll: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Posterior means per column of ``ll`` (..., n_theta, n_obs) under a uniform prior on theta."""
    lse = logsumexp(ll, axis=-2, keepdims=True)
    w = np.exp(ll - lse)
    return _shifted_mean(np.swapaxes(w, -1, -2), theta)


def separable_oracle(inst: CompoundInstance, x) -> np.ndarray:
    """sum_j theta_j f_j(x_i) / sum_j f_j(x_i) for every coordinate i."""
    x = inst.check_x(x)
    ll = inst.loglik(x)
    bad = ~np.any(np.isfinite(ll), axis=0)
    if np.any(bad):
        raise DegenerateLikelihoodError(
            f"every candidate parameter has zero likelihood at x[{int(np.argmax(bad))}]"
        )
    return _sep_from_loglik(ll, inst.arr)


@dataclass(frozen=True)
class OracleEval:
    sep: np.ndarray
    pi: np.ndarray
    posterior_first: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("sep", "pi", "posterior_first")}


def _pi_batch(inst: CompoundInstance, ll: np.ndarray):
    """Kernel pass over a batch of log-likelihood matrices.

    Returns (perm, pi, posterior_first, ok) with pi clipped to the theta range
    (it is a convex combination of theta, so clipping only removes roundoff).
    """
    theta = inst.arr
    lo, hi = theta.min(), theta.max()
    b, n = ll.shape[0], inst.n
    perm = np.empty(b)
    num = np.empty((b, n))
    post0 = np.empty((b, n))
    _kernels.balanced_oracle_batch(np.ascontiguousarray(ll), theta - lo, BALANCE_SWEEPS, perm, num, post0)
    ok = np.isfinite(perm) & (perm > 0) & np.all(np.isfinite(num), axis=1) & np.all(np.isfinite(post0), axis=1)
    safe = np.where(ok, perm, 1.0)
    pi = np.clip(lo + num / safe[:, None], lo, hi)
    p0 = np.maximum(post0, 0.0)
    tot = p0.sum(axis=1, keepdims=True)
    ok &= tot[:, 0] > 0
    p0 = p0 / np.where(tot > 0, tot, 1.0)
    return perm, pi, p0, ok


def _pi_single(inst: CompoundInstance, ll: np.ndarray):
    """Double-double kernel pass for one likelihood matrix."""
    theta = inst.arr
    n = inst.n
    lo, hi = theta.min(), theta.max()
    lm = np.ascontiguousarray(ll, dtype=float).copy()
    if not _kernels._log_sinkhorn(lm, BALANCE_SWEEPS):
        raise DegenerateLikelihoodError("a row or column of the likelihood matrix is all zero")
    lm = _assignment_scaling(lm)
    out_hi = np.empty(2 * n + 1)
    out_lo = np.empty(2 * n + 1)
    _kernels.ryser_oracle_dd(np.exp(lm), theta - lo, out_hi, out_lo)
    perm = out_hi[0] + out_lo[0]
    if not (math.isfinite(perm) and perm > 0):
        raise DegenerateLikelihoodError("likelihood permanent vanished after balancing")
    # (hi + lo) / perm in double-double precision is not needed: one rounding
    # of a ratio of two accurate values costs a single ulp
    num = (out_hi[1:n + 1] + out_lo[1:n + 1]) / perm
    pi = np.clip(lo + num, lo, hi)
    p0 = np.maximum(out_hi[n + 1:] + out_lo[n + 1:], 0.0)
    return pi, p0 / p0.sum()


def pi_oracle(inst: CompoundInstance, x) -> OracleEval:
    """Separable and PI oracles plus the posterior of theta~_1 given X^n."""
    x = inst.check_x(x)
    if inst.n > PI_MAX_N:
        raise CapacityError(f"PI oracle limited to n <= {PI_MAX_N}, got {inst.n}")
    sep = separable_oracle(inst, x)
    ll = inst.loglik(x)
    if not has_perfect_matching(np.isfinite(ll)):
        raise DegenerateLikelihoodError("every permutation has zero likelihood")
    # entries on no perfect matching contribute to no term; zeroing them makes
    # forced assignments come out exact instead of as Ryser roundoff
    ll = np.where(matchable_entries(np.isfinite(ll)), ll, -np.inf)
    pi, post = _pi_single(inst, ll)
    return OracleEval(sep, pi, post)


def pi_oracle_enumerate(inst: CompoundInstance, x) -> np.ndarray:
    """PI oracle by summing over all n! assignments; a reference for small n."""
    x = inst.check_x(x)
    if inst.n > 8:
        raise CapacityError(f"enumeration limited to n <= 8, got {inst.n}")
    ll = inst.loglik(x)
    theta = inst.arr
    lo = theta.min()
    perms = np.array(list(itertools.permutations(range(inst.n))))
    cols = np.arange(inst.n)
    logw = ll[perms, cols].sum(axis=1)
    keep = np.isfinite(logw)
    if not np.any(keep):
        raise DegenerateLikelihoodError("every permutation has zero likelihood")
    w = np.exp(logw[keep] - logw[keep].max())
    d = theta[perms[keep]] - lo
    den = math.fsum(w)
    return np.array([lo + math.fsum(w * d[:, j]) / den for j in range(inst.n)])


# ---------------------------------------------------------------------------
# Monte Carlo in the postulated model


@dataclass(frozen=True)
class GapEstimate:
    mean: float
    std_error: float
    samples: int
    seed: int
    aborted: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OrthogonalityResult:
    lhs: float
    rhs: float
    combined_se: float
    passed: bool
    samples: int
    seed: int
    lhs_se: float = 0.0
    rhs_se: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Draws:
    gap: np.ndarray  # n (E[theta1|X1] - E[theta1|X^n])^2
    loss_diff: np.ndarray  # ||theta~ - sep||^2 - ||theta~ - pi||^2
    aborted: int = 0
    extra: dict = field(default_factory=dict)


def _block(inst: CompoundInstance, seed: int, b: int, size: int) -> _Draws:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,))))
    n, theta = inst.n, inst.arr
    perms = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
    th = theta[perms]
    x = inst.draw(rng, th)
    ll = inst.loglik(x)  # (size, n, n)
    finite = np.any(np.isfinite(ll), axis=1).all(axis=1)
    sep = np.empty((size, n))
    sep[finite] = _sep_from_loglik(ll[finite], theta)
    _, pi, post, ok = _pi_batch(inst, ll)
    ok &= finite
    e1 = _shifted_mean(post, theta)
    gap = n * (sep[:, 0] - e1) ** 2
    loss = np.sum((th - sep) ** 2, axis=1) - np.sum((th - pi) ** 2, axis=1)
    return _Draws(gap[ok], loss[ok], int(np.sum(~ok)))


def _simulate(inst: CompoundInstance, samples: int, seed: int, threads: int | None) -> _Draws:
    if not isinstance(samples, (int, np.integer)) or samples < 1:
        raise ValidationError(f"samples must be a positive integer, got {samples!r}")
    if not isinstance(seed, (int, np.integer)) or not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    if inst.n > PI_MAX_N:
        raise CapacityError(f"PI oracle limited to n <= {PI_MAX_N}, got {inst.n}")
    sizes = [MC_BLOCK] * (samples // MC_BLOCK)
    if samples % MC_BLOCK:
        sizes.append(samples % MC_BLOCK)
    workers = threads or min(8, os.cpu_count() or 1)
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda a: _block(inst, int(seed), a[0], a[1]), enumerate(sizes)))
    else:
        parts = [_block(inst, int(seed), b, s) for b, s in enumerate(sizes)]
    aborted = sum(p.aborted for p in parts)
    if aborted > ABORT_LIMIT * samples:
        raise DegenerateLikelihoodError(
            f"{aborted} of {samples} samples had a degenerate likelihood (limit {ABORT_LIMIT:.2%})"
        )
    return _Draws(np.concatenate([p.gap for p in parts]),
                  np.concatenate([p.loss_diff for p in parts]), aborted)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    m = math.fsum(v) / v.size
    if v.size < 2:
        return m, 0.0
    var = math.fsum((v - m) ** 2) / (v.size - 1)
    return m, math.sqrt(var / v.size)


def regret_gap_mc(inst: CompoundInstance, samples: int, seed: int, threads: int | None = None) -> GapEstimate:
    """Estimate n E[(E[theta~_1|X_1] - E[theta~_1|X^n])^2] in the postulated model.

    Results depend only on (instance, samples, seed): samples are drawn in
    fixed-size blocks with per-block seed streams and summed in order.
    """
    d = _simulate(inst, samples, seed, threads)
    m, se = _mean_se(d.gap)
    return GapEstimate(m, se, int(d.gap.size), int(seed), d.aborted)


def orthogonality_check(inst: CompoundInstance, samples: int, seed: int,
                        threads: int | None = None) -> OrthogonalityResult:
    """MSE(sep) - MSE(PI) against the regret gap, on common draws."""
    d = _simulate(inst, samples, seed, threads)
    lhs, lse = _mean_se(d.loss_diff)
    rhs, rse = _mean_se(d.gap)
    _, cse = _mean_se(d.loss_diff - d.gap)
    ok = abs(lhs - rhs) <= 4.0 * cse
    return OrthogonalityResult(lhs, rhs, cse, bool(ok), int(d.gap.size), int(seed), lse, rse)


# ---------------------------------------------------------------------------
# interpolation identities


@dataclass(frozen=True)
class InterpolationResult:
    residual_direct: float
    residual_route: float
    gap_theta: float
    gap_z_direct: float
    gap_z_route: float

    @property
    def passed(self) -> bool:
        return self.residual_direct < IDENTITY_TOL and self.residual_route < IDENTITY_TOL

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _minor_log_weights(inst: CompoundInstance, x: np.ndarray) -> np.ndarray:
    """log Perm of M with row k and column 0 removed, up to a common constant."""
    n = inst.n
    if n == 1:
        return np.zeros(1)
    ll = inst.loglik(x)[:, 1:]
    # scale each remaining column by its max; the constant is shared by all k
    finite = np.isfinite(ll)
    cmax = np.max(np.where(finite, ll, -np.inf), axis=0)
    m = np.exp(ll - cmax[None, :])
    out = np.empty(n)
    for k in range(n):
        lv = permanent_exact(np.delete(m, k, axis=0))
        out[k] = -math.inf if lv.zero_flag else lv.log_magnitude
    return out


def _z_posterior_mean_gaussian(theta, x1, logc):
    """E[Z_1 | .] when Z = theta~ + N(0, 1/2), X = Z + N(0, 1/2) and P(theta~_1 = theta_k) ~ e^logc_k."""
    centers = 0.5 * (theta + x1)
    a, b = centers.min() - 8.0, centers.max() + 8.0

    def logdens(z):
        # log N(z; theta_k, 1/2) + log N(x1; z, 1/2)
        t = (-(z[None, :] - theta[:, None]) ** 2 - (x1 - z[None, :]) ** 2) - 2.0 * LOG_SQRT_PI
        return logsumexp(t + logc[:, None], axis=0)

    def probe(z, w):
        g = logdens(z)
        e = np.exp(g - g.max()) * w
        return np.array([np.sum(z * e) / np.sum(e)])

    _, _, val = fixed_panel_rule(probe, a, b, 1e-12, panel_width=0.5)
    return float(val[0])


def _z_posterior_mean_poisson(theta, x1, logc):
    """E[Z_1 | .] when Z ~ Poi(2 theta~), X = Bin(Z, 1/2)."""
    tmax = float(theta.max())
    cut = int(math.ceil(2.0 * tmax + 12.0 * math.sqrt(2.0 * tmax + 1.0) + 40.0))
    z = x1 + np.arange(cut + 1, dtype=float)
    lt = 2.0 * theta[:, None]
    lpz = xlogy(z[None, :], lt) - lt - gammaln(z + 1.0)[None, :]
    lbin = gammaln(z + 1.0) - gammaln(x1 + 1.0) - gammaln(z - x1 + 1.0) - z * math.log(2.0)
    g = logsumexp(lpz + logc[:, None], axis=0) + lbin
    if not np.any(np.isfinite(g)):
        raise DegenerateLikelihoodError("Z posterior has zero mass on the truncated support")
    w = np.exp(g - g.max())
    return float(math.fsum(z * w) / math.fsum(w))


def interp_identity_check(inst: CompoundInstance, x) -> InterpolationResult:
    """Both sides of the noisy-interpolation identity at one realisation.

    Gaussian: E[theta~_1|X_1] - E[theta~_1|X^n] = 2 (E[Z_1|X_1] - E[Z_1|X^n]).
    Poisson:  the same with factor 1.

    The route value uses E[Z_1|.] = X_1/2 + E[theta~_1|.]/2 (Gaussian) or
    X_1 + E[theta~_1|.] (Poisson).  The direct value integrates z against
    the posterior mixture whose weights are minor permanents of M.
    """
    x = inst.check_x(x)
    theta = inst.arr
    ev = pi_oracle(inst, x)
    lo = theta.min()
    t1 = float(ev.sep[0])
    tn = float(lo + ev.posterior_first @ (theta - lo))
    gap_theta = t1 - tn
    x1 = float(x[0])
    logc_n = _minor_log_weights(inst, x)
    logc_1 = np.zeros(inst.n)
    if inst.model == "gaussian":
        factor = 2.0
        z1 = _z_posterior_mean_gaussian(theta, x1, logc_1)
        zn = _z_posterior_mean_gaussian(theta, x1, logc_n)
        r1, rn = 0.5 * x1 + 0.5 * t1, 0.5 * x1 + 0.5 * tn
    else:
        factor = 1.0
        z1 = _z_posterior_mean_poisson(theta, x1, logc_1)
        zn = _z_posterior_mean_poisson(theta, x1, logc_n)
        r1, rn = x1 + t1, x1 + tn
    gz_direct = z1 - zn
    gz_route = r1 - rn
    return InterpolationResult(
        abs(gap_theta - factor * gz_direct),
        abs(gap_theta - factor * gz_route),
        gap_theta,
        gz_direct,
        gz_route,
    )


# ---------------------------------------------------------------------------
# transportation and tilt-variance audits


@dataclass(frozen=True)
class CheckResult:
    lhs: float
    rhs: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def poisson_mixture_pmf(atoms, weights, support: np.ndarray) -> np.ndarray:
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lp = xlogy(support[None, :], atoms[:, None]) - atoms[:, None] - gammaln(support + 1.0)[None, :]
    with np.errstate(divide="ignore"):
        lw = np.log(weights)
    return np.exp(logsumexp(lp + lw[:, None], axis=0))


def transportation_check(h: float, mixing, mu) -> CheckResult:
    """(E_mu X - E_nu X)^2 <= 2h(h+2) KL(mu || nu) for a Poisson mixture nu.

    ``mixing`` is (atoms, weights) with atoms in [0, h]; ``mu`` is a pmf on
    0..len(mu)-1.  Both are evaluated on a common support reaching past the
    Poisson tail of rate h.
    """
    if not (math.isfinite(h) and h > 0):
        raise ValidationError("h must be finite and > 0")
    atoms, weights = (np.asarray(v, dtype=float) for v in mixing)
    if atoms.shape != weights.shape or atoms.ndim != 1 or atoms.size == 0:
        raise ValidationError("mixing must be (atoms, weights) of equal length")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValidationError("mixing weights must lie on the simplex")
    if np.any(atoms < 0) or np.any(atoms > h):
        raise PreconditionError("mixing atoms must lie in [0, h]")
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise ValidationError("mu must be a pmf")
    support_len = max(mu.size, int(math.ceil(h + 12.0 * math.sqrt(h + 1.0) + 40.0)) + 1)
    support = np.arange(support_len, dtype=float)
    mu_full = np.zeros(support_len)
    mu_full[: mu.size] = mu
    mean_mu = float(math.fsum(support * mu_full))
    if not 0.0 <= mean_mu <= h:
        raise PreconditionError(f"mean of mu is {mean_mu:.6g}, outside [0, {h:g}]")
    nu = poisson_mixture_pmf(atoms, weights, support)
    mean_nu = float(atoms @ weights)
    with np.errstate(divide="ignore"):
        kl = math.fsum(xlogy(mu_full, mu_full) - xlogy(mu_full, nu))
    if np.any((mu_full > 0) & (nu == 0)):
        kl = math.inf
    kl = max(kl, 0.0)
    lhs = (mean_mu - mean_nu) ** 2
    rhs = 2.0 * h * (h + 2.0) * kl
    return CheckResult(lhs, rhs, bool(lhs <= rhs + 1e-12))


@dataclass(frozen=True)
class TiltResult:
    max_var: float
    bound: float
    passed: bool
    argmax_t: float

    def to_dict(self) -> dict:
        return asdict(self)


def tilt_variance(weights, means, sd: float, t: float) -> float:
    """Variance of the exponential tilt e^{tz} of an equal-variance Gaussian mixture.

    Tilting shifts each mean by t sd^2 and reweights components by e^{t m_i}.
    """
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(w) + t * m
    p = np.exp(lw - logsumexp(lw))
    c = m - m.min()
    mean = p @ c
    return sd * sd + float(p @ (c - mean) ** 2)


def half_noise_posterior(theta, x1: float, prior=None) -> tuple[np.ndarray, np.ndarray]:
    """Z | X_1 = x1 when Z = theta~ + N(0, 1/2) and X_1 = Z + N(0, 1/2).

    A Gaussian mixture with sd 1/2, means (theta_j + x1)/2 and weights
    proportional to prior_j phi(x1 - theta_j).
    """
    theta = np.asarray(theta, dtype=float)
    lw = -0.5 * (x1 - theta) ** 2
    if prior is not None:
        with np.errstate(divide="ignore"):
            lw = lw + np.log(np.asarray(prior, dtype=float))
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum(), 0.5 * (theta + x1)


def tilt_variance_check(weights, means, sds, h: float, t_grid) -> TiltResult:
    """max over t of Var(tilted mixture) against h^2/16 + 1/4.

    The mixture must have a common component sd of 1/2 and component means
    within an interval of length h/2.
    """
    sds = np.atleast_1d(np.asarray(sds, dtype=float))
    means = np.asarray(means, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if means.ndim != 1 or means.shape != weights.shape or means.size == 0:
        raise ValidationError("weights and means must be equal-length vectors")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValidationError("weights must lie on the simplex")
    if sds.size not in (1, means.size) or np.any(sds != sds[0]):
        raise PreconditionError("component standard deviations must all be equal")
    if sds[0] != 0.5:
        raise PreconditionError("component standard deviation must be 1/2")
    if not (math.isfinite(h) and h >= 0):
        raise ValidationError("h must be finite and >= 0")
    if np.ptp(means) > h / 2.0 + 1e-12:
        raise PreconditionError(f"component means spread {np.ptp(means):.6g} exceeds h/2 = {h / 2:g}")
    best, arg = -math.inf, math.nan
    for t in np.asarray(t_grid, dtype=float):
        v = tilt_variance(weights, means, 0.5, float(t))
        if v > best:
            best, arg = v, float(t)
    bound = h * h / 16.0 + 0.25
    return TiltResult(best, bound, bool(best <= bound + 1e-12), arg)


@dataclass(frozen=True)
class ChainAudit:
    gap: float
    std_error: float
    tilt_constant: float
    log1p_chi2_half_noise: float
    rhs: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def mi_chain_audit(inst: CompoundInstance, samples: int, seed: int, threads: int | None = None) -> ChainAudit:
    """Regret gap against 8 A log(1 + chi^2) of the half-noise family.

    With Z = theta~ + N(0, 1/2) the Z|X_1 posterior is an equal-variance
    Gaussian mixture whose tilts have variance at most
    A = 1/4 + (max theta - min theta)^2 / 16.  Entropic stability and the
    chain rule for mutual information then give

        n E[(E[theta~_1|X_1] - E[theta~_1|X^n])^2] <= 8 A log(1 + chi^2(N(theta_i, 1/2))).

    The chi^2 term is computed exactly through the permanent, using the
    unit-variance members theta_i * sqrt(2).
    """
    if inst.model != "gaussian":
        raise ValidationError("the mutual-information chain audit is for the Gaussian model")
    est = regret_gap_mc(inst, samples, seed, threads)
    theta = inst.arr
    a = 0.25 + float(np.ptp(theta)) ** 2 / 16.0
    half = [GaussianLoc(float(t) * math.sqrt(2.0)) for t in theta]
    l1p = math.log1p(chi2_exact(half))
    rhs = 8.0 * a * l1p
    return ChainAudit(est.mean, est.std_error, a, l1p, rhs, bool(est.mean - 4.0 * est.std_error <= rhs))
