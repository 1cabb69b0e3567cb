"""Family geometry: Rényi partition diameters, chi^2 capacity, k-way expansion.

Also the two composite bound evaluators.  Both contain an unknown universal
constant, so they return the bracketed expression with a label rather than
a certified number.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, ValidationError
from .families import (
    Discrete,
    GaussianLoc,
    GaussianScale,
    Member,
    common_kind,
    renyi_half,
)
from .overlap import OverlapMatrix, QuadConfig, density_rule
from .spectrum import eigen_sym

BRUTE_PARTITION_MAX_N = 12
EXPANSION_BUDGET = 2 * 10 ** 8
CHEEGER_SLACK = 1e-12
UP_TO_CONSTANT = "up to universal constant C"


class UnorderedFamilyError(ValidationError, TypeError):
    """A one-dimensional routine was given a family without a natural order."""


def renyi_matrix(members: Sequence[Member]) -> np.ndarray:
    n = len(members)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = renyi_half(members[i], members[j])
    return d


# ---------------------------------------------------------------------------
# partition diameter


@dataclass(frozen=True)
class Partition:
    block_of: tuple
    k: int
    diameter: float

    def blocks(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k)]
        for i, b in enumerate(self.block_of):
            out[b].append(i)
        return out

    def to_dict(self) -> dict:
        return {"block_of": list(self.block_of), "k": self.k, "diameter": self.diameter}


def _diameter_of(blocks: Iterable[Sequence[int]], d: np.ndarray) -> float:
    best = 0.0
    for b in blocks:
        if len(b) > 1:
            idx = np.asarray(b)
            best = max(best, float(np.max(d[np.ix_(idx, idx)])))
    return best


def _to_partition(blocks: list[list[int]], n: int, d: np.ndarray) -> Partition:
    blocks = sorted((sorted(b) for b in blocks if b), key=lambda b: b[0])
    block_of = [0] * n
    for bi, b in enumerate(blocks):
        for i in b:
            block_of[i] = bi
    return Partition(tuple(block_of), len(blocks), _diameter_of(blocks, d))


def _split_to_k(blocks: list[list[int]], k: int) -> list[list[int]]:
    # peeling a singleton off a block never increases any diameter
    blocks = [list(b) for b in blocks]
    while len(blocks) < k:
        big = max(range(len(blocks)), key=lambda i: len(blocks[i]))
        blocks.append([blocks[big].pop()])
    return blocks


def _dp1d(members, k, d) -> list[list[int]]:
    keys = [m.order_key for m in members]
    if any(kk is None for kk in keys):
        raise UnorderedFamilyError(f"{type(members[0]).__name__} has no one-dimensional order")
    order = sorted(range(len(members)), key=lambda i: (keys[i], i))
    ds = d[np.ix_(order, order)]
    n = len(order)

    def greedy(limit):
        cuts, start = [], 0
        for j in range(1, n):
            if ds[start, j] > limit:
                cuts.append((start, j))
                start = j
        cuts.append((start, n))
        return cuts

    cand = np.unique(ds[np.triu_indices(n)])
    lo, hi = 0, cand.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if len(greedy(cand[mid])) <= k:
            hi = mid
        else:
            lo = mid + 1
    return [[order[i] for i in range(a, b)] for a, b in greedy(cand[lo])]


def _brute(n, k, d) -> list[list[int]]:
    best = [math.inf, None]
    blocks: list[list[int]] = []

    def rec(i, cur):
        if cur >= best[0]:
            return
        if i == n:
            best[0] = cur
            best[1] = [list(b) for b in blocks]
            return
        for b in blocks:
            nd = max(cur, max(d[i, j] for j in b))
            if nd < best[0]:
                b.append(i)
                rec(i + 1, nd)
                b.pop()
        if len(blocks) < k:
            blocks.append([i])
            rec(i + 1, cur)
            blocks.pop()

    rec(0, 0.0)
    return best[1]


def partition_diameter(members: Sequence[Member], k: int, method: str = "dp1d") -> Partition:
    """Smallest max intra-block D_1/2 diameter over partitions into k blocks."""
    members = tuple(members)
    common_kind(members)
    n = len(members)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if method not in ("dp1d", "brute"):
        raise ValidationError(f"unknown partition method {method!r}")
    d = renyi_matrix(members)
    if k >= n:
        return _to_partition([[i] for i in range(n)], n, d)
    if method == "dp1d":
        blocks = _dp1d(members, k, d)
    else:
        if n > BRUTE_PARTITION_MAX_N:
            raise CapacityError(f"brute-force partitions limited to n <= {BRUTE_PARTITION_MAX_N}")
        blocks = _brute(n, k, d)
    return _to_partition(_split_to_k(blocks, k), n, d)


# ---------------------------------------------------------------------------
# k-way expansion


@dataclass(frozen=True)
class ExpansionResult:
    rho: float
    witness_sets: tuple

    def to_dict(self) -> dict:
        return {"rho": self.rho, "witness_sets": [list(s) for s in self.witness_sets]}


def _entries(a) -> np.ndarray:
    return a.entries if isinstance(a, OverlapMatrix) else np.asarray(a, dtype=float)


def conductance_table(a) -> np.ndarray:
    """phi(S) for every subset bitmask S (index 0, the empty set, is nan).

    Only off-diagonal weights count.  A set whose volume is zero has no edges
    at all; its conductance is taken to be 0.
    """
    e = _entries(a)
    n = e.shape[0]
    w = e - np.diag(np.diag(e))
    deg = w.sum(axis=1)
    masks = np.arange(1 << n)
    bits = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    vol = bits @ deg
    internal = np.einsum("su,uv,sv->s", bits, w, bits)
    cut = vol - internal
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(vol > 0, cut / np.where(vol > 0, vol, 1.0), 0.0)
    phi = np.maximum(phi, 0.0)
    phi[0] = np.nan
    return phi


def conductance(a, subset: Iterable[int]) -> float:
    e = _entries(a)
    s = sorted(set(subset))
    if not s:
        raise ValidationError("conductance of the empty set is undefined")
    w = e - np.diag(np.diag(e))
    inside = np.zeros(e.shape[0], dtype=bool)
    inside[s] = True
    vol = float(w[inside].sum())
    if vol == 0.0:
        return 0.0
    return float(w[np.ix_(inside, ~inside)].sum()) / vol


def _minimal(masks: list[int]) -> list[int]:
    """Inclusion-minimal members; any packing can be shrunk onto them."""
    masks = sorted(set(masks), key=lambda m: (bin(m).count("1"), m))
    out: list[int] = []
    for m in masks:
        if not any((o & m) == o for o in out):
            out.append(m)
    return out


def _packable(masks: list[int], k: int) -> list[int] | None:
    cands = sorted(_minimal(masks), key=lambda m: ((m & -m).bit_length(), m))
    chosen: list[int] = []

    def rec(start, used):
        if len(chosen) == k:
            return True
        for i in range(start, len(cands)):
            c = cands[i]
            if c & used:
                continue
            chosen.append(c)
            if rec(i + 1, used | c):
                return True
            chosen.pop()
        return False

    return list(chosen) if rec(0, 0) else None


def kway_expansion(a, k: int) -> ExpansionResult:
    """rho(k) = min over k disjoint nonempty vertex sets of their max conductance."""
    e = _entries(a)
    n = e.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if k > n:
        raise ValidationError(f"cannot choose {k} disjoint nonempty sets from {n} vertices")
    if (k + 1) ** n > EXPANSION_BUDGET:
        raise CapacityError(f"k-way expansion budget (k+1)^n = {(k + 1) ** n} exceeds {EXPANSION_BUDGET:g}")
    phi = conductance_table(e)
    masks = np.arange(1, 1 << n)
    vals = phi[1:]
    thresholds = np.unique(vals)
    lo, hi = 0, thresholds.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        cand = [int(m) for m in masks[vals <= thresholds[mid]]]
        if _packable(cand, k) is not None:
            hi = mid
        else:
            lo = mid + 1
    witness = _packable([int(m) for m in masks[vals <= thresholds[lo]]], k)
    sets = tuple(tuple(i for i in range(n) if (m >> i) & 1) for m in witness)
    sets = tuple(sorted(sets))
    rho = max(float(phi[m]) for m in witness)
    return ExpansionResult(rho, sets)


# ---------------------------------------------------------------------------
# audits


@dataclass(frozen=True)
class InequalityAudit:
    k: int
    lambda_k: float
    cheeger_lhs: float
    rho_k: float
    cheeger_slack: float
    cheeger_pass: bool
    d1: float | None = None
    rho_5: float | None = None
    combinatorial_rhs: float | None = None
    combinatorial_slack: float | None = None
    combinatorial_pass: bool | None = None
    lemma_ratio: float | None = None
    lemma_ratio_label: str = "up to universal constant c; reported, not asserted"

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def passed(self) -> bool:
        return self.cheeger_pass and self.combinatorial_pass is not False


def inequality_audit(a, members: Sequence[Member] = (), k: int = 2) -> InequalityAudit:
    """Check (1 - lambda_k)/2 <= rho(k); with k = 1 also rho(5) >= exp(-D_1)/4.

    When at least 10k members are given, (1 - lambda_{10k}) log(5k) e^{2 D_k}
    is reported as well.
    """
    e = _entries(a)
    n = e.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    lam = eigen_sym(e).eigenvalues
    lhs = (1.0 - lam[k - 1]) / 2.0
    rho = kway_expansion(e, k).rho
    slack = rho - lhs
    out = dict(k=k, lambda_k=lam[k - 1], cheeger_lhs=lhs, rho_k=rho,
               cheeger_slack=slack, cheeger_pass=bool(slack >= -CHEEGER_SLACK))
    members = tuple(members)
    if members:
        if len(members) != n:
            raise ValidationError("members must match the matrix size")
        if k == 1 and n >= 5:
            d1 = partition_diameter(members, 1, method="brute" if n <= BRUTE_PARTITION_MAX_N else "dp1d").diameter
            r5 = kway_expansion(e, 5).rho
            rhs = 0.25 * math.exp(-d1)
            out.update(d1=d1, rho_5=r5, combinatorial_rhs=rhs,
                       combinatorial_slack=r5 - rhs, combinatorial_pass=bool(r5 >= rhs))
        if n >= 10 * k:
            dk = partition_diameter(members, k, method="dp1d").diameter
            out["lemma_ratio"] = (1.0 - lam[10 * k - 1]) * math.log(5 * k) * math.exp(2.0 * dk)
    return InequalityAudit(**out)


# ---------------------------------------------------------------------------
# capacity


@dataclass(frozen=True)
class PriorWeights:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("prior weights must lie on the simplex")


@dataclass(frozen=True)
class CapacityResult:
    value: float
    prior: PriorWeights
    uniform_value: float
    history: tuple = field(default=(), repr=False)


def _mi_and_grad(logp, logw, rho):
    """I_chi2(rho) = sum_i rho_i int p_i^2 / p_rho - 1 and its gradient."""
    with np.errstate(divide="ignore"):
        logr = np.log(rho)
    lmix = logsumexp(logp + logr[:, None], axis=0)
    keep = np.isfinite(lmix)
    lp, lw, lm = logp[:, keep], logw[keep], lmix[keep]
    sq = np.exp(2.0 * lp + lw - lm)  # p_i^2 / p_rho
    s = sq.sum(axis=1)
    value = float(rho @ s) - 1.0
    # d/d rho_k of sum_i rho_i int p_i^2/p_rho = int p_k^2/p_rho - int p_k (sum_i rho_i p_i^2) / p_rho^2
    q = np.exp(logsumexp(2.0 * lp + logr[:, None], axis=0) - 2.0 * lm + lw)
    grad = s - np.exp(lp) @ q
    return value, grad


def capacity_lower(grid: Sequence[Member], iters: int = 500, tol: float = 1e-10,
                   cfg: QuadConfig | None = None) -> CapacityResult:
    """Multiplicative-weights ascent of the chi^2 mutual information over priors on ``grid``.

    Starts from the uniform prior, whose value is Tr(A) - 1, and only accepts
    improving steps, so the result is a certified lower bound on the capacity
    of any family containing the grid (up to quadrature error).
    """
    grid = tuple(grid)
    common_kind(grid)
    n = len(grid)
    if n == 1:
        return CapacityResult(0.0, PriorWeights((1.0,)), 0.0, (0.0,))
    logp, logw = density_rule(grid, cfg)
    rho = np.full(n, 1.0 / n)
    val, grad = _mi_and_grad(logp, logw, rho)
    uniform = val
    history = [val]
    eta = 1.0
    for _ in range(iters):
        step = rho * np.exp(eta * (grad - grad.max()))
        step /= step.sum()
        nval, ngrad = _mi_and_grad(logp, logw, step)
        if nval > val:
            gain = nval - val
            rho, val, grad = step, nval, ngrad
            history.append(val)
            eta = min(eta * 1.5, 1e3)
            if gain <= tol * max(1.0, abs(val)):
                break
        else:
            eta *= 0.5
            if eta < 1e-12:
                break
    rho = np.maximum(rho, 0.0)
    rho /= rho.sum()
    return CapacityResult(val, PriorWeights(tuple(float(v) for v in rho)), uniform, tuple(history))


@dataclass(frozen=True)
class DiscreteSimplexFamily:
    """All pmfs on m categories with p[0] >= eps."""

    m: int
    eps: float

    def __post_init__(self):
        if self.m < 2 or not 0 <= self.eps <= 1:
            raise ValidationError("need m >= 2 and eps in [0, 1]")

    def grid(self, size: int, seed: int = 0) -> list[Discrete]:
        """``size`` members: the vertices, then Dirichlet draws pushed into the constraint set."""
        rng = np.random.default_rng(seed)
        out = []
        for j in range(self.m):
            p = np.zeros(self.m)
            p[0] = self.eps
            p[j] += 1.0 - self.eps
            out.append(p)
        while len(out) < size:
            q = rng.dirichlet(np.ones(self.m))
            p = self.eps * np.eye(self.m)[0] + (1.0 - self.eps) * q
            out.append(p)
        out = out[:size]
        return [Discrete(tuple(p / p.sum())) for p in out]


@dataclass(frozen=True)
class GaussianLocBall:
    """Unit-variance Gaussians with |mean| <= mu."""

    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ValidationError("mu must be finite and >= 0")


def gaussian_ratio_sup(theta: float, tau: float) -> float:
    """sup_x N(theta, 1)(x) / N(0, tau^2)(x) = tau exp(theta^2 / (2 (tau^2 - 1)))."""
    if not tau > 1.0:
        raise ValidationError(f"reference scale tau must exceed 1, got {tau!r}")
    log_sup = math.log(tau) + theta * theta / (2.0 * (tau * tau - 1.0))
    return math.exp(log_sup) if log_sup < 709.0 else math.inf


def default_tau_grid(mu: float) -> np.ndarray:
    star = 0.5 * (mu + math.sqrt(mu * mu + 4.0))  # stationary point of the sup in tau
    grid = 1.0 + np.geomspace(1e-4, 100.0, 400)
    return np.unique(np.append(grid, star if star > 1.0 else []))


def capacity_upper_ratio(family, reference: Member | None = None, tau_grid=None) -> float:
    """sup over members of sup_x dP/dQ, minus one: an upper bound on the chi^2 capacity."""
    if isinstance(family, DiscreteSimplexFamily):
        q = np.full(family.m, 1.0 / family.m) if reference is None else np.asarray(reference.pmf)
        if q.size != family.m:
            raise ValidationError("reference support size does not match the family")
        top = np.full(family.m, 1.0 - family.eps)
        top[0] = 1.0
        if np.any((q == 0) & (top > 0)):
            raise ValidationError("density ratio is unbounded: reference misses a category")
        return float(np.max(top / q)) - 1.0
    if isinstance(family, GaussianLocBall):
        if reference is not None:
            if not isinstance(reference, GaussianScale):
                raise ValidationError("GaussianLoc families need a centred GaussianScale reference")
            return gaussian_ratio_sup(family.mu, reference.sigma) - 1.0
        taus = default_tau_grid(family.mu) if tau_grid is None else np.asarray(tau_grid, dtype=float)
        return min(gaussian_ratio_sup(family.mu, t) for t in taus) - 1.0
    members = tuple(family)
    if not members:
        raise ValidationError("need at least one member")
    if reference is None:
        raise ValidationError("an explicit member list needs a reference member")
    if all(m == reference for m in members):
        return 0.0
    cls = common_kind(members)
    if cls is Discrete:
        common_kind(members + (reference,))
        q = np.asarray(reference.pmf)
        p = np.array([m.pmf for m in members])
        if np.any((q[None, :] == 0) & (p > 0)):
            raise ValidationError("density ratio is unbounded: reference misses a category")
        mask = q > 0
        return float(np.max(p[:, mask] / q[None, mask])) - 1.0
    if cls is GaussianLoc:
        if not isinstance(reference, GaussianScale):
            raise ValidationError("GaussianLoc members need a centred GaussianScale reference")
        return max(gaussian_ratio_sup(m.mean, reference.sigma) for m in members) - 1.0
    if cls is GaussianScale:
        if not isinstance(reference, GaussianScale):
            raise ValidationError("GaussianScale members need a GaussianScale reference")
        if any(m.sigma > reference.sigma for m in members):
            raise ValidationError("density ratio is unbounded: a member is wider than the reference")
        return max(reference.sigma / m.sigma for m in members) - 1.0
    raise ValidationError(f"no density-ratio bound for {cls.__name__} members")


# ---------------------------------------------------------------------------
# composite bounds


@dataclass(frozen=True)
class LabeledBound:
    value: float
    label: str = UP_TO_CONSTANT
    terms: int = 0

    def __float__(self) -> float:
        return self.value


def log_plus(x: float) -> float:
    """log(max(x, e)); log_plus(-inf) = 1."""
    return 1.0 if x <= math.e else math.log(x)


def bound_dim_independent(dk_schedule: Sequence[float], cap: float) -> LabeledBound:
    """sum_{k <= floor(cap)+1} D_k + (cap + 1) log_plus(log cap)."""
    d = [float(v) for v in dk_schedule]
    if not (math.isfinite(cap) and cap >= 0):
        raise ValidationError(f"capacity must be finite and >= 0, got {cap!r}")
    if any(v < 0 or not math.isfinite(v) for v in d):
        raise ValidationError("D_k values must be finite and >= 0")
    if any(b > a for a, b in zip(d, d[1:])):
        raise ValidationError("D_k schedule must be nonincreasing in k")
    terms = math.floor(cap) + 1
    if len(d) < terms:
        raise ValidationError(f"need D_1..D_{terms}, got {len(d)} values")
    loglog = math.log(cap) if cap > 0 else -math.inf
    return LabeledBound(math.fsum(d[:terms]) + (cap + 1.0) * log_plus(loglog), UP_TO_CONSTANT, terms)


def dimension_term(n: int, k: int) -> float:
    return 0.5 * (k - 1) * math.log(2.0 * math.pi * (n + k) / k)


def bound_dim_dependent(n: int, blocks: Sequence[float]) -> float:
    """((k-1)/2) log(2 pi (n+k)/k) + sum of per-block log(1 + chi^2) certificates."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n!r}")
    b = [float(v) for v in blocks]
    if not b:
        raise ValidationError("need at least one block certificate")
    if any(v < 0 or math.isnan(v) for v in b):
        raise ValidationError("block certificates must be >= 0")
    if any(math.isinf(v) for v in b):
        return math.inf
    return dimension_term(n, len(b)) + math.fsum(b)


def best_dim_dependent(n: int, certificates: Callable[[int], Sequence[float]],
                       ks: Iterable[int]) -> tuple[float, int]:
    """Minimise the dimension-dependent bound over k; ties go to the smaller k."""
    best = (math.inf, 0)
    for k in sorted(set(int(v) for v in ks)):
        v = bound_dim_dependent(n, certificates(k))
        if v < best[0]:
            best = (v, k)
    return best
