"""Parametric families: log densities, sampling and closed-form divergences.

Every member is an immutable value object.  Densities are evaluated in the
log domain first; ``density`` is just ``exp(log_density)``.

Infinite divergences are returned as ``math.inf`` rather than raised, so
bound evaluators downstream can propagate them.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import (
    FamilyMismatchError,
    IncompatibleObservationError,
    ValidationError,
)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Member:
    """Base class for one distribution of a parametric family."""

    kind: str = ""

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Vectorised log density; no observation validation."""
        raise NotImplementedError

    def check_observation(self, x) -> None:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def order_key(self) -> float | None:
        """Scalar along which D_1/2 is monotone in the gap, if one exists."""
        return None


def _is_real(x) -> bool:
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


@dataclass(frozen=True)
class GaussianLoc(Member):
    mean: float
    kind = "gaussian"

    def __post_init__(self):
        if not _is_real(self.mean) or not math.isfinite(self.mean):
            raise ValidationError(f"GaussianLoc mean must be finite, got {self.mean!r}")
        object.__setattr__(self, "mean", float(self.mean))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (x - self.mean) ** 2 - LOG_SQRT_2PI

    def check_observation(self, x):
        if not _is_real(x) or not math.isfinite(x):
            raise IncompatibleObservationError(f"expected a finite real, got {x!r}")

    def draw(self, rng, size=None):
        return rng.normal(self.mean, 1.0, size)

    @property
    def order_key(self):
        return self.mean


@dataclass(frozen=True)
class Poisson(Member):
    rate: float
    kind = "poisson"

    def __post_init__(self):
        if not _is_real(self.rate) or not math.isfinite(self.rate) or self.rate < 0:
            raise ValidationError(f"Poisson rate must be finite and >= 0, got {self.rate!r}")
        object.__setattr__(self, "rate", float(self.rate))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.rate == 0.0:
            return np.where(x == 0, 0.0, -np.inf)
        return x * math.log(self.rate) - self.rate - gammaln(x + 1.0)

    def check_observation(self, x):
        ok = (
            isinstance(x, numbers.Integral) and not isinstance(x, bool)
        ) or (_is_real(x) and math.isfinite(x) and float(x).is_integer())
        if not ok or x < 0:
            raise IncompatibleObservationError(f"expected a nonnegative integer, got {x!r}")

    def draw(self, rng, size=None):
        return rng.poisson(self.rate, size)

    @property
    def order_key(self):
        return math.sqrt(self.rate)


@dataclass(frozen=True)
class Discrete(Member):
    pmf: tuple
    kind = "discrete"

    def __post_init__(self):
        p = tuple(float(v) for v in self.pmf)
        if len(p) == 0:
            raise ValidationError("Discrete pmf must be nonempty")
        if any(not math.isfinite(v) or v < 0 for v in p):
            raise ValidationError("Discrete pmf entries must be finite and >= 0")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValidationError(f"Discrete pmf sums to {math.fsum(p)!r}, not 1")
        object.__setattr__(self, "pmf", p)

    @property
    def support_size(self) -> int:
        return len(self.pmf)

    def logpdf(self, x):
        p = np.asarray(self.pmf)
        with np.errstate(divide="ignore"):
            return np.log(p[np.asarray(x, dtype=int)])

    def check_observation(self, x):
        if not isinstance(x, numbers.Integral) or isinstance(x, bool) or not 0 <= x < len(self.pmf):
            raise IncompatibleObservationError(
                f"expected a category index in [0, {len(self.pmf)}), got {x!r}"
            )

    def draw(self, rng, size=None):
        return rng.choice(len(self.pmf), size=size, p=np.asarray(self.pmf))


@dataclass(frozen=True)
class GaussianScale(Member):
    sigma: float
    kind = "gaussian-scale"

    def __post_init__(self):
        if not _is_real(self.sigma) or not math.isfinite(self.sigma) or self.sigma <= 0:
            raise ValidationError(f"GaussianScale sigma must be > 0, got {self.sigma!r}")
        object.__setattr__(self, "sigma", float(self.sigma))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (x / self.sigma) ** 2 - math.log(self.sigma) - LOG_SQRT_2PI

    def check_observation(self, x):
        if not _is_real(x) or not math.isfinite(x):
            raise IncompatibleObservationError(f"expected a finite real, got {x!r}")

    def draw(self, rng, size=None):
        return rng.normal(0.0, self.sigma, size)

    @property
    def order_key(self):
        return math.log(self.sigma)


@dataclass(frozen=True)
class GaussianLocMulti(Member):
    mean: tuple
    kind = "gaussian-multi"

    def __post_init__(self):
        m = tuple(float(v) for v in self.mean)
        if not m or any(not math.isfinite(v) for v in m):
            raise ValidationError("GaussianLocMulti mean must be a nonempty finite vector")
        object.__setattr__(self, "mean", m)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        d = x - np.asarray(self.mean)
        return -0.5 * np.sum(d * d, axis=-1) - self.dim * LOG_SQRT_2PI

    def check_observation(self, x):
        try:
            arr = np.asarray(x, dtype=float)
        except (TypeError, ValueError):
            raise IncompatibleObservationError(f"expected a real vector, got {x!r}") from None
        if arr.shape != (self.dim,) or not np.all(np.isfinite(arr)):
            raise IncompatibleObservationError(
                f"expected a finite vector of length {self.dim}, got shape {arr.shape}"
            )

    def draw(self, rng, size=None):
        shape = (self.dim,) if size is None else tuple(np.atleast_1d(size)) + (self.dim,)
        return np.asarray(self.mean) + rng.standard_normal(shape)


# ---------------------------------------------------------------------------


def log_density(m: Member, x) -> float:
    m.check_observation(x)
    return float(m.logpdf(x))


def density(m: Member, x) -> float:
    return math.exp(log_density(m, x))


def common_kind(members: Sequence[Member]) -> type:
    """Return the shared member class, rejecting mixed kinds."""
    if len(members) == 0:
        raise ValidationError("need at least one member")
    cls = type(members[0])
    for m in members[1:]:
        if type(m) is not cls:
            raise FamilyMismatchError(f"cannot mix {cls.kind!r} and {type(m).kind!r} members")
    if cls is Discrete:
        sizes = {m.support_size for m in members}
        if len(sizes) > 1:
            raise FamilyMismatchError(f"Discrete members have different support sizes {sorted(sizes)}")
    if cls is GaussianLocMulti:
        dims = {m.dim for m in members}
        if len(dims) > 1:
            raise FamilyMismatchError(f"GaussianLocMulti members have different dimensions {sorted(dims)}")
    return cls


def _log_cosh(r: float) -> float:
    r = abs(r)
    return r + math.log1p(math.exp(-2.0 * r)) - math.log(2.0)


def renyi_half(p: Member, q: Member) -> float:
    """Rényi divergence of order 1/2, ``-2 log(1 - H^2/2)``."""
    cls = common_kind([p, q])
    if p == q:
        return 0.0
    if cls is GaussianLoc:
        return (p.mean - q.mean) ** 2 / 4.0
    if cls is GaussianLocMulti:
        d = np.asarray(p.mean) - np.asarray(q.mean)
        return float(d @ d) / 4.0
    if cls is Poisson:
        return (math.sqrt(p.rate) - math.sqrt(q.rate)) ** 2
    if cls is GaussianScale:
        return _log_cosh(math.log(p.sigma) - math.log(q.sigma))
    # Discrete: go through the squared Hellinger distance for accuracy near p = q.
    a, b = np.sqrt(p.pmf), np.sqrt(q.pmf)
    h2 = math.fsum((a - b) ** 2)
    bc = 1.0 - h2 / 2.0
    if bc <= 0.0:
        return math.inf
    return -2.0 * math.log1p(-h2 / 2.0)


def chi2_pair(p: Member, q: Member) -> float:
    """chi^2(P || Q); ``math.inf`` where the integral diverges."""
    cls = common_kind([p, q])
    if p == q:
        return 0.0
    if cls is GaussianLoc:
        return math.expm1((p.mean - q.mean) ** 2) if abs(p.mean - q.mean) < 26.6 else math.inf
    if cls is GaussianLocMulti:
        d = np.asarray(p.mean) - np.asarray(q.mean)
        s = float(d @ d)
        return math.expm1(s) if s < 709.0 else math.inf
    if cls is Poisson:
        if q.rate == 0.0:
            return 0.0 if p.rate == 0.0 else math.inf
        e = (p.rate - q.rate) ** 2 / q.rate
        return math.expm1(e) if e < 709.0 else math.inf
    if cls is GaussianScale:
        s1, s2 = p.sigma ** 2, q.sigma ** 2
        if s1 >= 2.0 * s2:
            return math.inf
        return s2 / math.sqrt(s1 * (2.0 * s2 - s1)) - 1.0
    pp, qq = np.asarray(p.pmf), np.asarray(q.pmf)
    if np.any((qq == 0) & (pp > 0)):
        return math.inf
    mask = qq > 0
    return math.fsum((pp[mask] - qq[mask]) ** 2 / qq[mask])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream from a 64-bit seed."""
    if not isinstance(seed, numbers.Integral) or not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return np.random.default_rng(int(seed))


def sample(m: Member, rng: np.random.Generator):
    """One draw from ``m``; integers for Poisson and Discrete."""
    x = m.draw(rng)
    if isinstance(m, (Poisson, Discrete)):
        return int(x)
    if isinstance(m, GaussianLocMulti):
        return np.asarray(x)
    return float(x)


KINDS = {
    "gaussian": GaussianLoc,
    "poisson": Poisson,
    "discrete": Discrete,
    "gaussian-scale": GaussianScale,
    "gaussian-multi": GaussianLocMulti,
}
