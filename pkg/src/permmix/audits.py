"""Seeded invariant audits bundled by ``permmix verify``.

Each audit draws its own cases from a fixed seed and returns an
``AuditResult``.  Slack is signed so that a negative worst slack means a
violated check.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .compound import (
    CompoundInstance,
    half_noise_posterior,
    interp_identity_check,
    orthogonality_check,
    pi_oracle,
    pi_oracle_enumerate,
    tilt_variance_check,
    transportation_check,
)
from .families import GaussianLoc, Poisson
from .geometry import inequality_audit
from .overlap import build_overlap, sinkhorn_project, structure_residuals
from .permanent import log1p_chi2_from_overlap
from .spectrum import hessian_det_check, spectral_upper

OVERLAP_TOL = 1e-8
PSD_TOL = 1e-9
LEADING_TOL = 1e-9
HESSIAN_TOL = 1e-8
ORACLE_TOL = 1e-10
INTERP_TOL = 1e-7


@dataclass(frozen=True)
class AuditResult:
    name: str
    passed: bool
    worst_slack: float
    cases: int

    def to_dict(self) -> dict:
        return asdict(self)


def _result(name: str, slacks) -> AuditResult:
    s = np.asarray(list(slacks), dtype=float)
    return AuditResult(name, bool(np.all(s >= 0)), float(s.min()), int(s.size))


def random_family(rng: np.random.Generator, n_max: int = 12, scale: float = 20.0):
    """Gaussian or Poisson members with parameters in [0, scale]."""
    n = int(rng.integers(2, n_max + 1))
    params = np.round(rng.uniform(0.0, scale, n), 6)
    cls = GaussianLoc if rng.random() < 0.5 else Poisson
    return [cls(float(p)) for p in params]


def random_sinkhorn_matrix(rng: np.random.Generator, n: int, low: float = 0.01) -> np.ndarray:
    """Symmetric doubly stochastic projection of a matrix with entries in [low, 1]."""
    m = rng.uniform(low, 1.0, (n, n))
    return sinkhorn_project(m + m.T, tol=1e-14, symmetric=True)


def random_instance(rng: np.random.Generator, n_max: int = 7) -> CompoundInstance:
    n = int(rng.integers(2, n_max + 1))
    if rng.random() < 0.5:
        return CompoundInstance("gaussian", np.round(rng.normal(0.0, 1.5, n), 4))
    return CompoundInstance("poisson", rng.choice([0.0, 0.5, 1.0, 3.0, 6.0], n))


def draw_observation(rng: np.random.Generator, inst: CompoundInstance) -> np.ndarray:
    return inst.draw(rng, rng.permutation(inst.arr))


def random_transport_case(rng: np.random.Generator):
    """(h, (atoms, weights), mu) with atoms in [0, h] and mean(mu) in [0, h]."""
    h = float(rng.uniform(0.2, 6.0))
    k = int(rng.integers(1, 5))
    atoms = rng.uniform(0.0, h, k)
    weights = rng.dirichlet(np.ones(k))
    top = int(math.floor(h))
    if top >= 1 and rng.random() < 0.5:
        mu = rng.dirichlet(np.ones(top + 1))
    else:
        # a near-neighbour of the mixture itself, kept on 0..len-1
        size = int(math.ceil(h + 12.0 * math.sqrt(h + 1.0) + 40.0)) + 1
        j = np.arange(size, dtype=float)
        alt = rng.uniform(0.0, h, k)
        lp = j[None, :] * np.log(np.maximum(alt, 1e-300))[:, None] - alt[:, None] - np.array(
            [math.lgamma(v + 1.0) for v in j])[None, :]
        mu = rng.dirichlet(np.ones(k)) @ np.exp(lp)
        mu /= mu.sum()
    return h, (atoms, weights / weights.sum()), mu


def random_tilt_case(rng: np.random.Generator, h: float | None = None):
    """(weights, means, h): the Z | X_1 posterior of a simulated half-noise draw.

    theta is spread over [-h/2, h/2], so the posterior means (theta_j + X_1)/2
    lie within h/2 of each other.
    """
    if h is None:
        h = float(rng.uniform(0.0, 8.0))
    n = int(rng.integers(1, 7))
    theta = rng.uniform(-h / 2.0, h / 2.0, n)
    x1 = float(rng.choice(theta) + rng.standard_normal())
    weights, means = half_noise_posterior(theta, x1)
    return weights, means, h


TILT_GRID = np.linspace(-40.0, 40.0, 321)


# ---------------------------------------------------------------------------


def audit_overlap(seed: int, cases: int = 30, perturb: bool = False) -> AuditResult:
    rng = np.random.default_rng([seed, 1])
    slacks = []
    for i in range(cases):
        a = np.array(build_overlap(random_family(rng, n_max=8)).entries)
        if perturb and i == 0:
            a[0, 1] += 1e-3
        r = structure_residuals(a)
        slacks += [
            OVERLAP_TOL - r["symmetry"],
            OVERLAP_TOL - r["row_sum"],
            OVERLAP_TOL - r["col_sum"],
            r["min_eigenvalue"] + PSD_TOL,
            LEADING_TOL - r["leading_eigenvalue_gap"],
        ]
    return _result("overlap", slacks)


def audit_sandwich(seed: int, cases: int = 30) -> AuditResult:
    rng = np.random.default_rng([seed, 2])
    slacks = []
    for _ in range(cases):
        a = build_overlap(random_family(rng, n_max=10))
        slacks.append(spectral_upper(a) - log1p_chi2_from_overlap(a))
    return _result("sandwich", slacks)


def audit_cheeger(seed: int, cases: int = 10) -> AuditResult:
    rng = np.random.default_rng([seed, 3])
    slacks = []
    for _ in range(cases):
        a = build_overlap(random_family(rng, n_max=7, scale=6.0))
        for k in (2, 3):
            if k <= a.n:
                slacks.append(inequality_audit(a, k=k).cheeger_slack)
    for _ in range(4):
        n = int(rng.integers(5, 8))
        members = [GaussianLoc(float(v)) for v in np.sort(rng.uniform(0.0, 4.0, n))]
        r = inequality_audit(build_overlap(members), members, k=1)
        slacks.append(r.combinatorial_slack)
    return _result("cheeger", slacks)


def audit_hessian(seed: int, cases: int = 30) -> AuditResult:
    rng = np.random.default_rng([seed, 4])
    slacks = []
    for _ in range(cases):
        a = random_sinkhorn_matrix(rng, int(rng.integers(2, 7)))
        slacks.append(HESSIAN_TOL - hessian_det_check(a).rel_err)
    return _result("hessian", slacks)


def audit_oracle(seed: int, cases: int = 30) -> AuditResult:
    rng = np.random.default_rng([seed, 5])
    slacks = []
    for _ in range(cases):
        inst = random_instance(rng, n_max=6)
        x = draw_observation(rng, inst)
        ref = pi_oracle_enumerate(inst, x)
        got = pi_oracle(inst, x).pi
        err = np.where(ref == 0.0, np.abs(got), np.abs(got - ref) / np.where(ref == 0.0, 1.0, np.abs(ref)))
        slacks.append(ORACLE_TOL - float(err.max()))
    return _result("oracle", slacks)


def audit_orthogonality(seed: int, samples: int = 20000, threads: int | None = None) -> AuditResult:
    cases = [
        CompoundInstance("gaussian", (0.0, 1.0, 2.0)),
        CompoundInstance("gaussian", (-1.0, -0.5, 0.0, 0.5, 1.0)),
        CompoundInstance("poisson", (1.0, 4.0)),
        CompoundInstance("poisson", (0.0, 2.0, 5.0, 5.0)),
    ]
    slacks = []
    for i, inst in enumerate(cases):
        r = orthogonality_check(inst, samples, seed + i, threads)
        slacks.append(4.0 * r.combined_se - abs(r.lhs - r.rhs))
    return _result("orthogonality", slacks)


def audit_interpolation(seed: int, cases: int = 40) -> AuditResult:
    rng = np.random.default_rng([seed, 7])
    slacks = []
    for model in ("gaussian", "poisson"):
        for _ in range(cases):
            n = int(rng.integers(2, 6))
            if model == "gaussian":
                inst = CompoundInstance(model, np.round(rng.normal(0.0, 1.5, n), 4))
            else:
                inst = CompoundInstance(model, np.round(rng.uniform(0.0, 6.0, n), 4))
            r = interp_identity_check(inst, draw_observation(rng, inst))
            slacks.append(INTERP_TOL - max(r.residual_direct, r.residual_route))
    return _result("interpolation", slacks)


def audit_transportation(seed: int, cases: int = 50) -> AuditResult:
    rng = np.random.default_rng([seed, 8])
    slacks = []
    for _ in range(cases):
        h, mixing, mu = random_transport_case(rng)
        r = transportation_check(h, mixing, mu)
        slacks.append(r.rhs - r.lhs)
    return _result("transportation", slacks)


def audit_tilt(seed: int, cases: int = 30) -> AuditResult:
    rng = np.random.default_rng([seed, 9])
    slacks = []
    for _ in range(cases):
        w, means, h = random_tilt_case(rng)
        r = tilt_variance_check(w, means, 0.5, h, TILT_GRID)
        slacks.append(r.bound - r.max_var)
    return _result("tilt", slacks)


AUDITS: dict[str, Callable[..., AuditResult]] = {
    "overlap": audit_overlap,
    "sandwich": audit_sandwich,
    "cheeger": audit_cheeger,
    "hessian": audit_hessian,
    "oracle": audit_oracle,
    "orthogonality": audit_orthogonality,
    "interpolation": audit_interpolation,
    "transportation": audit_transportation,
    "tilt": audit_tilt,
}


def run_audits(seed: int = 0, only=None, perturb: bool = False, threads: int | None = None) -> list[AuditResult]:
    names = list(AUDITS) if not only else list(only)
    out = []
    for name in names:
        if name == "overlap":
            out.append(audit_overlap(seed, perturb=perturb))
        elif name == "orthogonality":
            out.append(audit_orthogonality(seed, threads=threads))
        else:
            out.append(AUDITS[name](seed))
    return out
