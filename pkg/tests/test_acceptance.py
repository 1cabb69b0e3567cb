"""Acceptance criteria, one or more tests each.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion.
"""

import itertools
import math
import os
import subprocess
import sys
import time

import mpmath as mp
import numpy as np
import pytest

from permmix.compound import (
    CompoundInstance,
    interp_identity_check,
    orthogonality_check,
    pi_oracle,
    tilt_variance_check,
    transportation_check,
)
from permmix.families import Discrete, GaussianLoc, Poisson
from permmix.geometry import (
    DiscreteSimplexFamily,
    capacity_lower,
    capacity_upper_ratio,
    inequality_audit,
)
from permmix.overlap import build_overlap, sinkhorn_project, trace_capacity_lb
from permmix.permanent import (
    chi2_exact,
    log1p_chi2_from_overlap,
    mixing_scalar,
    replication_trajectory,
    two_component_chi2,
)
from permmix.spectrum import eigen_sym, hessian_det_check, spectral_upper

crit = pytest.mark.criterion


def _family_200():
    """Criterion 3/4 instances: Gaussian and Poisson, n <= 12, parameters in [0, 20]."""
    rng = np.random.default_rng(20240603)
    out = []
    for i in range(200):
        n = int(rng.integers(2, 13))
        params = rng.uniform(0.0, 20.0, n)
        cls = GaussianLoc if i % 2 == 0 else Poisson
        out.append([cls(float(p)) for p in params])
    return out


@pytest.fixture(scope="module")
def overlap_200():
    return [build_overlap(f) for f in _family_200()]


# 1 ---------------------------------------------------------------------------


@crit(1, "permanent chi^2 equals the two-point closed form (1e-8 rel, < 10 s)")
def test_c01_permanent_vs_closed_form(record_property):
    chi2_exact([GaussianLoc(0.0), GaussianLoc(1.0)])  # compile outside the timer
    t0 = time.perf_counter()
    worst = 0.0
    for n in (2, 4, 6, 8, 10, 12):
        for mu in (0.25, 0.5, 1.0, 2.0):
            members = [GaussianLoc(-mu)] * (n // 2) + [GaussianLoc(mu)] * (n // 2)
            got = chi2_exact(members)
            want = two_component_chi2(n // 2, mixing_scalar("gaussian", mu))
            rel = abs(got - want) / want
            worst = max(worst, rel)
            assert rel < 1e-8, (n, mu, got, want)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst rel {worst:.2e}, {elapsed:.2f} s")
    assert elapsed < 10.0


# 2 ---------------------------------------------------------------------------


@crit(2, "discrete family overlap and spectrum match the analytic form")
def test_c02_analytic_overlap(record_property):
    worst_a = worst_ev = 0.0
    for m in range(2, 9):
        for eps in (0.05, 0.2, 0.45):
            members = []
            for i in range(1, m):
                p = np.zeros(m)
                p[0] = eps
                p[i] += 1.0 - eps
                members.append(Discrete(tuple(p)))
            a = build_overlap(members).entries
            k = m - 1
            want = eps / k * np.ones((k, k)) + (1.0 - eps) * np.eye(k)
            err = float(np.max(np.abs(a - want)))
            worst_a = max(worst_a, err)
            assert err <= 1e-12, (m, eps, err)
            ev = np.array(eigen_sym(a).eigenvalues)
            want_ev = np.array([1.0] + [1.0 - eps] * (m - 2))
            e2 = float(np.max(np.abs(ev - want_ev)))
            worst_ev = max(worst_ev, e2)
            assert e2 <= 1e-10, (m, eps, ev)
    record_property("detail", f"entry err {worst_a:.1e}, eigen err {worst_ev:.1e}")


# 3 ---------------------------------------------------------------------------


@crit(3, "200 quadrature overlaps: symmetric, doubly stochastic, PSD, lambda_1 = 1")
def test_c03_structural_invariants(overlap_200, record_property):
    worst = dict(sym=0.0, ds=0.0, psd=0.0, lead=0.0)
    for a in overlap_200:
        e = a.entries
        worst["sym"] = max(worst["sym"], float(np.max(np.abs(e - e.T))))
        ds = max(np.max(np.abs(e.sum(0) - 1)), np.max(np.abs(e.sum(1) - 1)))
        worst["ds"] = max(worst["ds"], float(ds))
        ev = eigen_sym(e).eigenvalues
        worst["psd"] = min(worst["psd"], ev[-1])
        worst["lead"] = max(worst["lead"], abs(ev[0] - 1.0))
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert worst["sym"] == 0.0
    assert worst["ds"] <= 1e-8
    assert worst["psd"] >= -1e-9
    assert worst["lead"] <= 1e-9


# 4 ---------------------------------------------------------------------------


@crit(4, "log(1 + chi2_exact) <= spectral_upper on all 200 instances")
def test_c04_sandwich(overlap_200, record_property):
    slack = math.inf
    for a in overlap_200:
        lhs = log1p_chi2_from_overlap(a)
        rhs = spectral_upper(a)
        slack = min(slack, rhs - lhs)
        assert lhs <= rhs
    record_property("detail", f"min slack {slack:.3e}")


# 5 ---------------------------------------------------------------------------

LAMBDAS = (0.3, 0.6, 0.9)


def _two_by_two(lam):
    return np.array([[1 + lam, 1 - lam], [1 - lam, 1 + lam]]) / 2.0


@pytest.fixture(scope="module")
def trajectories():
    t0 = time.perf_counter()
    out = {lam: replication_trajectory(_two_by_two(lam), range(1, 201)) for lam in LAMBDAS}
    return out, time.perf_counter() - t0


@crit(5, "replication: within 2% at m=200 and nondecreasing in m (< 30 s)")
def test_c05_replication_converges(trajectories, record_property):
    tr, elapsed = trajectories
    errs = {lam: t.rel_err_final() for lam, t in tr.items()}
    record_property("detail", "rel err at m=200 " + ", ".join(f"{k}: {v:.2%}" for k, v in errs.items())
                    + f"; {elapsed:.1f} s")
    for lam, t in tr.items():
        assert t.target == pytest.approx(1.0 / math.sqrt(1.0 - lam * lam) - 1.0, rel=1e-12)
        assert errs[lam] < 0.02
    assert elapsed < 30.0


@crit(5, "replication: within 2% at m=200 and nondecreasing in m (< 30 s)")
def test_c05_replication_monotone(trajectories, record_property):
    tr, _ = trajectories
    first = {lam: t.first_decrease for lam, t in tr.items()}
    record_property("detail", "first decrease at m = " + ", ".join(f"{k}: {v}" for k, v in first.items()))
    for lam, t in tr.items():
        assert t.nondecreasing, f"lambda2={lam}: trajectory decreases at m={t.first_decrease}"


# 6 ---------------------------------------------------------------------------


def _sinkhorn_min(rng, n, floor=0.01):
    while True:
        m = rng.uniform(0.01, 1.0, (n, n))
        a = sinkhorn_project(m + m.T, tol=1e-14, symmetric=True)
        if a.min() >= floor:
            return a


@crit(6, "Hessian determinant identity, rel_err < 1e-8 on 100 matrices (< 5 s)")
def test_c06_hessian(record_property):
    rng = np.random.default_rng(6)
    mats = [_sinkhorn_min(rng, n) for n in rng.integers(2, 7, 100)]
    hessian_det_check(mats[0])
    t0 = time.perf_counter()
    worst = max(hessian_det_check(a).rel_err for a in mats)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst rel_err {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-8
    assert elapsed < 5.0


# 7 ---------------------------------------------------------------------------


@crit(7, "Cheeger left inequality (k=2,3) and rho(5) >= exp(-D1)/4 (< 2 min)")
def test_c07_cheeger(record_property):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    min_cheeger = math.inf
    for i in range(50):
        n = int(rng.integers(3, 9))
        cls = GaussianLoc if i % 2 == 0 else Poisson
        members = [cls(float(v)) for v in rng.uniform(0.0, 6.0, n)]
        a = build_overlap(members)
        for k in (2, 3):
            r = inequality_audit(a, k=k)
            min_cheeger = min(min_cheeger, r.rho_k - r.cheeger_lhs)
            assert r.cheeger_lhs <= r.rho_k, (i, k, r)
    min_comb = math.inf
    for i in range(20):
        n = int(rng.integers(5, 9))
        width = float(rng.uniform(0.5, 6.0))
        members = [GaussianLoc(float(v)) for v in np.linspace(0.0, width, n)]
        r = inequality_audit(build_overlap(members), members, k=1)
        assert r.d1 == pytest.approx(width * width / 4.0, rel=1e-12)
        min_comb = min(min_comb, r.combinatorial_slack)
        assert r.rho_5 >= r.combinatorial_rhs, (i, r)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"min Cheeger slack {min_cheeger:.3e}, min rho5 slack {min_comb:.3e}, "
                    f"{elapsed:.1f} s")
    assert elapsed < 120.0


# 8 ---------------------------------------------------------------------------


def _enumerate_pi(inst, x, dps=40):
    """E[theta~_i | X^n] by summing all n! assignments in 40-digit arithmetic."""
    mp.mp.dps = dps
    ll = inst.loglik(x)
    n = inst.n
    num = [mp.mpf(0)] * n
    den = mp.mpf(0)
    for p in itertools.permutations(range(n)):
        if not all(np.isfinite(ll[p[j], j]) for j in range(n)):
            continue
        w = mp.exp(mp.fsum(mp.mpf(float(ll[p[j], j])) for j in range(n)))
        den += w
        for j in range(n):
            num[j] += w * mp.mpf(float(inst.theta[p[j]]))
    return np.array([float(v / den) for v in num])


@crit(8, "pi_oracle equals S_n enumeration within 1e-10 relative (n <= 7)")
def test_c08_oracle_equivalence(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 8)) if i < 90 else 7
        if i % 2 == 0:
            inst = CompoundInstance("gaussian", rng.normal(0.0, 2.0, n))
        else:
            inst = CompoundInstance("poisson", rng.choice([0.0, 0.3, 1.0, 2.5, 6.0], n))
        x = inst.draw(rng, rng.permutation(inst.arr))
        ref = _enumerate_pi(inst, x)
        got = pi_oracle(inst, x).pi
        for g, r in zip(got, ref):
            err = abs(g - r) if r == 0 else abs(g - r) / abs(r)
            worst = max(worst, err)
    record_property("detail", f"worst elementwise rel err {worst:.2e}")
    assert worst <= 1e-10


# 9 ---------------------------------------------------------------------------

ORTHO_CASES = [
    ("gaussian", (0.0, 1.0, 2.0)),
    ("gaussian", (-1.0, 1.0)),
    ("gaussian", (-2.0, -1.0, 0.0, 0.5, 1.5)),
    ("gaussian", tuple(np.linspace(-1.5, 1.5, 8))),
    ("gaussian", (0.0, 0.0, 3.0, 3.0, 1.0, 2.0)),
    ("poisson", (1.0, 4.0)),
    ("poisson", (0.0, 2.0, 5.0)),
    ("poisson", (0.5, 0.5, 3.0, 6.0)),
    ("poisson", tuple(np.linspace(0.0, 7.0, 8))),
    ("poisson", (2.0, 2.0, 2.0, 8.0, 0.0, 1.0)),
]


@crit(9, "orthogonality identity within 4 combined SE, 10 instances x 1e5 samples (< 2 min)")
def test_c09_orthogonality(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    fails = []
    for i, (model, theta) in enumerate(ORTHO_CASES):
        r = orthogonality_check(CompoundInstance(model, theta), 100_000, seed=900 + i)
        z = abs(r.lhs - r.rhs) / r.combined_se
        worst = max(worst, z)
        if not r.passed:
            fails.append((model, theta, r))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |lhs-rhs|/SE {worst:.2f}, {elapsed:.1f} s")
    assert not fails
    assert elapsed < 120.0


# 10 --------------------------------------------------------------------------


@crit(10, "interpolation identities, residuals < 1e-7 on 1000 realisations per model")
def test_c10_interpolation(record_property):
    rng = np.random.default_rng(10)
    worst = {"gaussian": 0.0, "poisson": 0.0}
    for model in worst:
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            if model == "gaussian":
                theta = rng.normal(0.0, 1.5, n)
            else:
                theta = rng.uniform(0.0, 6.0, n)
            inst = CompoundInstance(model, theta)
            x = inst.draw(rng, rng.permutation(inst.arr))
            r = interp_identity_check(inst, x)
            worst[model] = max(worst[model], r.residual_direct, r.residual_route)
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-7


# 11 --------------------------------------------------------------------------


def _transport_cases(rng):
    for h in (0.5, 2.0, 8.0):
        for i in range(67 if h != 8.0 else 66):
            k = int(rng.integers(1, 5))
            atoms = rng.uniform(0.0, h, k)
            weights = rng.dirichlet(np.ones(k))
            if i % 2 == 0:
                # another Poisson mixture on [0, h]
                top = int(h + 12 * math.sqrt(h + 1) + 40)
                j = np.arange(top + 1)
                alt = rng.uniform(0.0, h, 3)
                pmf = np.exp(j[None, :] * np.log(np.maximum(alt, 1e-300))[:, None] - alt[:, None]
                             - np.array([math.lgamma(v + 1) for v in j])[None, :])
                mu = rng.dirichlet(np.ones(3)) @ pmf
            else:
                support = int(math.floor(h)) + 1
                mu = rng.dirichlet(np.ones(support))
            yield h, (atoms, weights), mu / mu.sum()


def _tilt_cases(rng, h=4.0):
    """Z | X_1 posteriors from simulated half-noise draws with theta in [-h/2, h/2]."""
    for _ in range(100):
        n = int(rng.integers(1, 8))
        theta = rng.uniform(-h / 2, h / 2, n)
        x1 = float(rng.choice(theta) + rng.standard_normal())
        lw = -0.5 * (x1 - theta) ** 2
        w = np.exp(lw - lw.max())
        yield w / w.sum(), 0.5 * (theta + x1), h


@crit(11, "200 transportation and 100 tilt-variance cases all pass")
def test_c11_transport_and_tilt(record_property):
    rng = np.random.default_rng(11)
    trans = [transportation_check(h, mix, mu) for h, mix, mu in _transport_cases(rng)]
    tilts = [tilt_variance_check(w, m, 0.5, h, np.linspace(-10, 10, 201)) for w, m, h in _tilt_cases(rng)]
    assert len(trans) == 200 and len(tilts) == 100
    t_slack = min(r.rhs - r.lhs for r in trans)
    v_slack = min(r.bound - r.max_var for r in tilts)
    record_property("detail", f"transport slack {t_slack:.2e}, tilt slack {v_slack:.2e}")
    assert all(r.passed for r in trans)
    assert all(r.passed for r in tilts)


# 12 --------------------------------------------------------------------------


@crit(12, "capacity bracket on the discrete simplex (m=4, eps=0.1, 20 members)")
def test_c12_capacity_bracket(record_property):
    fam = DiscreteSimplexFamily(4, 0.1)
    grid = fam.grid(20, seed=12)
    lower = capacity_lower(grid).value
    upper = capacity_upper_ratio(fam)
    trace = trace_capacity_lb(build_overlap(grid))
    record_property("detail", f"trace {trace:.6f} <= lower {lower:.6f} <= upper {upper:g}")
    assert upper == pytest.approx(3.0, abs=1e-15)
    assert lower <= upper
    assert lower >= trace


# 13 --------------------------------------------------------------------------

DETERMINISM_RUNS = [
    ("verify", []),
    ("sweep-gaussian", ["--grid", "0:6:13", "--ns", "8,100,10000"]),
    ("sweep-poisson", ["--grid", "0:8:9", "--ns", "8,100"]),
    ("replication", ["--lambda2", "0.6", "--grid", "1:60:60"]),
    ("compound-gap", ["--theta", "0,1,2", "--grid", "0.5,1,2", "--samples", "6000"]),
]


def _run_cli(args, out):
    cmd = [sys.executable, "-m", "permmix.cli", *args, "--seed", "13", "--out", str(out)]
    res = subprocess.run(cmd, capture_output=True, env={**os.environ, "PYTHONHASHSEED": "0"})
    assert res.returncode == 0, res.stderr.decode()
    return out.read_bytes(), res.stdout


@crit(13, "verify and every sweep are byte-identical across runs and thread counts")
@pytest.mark.parametrize("command,extra", DETERMINISM_RUNS, ids=[c for c, _ in DETERMINISM_RUNS])
def test_c13_determinism(command, extra, tmp_path, record_property):
    a, sa = _run_cli([command, *extra, "--threads", "1"], tmp_path / "a")
    b, sb = _run_cli([command, *extra, "--threads", "1"], tmp_path / "b")
    c, sc = _run_cli([command, *extra, "--threads", "8"], tmp_path / "c")
    record_property("detail", f"{command}: {len(a)} bytes")
    assert a == b == c
    assert sa == sb == sc
    assert b"\r" not in a


# 14 --------------------------------------------------------------------------


@crit(14, "sweep-gaussian curves nondecreasing in mu and n (regime constants reported)")
def test_c14_phase_diagram(tmp_path, record_property):
    from permmix.cli import main

    out = tmp_path / "sweep.csv"
    assert main(["sweep-gaussian", "--grid", "0:6:61", "--ns", "100,10000,1000000", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = lines[2].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[3:]]
    ns = (100, 10000, 1000000)
    mus = sorted({float(r["sep"]) for r in rows})
    assert len(mus) == 61 and mus[0] == 0.0 and mus[-1] == 6.0
    val = {(float(r["sep"]), int(r["n"])): float(r["log1p_chi2"]) for r in rows}
    best = {(float(r["sep"]), int(r["n"])): float(r["log1p_chi2_max_m_le_n"]) for r in rows}
    for n in ns:
        for col in (val, best):
            curve = [col[mu, n] for mu in mus]
            assert all(b >= a for a, b in zip(curve, curve[1:])), n
    for mu in mus:
        curve = [best[mu, n] for n in ns]
        assert all(b >= a for a, b in zip(curve, curve[1:])), mu
    ratios = {}
    for r in rows:
        if r["regime_ratio"]:
            ratios.setdefault((int(r["n"]), r["regime"]), []).append(float(r["regime_ratio"]))
    summary = "; ".join(f"n={n} regime {g}: {min(v):.3f}..{max(v):.3f}" for (n, g), v in sorted(ratios.items()))
    record_property("detail", "ratios " + summary)
    print("regime ratios:", summary)
