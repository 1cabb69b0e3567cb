import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from permmix.errors import CapacityError, NumericalError, ValidationError
from permmix.families import Discrete, GaussianLoc, Poisson
from permmix.overlap import build_overlap
from permmix.permanent import (
    LogValue,
    chi2_exact,
    chi2_from_overlap,
    has_perfect_matching,
    log1p_chi2_from_overlap,
    matchable_entries,
    mixing_scalar,
    permanent_exact,
    replicated_chi2,
    replication_trajectory,
    two_component_chi2,
    two_component_log1p_chi2,
    weighted_column_permanent,
)


def exact_perm(m):
    """Permanent in rational arithmetic from the float entries."""
    n = len(m)
    q = [[Fraction(float(v)) for v in row] for row in m]
    total = Fraction(0)
    for p in itertools.permutations(range(n)):
        t = Fraction(1)
        for j in range(n):
            t *= q[p[j]][j]
        total += t
    return total


def test_small_examples():
    assert permanent_exact(np.eye(4)).value == pytest.approx(1.0, rel=1e-15)
    assert permanent_exact(np.ones((3, 3))).value == pytest.approx(6.0, rel=1e-15)
    z = permanent_exact(np.array([[1.0, 2.0], [0.0, 0.0]]))
    assert z.zero_flag and z.value == 0.0


def test_ryser_matches_naive_random_6x6():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = rng.uniform(0, 1, (6, 6))
        r = permanent_exact(m).value
        nv = permanent_exact(m, engine="naive").value
        assert r == pytest.approx(nv, rel=1e-12)


def test_matches_rational_oracle():
    rng = np.random.default_rng(4)
    for n in range(1, 8):
        m = rng.uniform(0, 3, (n, n)) * (rng.random((n, n)) < 0.8)
        want = exact_perm(m)
        got = permanent_exact(m)
        if want == 0:
            assert got.zero_flag
        else:
            assert got.value == pytest.approx(float(want), rel=1e-14)


def test_known_families_of_permanents():
    for n in (5, 10, 14, 18):
        assert permanent_exact(np.ones((n, n))).log_magnitude == pytest.approx(math.lgamma(n + 1), rel=1e-14)
    # Perm(J - I) counts derangements
    for n in (4, 9, 13):
        d = round(math.factorial(n) * sum((-1) ** k / math.factorial(k) for k in range(n + 1)))
        assert permanent_exact(np.ones((n, n)) - np.eye(n)).value == pytest.approx(d, rel=1e-13)


def test_extreme_scales_stay_finite():
    m = np.full((8, 8), 1e-200)
    lv = permanent_exact(m)
    assert lv.log_magnitude == pytest.approx(math.lgamma(9) + 8 * math.log(1e-200), rel=1e-14)
    assert lv.value == 0.0 or lv.value < 1e-300


def test_validation_and_capacity():
    with pytest.raises(ValidationError):
        permanent_exact(np.ones((2, 3)))
    with pytest.raises(ValidationError):
        permanent_exact(-np.ones((2, 2)))
    with pytest.raises(ValidationError):
        permanent_exact(np.ones((2, 2)), engine="glynn")
    with pytest.raises(CapacityError):
        permanent_exact(np.ones((10, 10)), engine="naive")
    with pytest.raises(CapacityError):
        permanent_exact(np.ones((31, 31)))


def test_weighted_column_examples():
    a, b, c, d = 0.3, 0.7, 1.1, 0.2
    m = np.array([[a, b], [c, d]])
    w = (2.0, -0.5)
    got = weighted_column_permanent(m, 0, w)
    want = 2.0 * a * d + (-0.5) * c * b
    assert got.value == pytest.approx(want, rel=1e-14)
    assert weighted_column_permanent(m, 1, np.ones(2)).value == pytest.approx(permanent_exact(m).value, rel=1e-15)


def test_weighted_column_matches_substitution():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.uniform(0, 1, (6, 6))
        w = rng.uniform(0, 2, 6)
        col = int(rng.integers(6))
        sub = m.copy()
        sub[:, col] *= w
        assert weighted_column_permanent(m, col, w).value == pytest.approx(permanent_exact(sub).value, rel=1e-12)


def test_weighted_column_signed_matches_rational():
    rng = np.random.default_rng(6)
    for _ in range(10):
        m = rng.uniform(0, 1, (5, 5))
        w = rng.normal(0, 1, 5)
        q = [[Fraction(float(v)) for v in row] for row in m]
        want = Fraction(0)
        for p in itertools.permutations(range(5)):
            t = Fraction(float(w[p[2]]))
            for j in range(5):
                t *= q[p[j]][j]
            want += t
        got = weighted_column_permanent(m, 2, w)
        assert got.value == pytest.approx(float(want), rel=1e-12, abs=1e-15)


@st.composite
def nonneg_matrices(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    return draw(arrays(np.float64, (n, n), elements=st.floats(0, 10, allow_nan=False, allow_subnormal=False)))


@settings(max_examples=80)
@given(nonneg_matrices(), st.randoms(use_true_random=False))
def test_permutation_and_transpose_invariance(m, rnd):
    n = m.shape[0]
    p = list(range(n))
    q = list(range(n))
    rnd.shuffle(p)
    rnd.shuffle(q)
    base = permanent_exact(m)
    for other in (m[np.ix_(p, q)], m.T):
        o = permanent_exact(other)
        assert o.zero_flag == base.zero_flag
        if not base.zero_flag:
            assert o.log_magnitude == pytest.approx(base.log_magnitude, rel=1e-12, abs=1e-12)


@settings(max_examples=80)
@given(nonneg_matrices(), st.floats(0.01, 100))
def test_row_scaling_is_multiplicative(m, c):
    base = permanent_exact(m)
    s = m.copy()
    s[0] *= c
    o = permanent_exact(s)
    if base.zero_flag:
        assert o.zero_flag
    else:
        assert o.log_magnitude == pytest.approx(base.log_magnitude + math.log(c), rel=1e-12, abs=1e-12)


@settings(max_examples=60)
@given(nonneg_matrices(max_n=6))
def test_matches_rational_property(m):
    want = exact_perm(m)
    got = permanent_exact(m)
    assert got.zero_flag == (want == 0)
    if want:
        assert got.value == pytest.approx(float(want), rel=1e-12)


@settings(max_examples=80)
@given(st.integers(1, 6).flatmap(lambda n: arrays(np.bool_, (n, n))))
def test_matchable_entries_against_enumeration(mask):
    n = mask.shape[0]
    want = np.zeros_like(mask)
    for p in itertools.permutations(range(n)):
        if all(mask[p[j], j] for j in range(n)):
            for j in range(n):
                want[p[j], j] = True
    assert np.array_equal(matchable_entries(mask), want)
    assert has_perfect_matching(mask) == bool(want.any())


# chi^2 ------------------------------------------------------------------------


def test_chi2_examples():
    assert chi2_exact([GaussianLoc(1.0)] * 5) == 0.0
    a = build_overlap([Poisson(0.5), Poisson(3.0)]).entries
    assert chi2_from_overlap(a) == pytest.approx((2 * a[0, 0] - 1) ** 2, rel=1e-12)
    f = mixing_scalar("gaussian", 1.0)
    assert chi2_exact([GaussianLoc(-1.0), GaussianLoc(1.0)]) == pytest.approx(f * f, rel=1e-10)


def test_chi2_matches_brute_force_permutation_mixture():
    """chi^2 by summing the mixture density over all outcomes of a discrete family."""
    pmfs = [(0.5, 0.3, 0.2), (0.1, 0.1, 0.8), (0.3, 0.4, 0.3)]
    members = [Discrete(p) for p in pmfs]
    n = 3
    p = np.array(pmfs)
    q1 = p.mean(axis=0)
    total = 0.0
    for x in itertools.product(range(3), repeat=n):
        mix = np.mean([np.prod([p[s[j], x[j]] for j in range(n)]) for s in itertools.permutations(range(n))])
        prod = np.prod([q1[v] for v in x])
        total += mix * mix / prod
    assert chi2_exact(members) == pytest.approx(total - 1.0, rel=1e-12)


def test_chi2_rejects_large_n():
    with pytest.raises(CapacityError):
        chi2_exact([GaussianLoc(float(i)) for i in range(31)])


def test_two_component_examples():
    assert two_component_chi2(3, 0.0) == 0.0
    assert two_component_chi2(1, 0.4) == pytest.approx(0.16, rel=1e-14)
    members = [GaussianLoc(-0.7)] * 4 + [GaussianLoc(0.7)] * 4
    f = mixing_scalar("gaussian", 0.7)
    assert two_component_chi2(4, f) == pytest.approx(chi2_exact(members), rel=1e-9)
    with pytest.raises(ValidationError):
        two_component_chi2(2, 1.0)


def test_two_component_against_rational_sum():
    f = Fraction(1, 2)
    for m in (1, 3, 7, 20):
        want = sum(Fraction(math.comb(m, l) ** 2, math.comb(2 * m, 2 * l)) * f ** (2 * l) for l in range(1, m + 1))
        assert two_component_chi2(m, 0.5) == pytest.approx(float(want), rel=1e-13)
        assert two_component_log1p_chi2(m, 0.5) == pytest.approx(math.log1p(float(want)), rel=1e-13)


def test_two_component_half_size_for_half_f():
    """m=4, f=0.5 against the permanent of the 8-member two-point instance built from A directly."""
    f = 0.5
    a2 = np.array([[1 + f, 1 - f], [1 - f, 1 + f]]) / 2
    big = np.kron(a2, np.ones((4, 4)) / 4)
    assert chi2_from_overlap(big) == pytest.approx(two_component_chi2(4, f), rel=1e-9)


def test_mixing_scalar_examples():
    assert mixing_scalar("gaussian", 0.0) == 0.0
    assert mixing_scalar("poisson", math.log(3)) == pytest.approx(0.5, rel=1e-15)
    for mu in (0.2, 1.0, 3.0):
        a = build_overlap([GaussianLoc(-mu), GaussianLoc(mu)]).entries
        assert mixing_scalar("gaussian", mu) == pytest.approx(2 * a[0, 0] - 1, abs=1e-9)
    with pytest.raises(ValidationError):
        mixing_scalar("cauchy", 1.0)
    with pytest.raises(ValidationError):
        mixing_scalar("gaussian", -1.0)


def test_mixing_scalar_poisson_matches_overlap():
    for big_m in (0.3, 2.0, 7.0):
        a = build_overlap([Poisson(0.0), Poisson(big_m)]).entries
        assert mixing_scalar("poisson", big_m) == pytest.approx(2 * a[0, 0] - 1, abs=1e-12)


@given(st.floats(0, 8), st.floats(0, 8))
def test_mixing_scalar_monotone(a, b):
    lo, hi = sorted((a, b))
    assert mixing_scalar("gaussian", lo) <= mixing_scalar("gaussian", hi)


# replication --------------------------------------------------------------------


def test_replication_m1_equals_chi2():
    a = build_overlap([GaussianLoc(0.0), GaussianLoc(0.9), GaussianLoc(2.0)]).entries
    assert replicated_chi2(a, 1) == pytest.approx(chi2_from_overlap(a), rel=1e-12)
    a2 = a[:2, :2] / a[:2, :2].sum(axis=1, keepdims=True)
    a2 = 0.5 * (a2 + a2.T)
    assert replicated_chi2(a2, 1) == pytest.approx(chi2_from_overlap(a2), rel=1e-12)


@pytest.mark.parametrize("m", [2, 3])
def test_replication_matches_kronecker_permanent(m):
    for a in (np.array([[0.8, 0.2], [0.2, 0.8]]),
              build_overlap([Poisson(0.0), Poisson(1.0), Poisson(2.5)]).entries):
        big = np.kron(a, np.ones((m, m)) / m)
        assert replicated_chi2(a, m) == pytest.approx(chi2_from_overlap(big), rel=1e-12)


def test_replication_converges_to_spectral_target():
    a = np.array([[0.8, 0.2], [0.2, 0.8]])
    tr = replication_trajectory(a, [1, 10, 100, 1000, 10000])
    assert tr.target == pytest.approx(0.25, rel=1e-14)
    errs = [abs(v - tr.target) for v in tr.values]
    assert errs[-1] < 1e-4
    assert all(b < a for a, b in zip(errs[1:], errs[2:]))


def test_replication_validation():
    with pytest.raises(ValidationError):
        replicated_chi2(np.eye(4) / 1.0, 2)
    with pytest.raises(ValidationError):
        replicated_chi2(np.array([[0.5, 0.5], [0.5, 0.5]]), 0)
    with pytest.raises(CapacityError):
        replicated_chi2(np.full((3, 3), 1 / 3), 200)


def test_logvalue():
    assert LogValue.zero().value == 0.0
    assert LogValue(math.log(2.0), False, -1).value == pytest.approx(-2.0)
    assert LogValue(1e6).value == math.inf
    assert float(LogValue(0.0)) == 1.0


def test_negative_chi2_beyond_roundoff_raises():
    # a non-overlap matrix with Perm < n!/n^n would give chi^2 < 0
    with pytest.raises(NumericalError):
        chi2_from_overlap(np.array([[0.1, 0.4], [0.4, 0.1]]))


@settings(max_examples=40)
@given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_glynn_and_ryser_paths_agree(n, seed):
    m = np.random.default_rng(seed).uniform(0, 1, (n, n))
    plain = permanent_exact(m)
    weighted = weighted_column_permanent(m, 0, np.ones(n))
    assert weighted.log_magnitude == pytest.approx(plain.log_magnitude, rel=1e-14, abs=1e-14)


@pytest.mark.slow
def test_largest_size_is_feasible():
    n = 30
    lv = permanent_exact(np.ones((n, n)) - np.eye(n))
    d = sum(Fraction((-1) ** k, math.factorial(k)) for k in range(n + 1)) * math.factorial(n)
    assert lv.log_magnitude == pytest.approx(math.log(d), rel=1e-15)


def test_column_scaling_invariant():
    from permmix.permanent import ColumnScaling

    m = np.random.default_rng(7).uniform(0, 5, (6, 6))
    cs = ColumnScaling.of(m)
    assert cs.log_correction == pytest.approx(math.fsum(math.log(v) for v in cs.scale_factors))
    lhs = permanent_exact(m).log_magnitude
    assert lhs == pytest.approx(cs.log_correction + permanent_exact(cs.apply(m)).log_magnitude, rel=1e-14)
