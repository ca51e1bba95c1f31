import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinlab.spectrum import (
    ClassicalTest,
    FiniteDistribution,
    SupportError,
    classical_errors,
    finite_n_spectrum_bounds,
    golden_section_max,
    iid_log_ratio_spectrum,
    kkt_candidates,
    kl_divergence,
    max_plog2,
    max_plog2_oracle,
    np_dominance_check,
    product_distribution,
    s_test,
    s_test_indicator,
)

from .strategies import generators

P = FiniteDistribution.from_probs([0.7, 0.3])
Q = FiniteDistribution.from_probs([0.3, 0.7])
L73 = math.log(7 / 3)


def random_pair(gen, k=None):
    k = k or int(gen.integers(2, 6))
    floor = 1e-3
    p = gen.dirichlet(np.ones(k)) * (1 - k * floor) + floor
    q = gen.dirichlet(np.ones(k)) * (1 - k * floor) + floor
    return FiniteDistribution.from_probs(p), FiniteDistribution.from_probs(q)


def enumerate_spectrum(p, q, n):
    """Exact law of (1/n) log(p_n/q_n) under p_n by walking the product alphabet."""
    out = {}
    for word in itertools.product(range(len(p)), repeat=n):
        lp = sum(math.log(p.probs[i]) for i in word)
        lq = sum(math.log(q.probs[i]) for i in word)
        key = round((lp - lq) / n, 9)
        out[key] = out.get(key, 0.0) + math.exp(lp)
    return out


class TestDistributions:
    def test_normalization_and_rejection(self):
        assert FiniteDistribution.from_probs([0.5, 0.5 + 1e-12]).probs.sum() == pytest.approx(1, abs=1e-15)
        with pytest.raises(ValueError):
            FiniteDistribution.from_probs([0.5, 0.4])
        with pytest.raises(ValueError):
            FiniteDistribution.from_probs([1.1, -0.1])

    def test_product(self):
        p2 = product_distribution(P, 2)
        assert p2.prob((0, 1)) == pytest.approx(0.21)
        assert len(p2) == 4

    def test_kl(self):
        assert kl_divergence(P, Q) == pytest.approx(0.4 * L73)
        assert kl_divergence(FiniteDistribution.from_probs([0.5, 0.5]), FiniteDistribution.from_probs([1, 0])) == math.inf


class TestClassicalErrors:
    def test_constant_tests(self):
        one = classical_errors(ClassicalTest.constant(P.labels, 1.0), P, Q)
        zero = classical_errors(ClassicalTest.constant(P.labels, 0.0), P, Q)
        assert (one.alpha, one.beta) == (0.0, 1.0)
        assert (zero.alpha, zero.beta) == (1.0, 0.0)

    @given(gen=generators())
    def test_identical_sum_to_one(self, gen):
        p, _ = random_pair(gen)
        test = ClassicalTest(dict(zip(p.labels, gen.uniform(0, 1, len(p)))))
        err = classical_errors(test, p, p)
        assert err.alpha + err.beta == pytest.approx(1, abs=1e-12)

    def test_label_mismatch(self):
        other = FiniteDistribution(("a", "b"), [0.5, 0.5])
        with pytest.raises(ValueError):
            classical_errors(ClassicalTest.constant(P.labels, 1.0), P, other)

    def test_invalid_acceptance(self):
        with pytest.raises(ValueError):
            ClassicalTest({0: 1.5})


class TestSpectrum:
    def test_identical_point_mass(self):
        cdf = iid_log_ratio_spectrum(P, P, 5)
        assert cdf.support_points == [(0.0, pytest.approx(1.0))]

    def test_binomial_two_copies(self):
        cdf = iid_log_ratio_spectrum(P, Q, 2)
        assert cdf.values == pytest.approx([-L73, 0.0, L73], abs=1e-12)
        assert cdf.p_mass == pytest.approx([0.09, 0.42, 0.49])
        assert cdf.q_mass == pytest.approx([0.49, 0.42, 0.09])

    @given(gen=generators(), n=st.integers(1, 5))
    def test_matches_enumeration(self, gen, n):
        p, q = random_pair(gen, 3)
        cdf = iid_log_ratio_spectrum(p, q, n)
        brute = enumerate_spectrum(p, q, n)
        for lam, mass in brute.items():
            idx = np.argmin(np.abs(cdf.values - lam))
            assert abs(cdf.values[idx] - lam) < 1e-8
        assert sorted(brute.values()) == pytest.approx(sorted(
            sum(m for v, m in zip(cdf.values, cdf.p_mass) if abs(v - lam) < 1e-8) for lam in brute))

    @given(gen=generators(), n=st.integers(1, 40))
    def test_mass_and_mean(self, gen, n):
        p, q = random_pair(gen)
        cdf = iid_log_ratio_spectrum(p, q, n)
        assert cdf.p_mass.sum() == pytest.approx(1, abs=1e-12)
        assert cdf.q_mass.sum() == pytest.approx(1, abs=1e-12)
        assert np.all(np.diff(cdf.values) > 0)
        assert abs(cdf.mean() - kl_divergence(p, q)) <= 1e-10

    def test_support_violation(self):
        with pytest.raises(SupportError):
            iid_log_ratio_spectrum(P, FiniteDistribution.from_probs([1.0, 0.0]), 2)

    def test_monte_carlo_fallback(self):
        p = FiniteDistribution.from_probs([0.2, 0.3, 0.5])
        q = FiniteDistribution.from_probs([0.31, 0.17, 0.52])
        cdf = iid_log_ratio_spectrum(p, q, 30, max_support=50, samples=200_000, seed=3)
        assert not cdf.exact
        assert cdf.mean() == pytest.approx(kl_divergence(p, q), abs=5e-3)
        again = iid_log_ratio_spectrum(p, q, 30, max_support=50, samples=200_000, seed=3)
        assert np.array_equal(cdf.values, again.values)


class TestSTest:
    def test_below_support(self):
        res = s_test(P, Q, 3, -10.0)
        assert (res.alpha, res.beta) == pytest.approx((0.0, 1.0))

    def test_above_support(self):
        res = s_test(P, Q, 3, 10.0)
        assert (res.alpha, res.beta) == pytest.approx((1.0, 0.0))

    def test_two_copies(self):
        res = s_test(P, Q, 2, 0.1)
        assert (res.alpha, res.beta) == pytest.approx((0.51, 0.09))
        assert res.beta <= math.exp(-0.2)

    def test_indicator_agrees(self):
        test, pn, qn = s_test_indicator(P, Q, 2, 0.1)
        err = classical_errors(test, pn, qn)
        assert (err.alpha, err.beta) == pytest.approx((0.51, 0.09))

    @given(gen=generators(), n=st.integers(1, 30), lam=st.floats(-3, 3))
    def test_bound_exact(self, gen, n, lam):
        p, q = random_pair(gen)
        res = s_test(p, q, n, lam)
        assert res.beta <= res.beta_bound
        assert res.beta <= res.beta_bound * res.accept_p_mass * (1 + 1e-12)


class TestDominance:
    def test_self(self):
        test, _, _ = s_test_indicator(P, Q, 3, 0.1)
        assert np_dominance_check(P, Q, 3, 0.1, test)

    def test_random_challengers(self, rng):
        p, q = random_pair(rng, 3)
        labels = product_distribution(p, 3).labels
        for _ in range(1000):
            challenger = ClassicalTest(dict(zip(labels, rng.uniform(0, 1, len(labels)))))
            assert np_dominance_check(p, q, 3, 0.1, challenger)

    def test_accept_all_strict(self):
        own = s_test(P, Q, 3, 0.1)
        assert own.beta < 1
        weight = math.exp(0.3)
        accept_all = 0.0 + weight * 1.0
        assert own.alpha + weight * own.beta < accept_all


class TestFiniteBounds:
    def test_identical(self):
        assert finite_n_spectrum_bounds(P, P, 8, 0.05) == (0.0, 0.0)

    def test_shrinks(self):
        lo16, hi16 = finite_n_spectrum_bounds(P, Q, 16, 0.05)
        lo64, hi64 = finite_n_spectrum_bounds(P, Q, 64, 0.05)
        assert lo16 < lo64 and hi64 < hi16

    def test_contains_divergence(self):
        lo, hi = finite_n_spectrum_bounds(P, Q, 64, 0.05)
        assert lo <= kl_divergence(P, Q) <= hi

    def test_definition(self):
        cdf = iid_log_ratio_spectrum(P, Q, 10)
        lo, hi = finite_n_spectrum_bounds(P, Q, 10, 0.1, spectrum=cdf)
        assert cdf.p_mass_below(lo) <= 0.1
        assert cdf.p_mass_below(np.nextafter(cdf.values[cdf.values > lo][0], np.inf)) > 0.1
        assert cdf.p_mass_above(hi) <= 0.1

    def test_eta_range(self):
        with pytest.raises(ValueError):
            finite_n_spectrum_bounds(P, Q, 4, 1.0)


class TestPlog2:
    def test_closed_form_two(self):
        x = (1 - math.sqrt(1 - 4 / math.e**2)) / 2
        val = x * math.log(x) ** 2 + (1 - x) * math.log(1 - x) ** 2
        assert max_plog2(2) == pytest.approx(val, abs=1e-15)
        assert max_plog2(2) == pytest.approx(0.56288, abs=5e-6)

    def test_grid_two(self):
        x = np.linspace(0, 1, 10**6 + 1)[1:-1]
        grid = np.max(x * np.log(x) ** 2 + (1 - x) * np.log(1 - x) ** 2)
        assert abs(grid - max_plog2(2)) <= 1e-6

    @pytest.mark.parametrize("k", [3, 4, 5, 6])
    def test_log_squared(self, k):
        assert max_plog2(k) == math.log(k) ** 2

    @pytest.mark.parametrize("k", range(2, 7))
    def test_oracle(self, k):
        assert abs(max_plog2(k) - max_plog2_oracle(k)) <= 1e-6

    def test_discriminant_filter(self):
        assert not [c for c in kkt_candidates(4) if c.support == 4 and 1 <= c.upper_count <= 3]

    @given(gen=generators(), k=st.integers(2, 6))
    def test_random_points_below_max(self, gen, k):
        p = gen.dirichlet(np.ones(k) * gen.uniform(0.1, 3))
        p = p[p > 0]
        assert np.sum(p * np.log(p) ** 2) <= max_plog2(k) + 1e-12

    def test_small_k(self):
        with pytest.raises(ValueError):
            max_plog2(1)
        with pytest.raises(ValueError):
            max_plog2_oracle(1)


class TestGoldenSection:
    def test_interior(self):
        t, v = golden_section_max(lambda x: -(x - 0.3) ** 2, 0, 1, 1e-10)
        assert t == pytest.approx(0.3, abs=1e-8)

    def test_endpoint(self):
        t, v = golden_section_max(lambda x: x, 0, 1)
        assert t == 1 and v == 1
