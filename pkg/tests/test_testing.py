import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinlab import ensembles as ens
from steinlab.opcore import (
    DensityMatrix,
    DimensionBudgetError,
    HypothesisError,
    TestOperator,
    relative_entropy,
    tensor_power,
)
from steinlab.testing import (
    ErrorPair,
    beta_star,
    chernoff_sup,
    classical_np_beta,
    cumulant_bound_audit,
    error_probabilities,
    log_trace_power,
    np_curve,
    np_test,
    spectrum_convergence_audit,
    stein_rate_curve,
    variance_bound,
)

from .strategies import generators

P7 = DensityMatrix.diagonal([0.7, 0.3])
P3 = DensityMatrix.diagonal([0.3, 0.7])
HALF = DensityMatrix.maximally_mixed(2)


def random_test(gen, dim):
    u = ens.random_unitary(gen, dim)
    return TestOperator((u * gen.uniform(0, 1, dim)) @ u.conj().T)


def brute_force_randomized_np(p, q, eps):
    """Best beta over deterministic accept sets mixed pairwise to hit alpha = eps exactly."""
    k = len(p)
    pts = []
    for mask in range(1 << k):
        acc = np.array([(mask >> i) & 1 for i in range(k)], dtype=float)
        pts.append((1 - acc @ p, acc @ q))
    best = 1.0
    for a1, b1 in pts:
        for a2, b2 in pts:
            if a1 <= eps <= a2 and a2 > a1:
                g = (a2 - eps) / (a2 - a1)
                best = min(best, g * b1 + (1 - g) * b2)
            elif abs(a1 - eps) < 1e-15:
                best = min(best, b1)
    return best


class TestErrorProbabilities:
    def test_accept_all(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_density(rng, 2)
        assert error_probabilities(np.eye(2), rho, sigma) == ErrorPair(0.0, 1.0)

    def test_reject_all(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_density(rng, 2)
        assert error_probabilities(np.zeros((2, 2)), rho, sigma) == ErrorPair(1.0, 0.0)

    @given(gen=generators())
    def test_identical_states_sum_to_one(self, gen):
        rho = ens.random_density(gen, 3)
        err = error_probabilities(random_test(gen, 3), rho, rho)
        assert err.alpha + err.beta == pytest.approx(1, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            error_probabilities(np.eye(2), HALF, DensityMatrix.maximally_mixed(3))

    def test_clamping(self):
        assert ErrorPair(-1e-12, 1 + 1e-12) == ErrorPair(0.0, 1.0)
        with pytest.raises(ValueError):
            ErrorPair(-0.1, 0.5)


class TestNpTest:
    def test_zero_threshold_accepts_support(self, rng):
        rho, sigma = ens.random_density(rng, 3, rank=2), ens.random_full_rank_density(rng, 3)
        assert error_probabilities(np_test(rho, sigma, 0.0, 1.0), rho, sigma).alpha == pytest.approx(0, abs=1e-12)

    def test_classical_threshold(self):
        err = error_probabilities(np_test(P7, P3, 1.0), P7, P3)
        assert (err.alpha, err.beta) == pytest.approx((0.3, 0.3))

    @pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
    def test_beats_random_tests(self, rng, t):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        best = error_probabilities(np_test(rho, sigma, t), rho, sigma)
        own = best.alpha + t * best.beta
        for _ in range(1000):
            err = error_probabilities(random_test(rng, 2), rho, sigma)
            assert own <= err.alpha + t * err.beta + 1e-12

    def test_boundary_weight_does_not_change_objective(self):
        rho = tensor_power(P7, 2)
        sigma = tensor_power(P3, 2)
        vals = [error_probabilities(np_test(rho, sigma, 1.0, w), rho, sigma) for w in (0, 0.5, 1)]
        objective = [e.alpha + e.beta for e in vals]
        assert max(objective) - min(objective) <= 1e-12
        assert vals[0].alpha > vals[2].alpha

    @given(gen=generators(), n=st.integers(1, 4))
    def test_curve_monotone(self, gen, n):
        rho = tensor_power(ens.random_density(gen, 2), n)
        sigma = tensor_power(ens.random_full_rank_density(gen, 2), n)
        pts = np_curve(rho, sigma, np.geomspace(0.01, 100, 30))
        for a, b in zip(pts, pts[1:]):
            assert b.errors.beta <= a.errors.beta + 1e-10
            assert b.errors.alpha >= a.errors.alpha - 1e-10

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            np_test(P7, P3, -1.0)
        with pytest.raises(ValueError):
            np_test(P7, P3, 1.0, 1.5)


class TestBetaStar:
    @pytest.mark.parametrize("eps", [0.1, 0.3, 0.77])
    def test_identical_states(self, rng, eps):
        rho = ens.random_full_rank_density(rng, 2)
        for n in (1, 2, 3):
            assert beta_star(rho, rho, n, eps).beta == pytest.approx(1 - eps, abs=1e-10)

    def test_commuting_single_copy(self):
        res = beta_star(P7, P3, 1, 0.3)
        assert res.beta == pytest.approx(0.3, abs=1e-10)
        assert res.alpha == pytest.approx(0.3, abs=1e-10)

    def test_brute_force_oracle(self):
        # single copy, randomized tests over 2 outcomes
        assert brute_force_randomized_np(np.array([0.7, 0.3]), np.array([0.3, 0.7]), 0.3) == pytest.approx(0.3)
        assert classical_np_beta([0.7, 0.3], [0.3, 0.7], 0.3) == pytest.approx(0.3)

    @given(gen=generators(), eps=st.floats(0.05, 0.6))
    def test_classical_sort_matches_brute_force(self, gen, eps):
        p = gen.dirichlet(np.ones(4))
        q = gen.dirichlet(np.ones(4))
        assert classical_np_beta(p, q, eps) == pytest.approx(brute_force_randomized_np(p, q, eps), abs=1e-12)

    @pytest.mark.parametrize("n", range(1, 5))
    def test_commuting_matches_classical(self, rng, n):
        for _ in range(5):
            rho, sigma = ens.commuting_pair(rng, 2)
            basis = rho.eigh[1]
            p = np.real(np.diag(basis.conj().T @ rho.matrix @ basis))
            q = np.real(np.diag(basis.conj().T @ sigma.matrix @ basis))
            pn, qn = p, q
            for _ in range(n - 1):
                pn, qn = np.kron(pn, p), np.kron(qn, q)
            for eps in (0.1, 0.3):
                assert abs(beta_star(rho, sigma, n, eps).beta - classical_np_beta(pn, qn, eps)) <= 1e-10

    @pytest.mark.parametrize("n", range(1, 7))
    def test_certificate(self, rng, n):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        res = beta_star(rho, sigma, n, 0.2)
        assert res.certificate_gap <= 1e-8
        assert res.certificate_gap >= -1e-8
        assert abs(res.alpha - 0.2) <= 1e-9

    def test_monotone_in_epsilon(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        betas = [beta_star(rho, sigma, 3, e).beta for e in (0.05, 0.1, 0.2, 0.4)]
        assert betas == sorted(betas, reverse=True)

    def test_errors(self):
        with pytest.raises(HypothesisError):
            beta_star(P7, DensityMatrix.diagonal([1, 0]), 2, 0.1)
        with pytest.raises(DimensionBudgetError):
            beta_star(P7, P3, 13, 0.1)
        with pytest.raises(ValueError):
            beta_star(P7, P3, 1, 1.0)


class TestSteinRateCurve:
    def test_identical_states(self):
        for r in stein_rate_curve(P7, P7, 0.1, range(1, 6)):
            assert (r.alpha_n, r.beta_n) == pytest.approx((0.0, 1.0), abs=1e-12)

    def test_commuting_fixture_bound(self):
        d = 0.4 * math.log(7 / 3)
        records = stein_rate_curve(P7, P3, 0.1, range(1, 11))
        assert records[0].threshold == pytest.approx(d - 0.1, abs=1e-12)
        for r in records:
            assert r.beta_n <= math.exp(-r.n * (d - 0.1))
            assert r.beta_bound_ok

    def test_commuting_matches_classical_counting(self):
        # on diagonal states the test accepts strings with enough 0-outcomes
        d = 0.4 * math.log(7 / 3)
        for r in stein_rate_curve(P7, P3, 0.1, range(1, 9)):
            n = r.n
            zeros = [m for m in range(n + 1) if (2 * m - n) * math.log(7 / 3) / n >= d - 0.1]
            alpha = sum(math.comb(n, m) * 0.7**m * 0.3 ** (n - m) for m in range(n + 1) if m not in zeros)
            beta = sum(math.comb(n, m) * 0.3**m * 0.7 ** (n - m) for m in zeros)
            assert (r.alpha_n, r.beta_n) == pytest.approx((alpha, beta), abs=1e-12)

    def test_non_commuting_alpha_decreases(self):
        rho = DensityMatrix(np.array([[0.796100351473, 0.304876338632], [0.304876338632, 0.203899648527]]))
        sigma = DensityMatrix.diagonal([0.25, 0.75])
        records = stein_rate_curve(rho, sigma, 0.9 * relative_entropy(rho, sigma), range(1, 11))
        assert records[-1].alpha_n < records[1].alpha_n

    @given(gen=generators())
    def test_rate_meets_threshold(self, gen):
        rho, sigma = ens.random_density(gen, 2), ens.random_full_rank_density(gen, 2, 0.02)
        for r in stein_rate_curve(rho, sigma, 0.2, range(1, 7)):
            assert r.beta_n <= r.beta_bound
            assert r.rate >= r.threshold

    def test_dominated_by_optimum(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        for r in stein_rate_curve(rho, sigma, 0.2, range(1, 5)):
            if 0 < r.alpha_n < 1:
                assert beta_star(rho, sigma, r.n, r.alpha_n).beta <= r.beta_n + 1e-10

    def test_errors(self):
        with pytest.raises(ValueError):
            stein_rate_curve(P7, P3, 0.0, [1])
        with pytest.raises(HypothesisError):
            stein_rate_curve(P7, DensityMatrix.diagonal([1, 0]), 0.1, [1])
        with pytest.raises(DimensionBudgetError):
            stein_rate_curve(P7, P3, 0.1, [13])


class TestConvergenceAudit:
    def test_maximally_mixed(self):
        for row in spectrum_convergence_audit(HALF, HALF, range(1, 6), 0.1):
            assert row.deviation_prob == 0
            assert row.absdev_measured == pytest.approx(0, abs=1e-12)
            assert row.absdev_operator == pytest.approx(0, abs=1e-12)
            assert row.variance == pytest.approx(0, abs=1e-20)

    def test_abs_deviation_identity_four_copies(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        (row,) = spectrum_convergence_audit(rho, sigma, [4])
        assert abs(row.absdev_measured - row.absdev_operator) <= 1e-8

    def test_abs_deviation_identity_small_sigma_eigenvalue(self, rng):
        rho = ens.random_density(rng, 2)
        u = ens.random_unitary(rng, 2)
        sigma = DensityMatrix((u * [0.98, 0.02]) @ u.conj().T)
        for row in spectrum_convergence_audit(rho, sigma, range(6, 9)):
            assert abs(row.absdev_measured - row.absdev_operator) <= 1e-8

    def test_variance_bound(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        for row in spectrum_convergence_audit(rho, sigma, range(2, 9)):
            assert row.variance_ok
            assert row.variance_bound == pytest.approx(variance_bound(rho, row.n))

    def test_measured_rate_below_relative_entropy(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        d = relative_entropy(rho, sigma)
        for row in spectrum_convergence_audit(rho, sigma, range(1, 9)):
            assert row.measured_rate <= d + 1e-9
            assert row.measured_rate >= d - math.log(row.n + 1) / row.n - 1e-9


class TestCumulant:
    def test_very_negative_level(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        au = cumulant_bound_audit(rho, sigma, -10.0, 3)
        assert au.rhs == 0.0
        assert au.lhs >= 0
        assert au.tail_bound == pytest.approx(1.0)
        assert au.tail_prob == pytest.approx(1.0)

    @pytest.mark.parametrize("a", [0.2, math.log(2), 1.0, 2.0])
    def test_maximally_mixed_closed_form(self, a):
        assert log_trace_power(HALF, HALF, 0.7) == pytest.approx(0.7 * math.log(2))
        assert chernoff_sup(HALF, HALF, a)[0] == pytest.approx(max(a - math.log(2), 0.0), abs=1e-12)

    def test_positive_beyond_corrected_level(self, rng):
        for _ in range(5):
            rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
            c = -np.trace(rho.matrix @ sigma.apply(np.log)).real
            n = 6
            au = cumulant_bound_audit(rho, sigma, c + math.log(n + 1) / n + 0.2, n)
            assert au.rhs > 0
            assert au.bound_ok and au.markov_ok

    def test_vanishes_below_corrected_level(self, rng):
        # slope at t = 0 is a - offset + Tr rho log sigma, negative here
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        c = -np.trace(rho.matrix @ sigma.apply(np.log)).real
        assert cumulant_bound_audit(rho, sigma, c + 0.2, 6).rhs == 0.0

    @pytest.mark.parametrize("n", range(1, 9))
    def test_bound_and_markov(self, rng, n):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        c = -np.trace(rho.matrix @ sigma.apply(np.log)).real
        for a in (c - 0.3, c + 0.1, c + 0.5, c + 1.5):
            au = cumulant_bound_audit(rho, sigma, a, n)
            assert au.lhs >= au.rhs - 1e-6
            assert au.rhs_alt <= au.rhs
            assert au.tail_prob <= au.tail_bound + 1e-12


class TestChernoff:
    def test_nonnegative(self, rng):
        rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
        for a in np.linspace(-5, 5, 11):
            assert chernoff_sup(rho, sigma, a)[0] >= 0

    def test_linear_objective(self):
        value, t = chernoff_sup(HALF, HALF, 2 * math.log(2))
        assert value == pytest.approx(math.log(2), abs=1e-12)
        assert t == 1.0

    def test_concavity(self, rng):
        for _ in range(100):
            rho, sigma = ens.random_density(rng, 2), ens.random_full_rank_density(rng, 2)
            a = rng.normal()
            t0, t1 = rng.uniform(0, 1, 2)
            f = lambda t: a * t - log_trace_power(rho, sigma, t)
            assert f((t0 + t1) / 2) >= (f(t0) + f(t1)) / 2 - 1e-12

    def test_matches_grid(self, rng):
        rho, sigma = ens.random_density(rng, 3), ens.random_full_rank_density(rng, 3)
        a = 2.0
        grid = max(a * t - log_trace_power(rho, sigma, t) for t in np.linspace(0, 1, 20001))
        assert chernoff_sup(rho, sigma, a)[0] == pytest.approx(grid, abs=1e-8)

    def test_singular(self):
        with pytest.raises(HypothesisError):
            chernoff_sup(HALF, DensityMatrix.diagonal([1, 0]), 1.0)
