"""Quantum hypothesis tests for ``rho^{(x)n}`` against ``sigma^{(x)n}``.

Error probabilities, Neyman-Pearson projector tests and the exact optimum
``beta*_n(eps)`` with a duality certificate, the likelihood-ratio test run
on the outcomes of the group-theoretic measurement, and audits of the
finite-n inequalities behind its optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .opcore import (
    DensityMatrix,
    HermitianOperator,
    HypothesisError,
    TestOperator,
    cell_probabilities,
    check_budget,
    entropy_moments,
    local_log_sum,
    rank_one_refinement,
    relative_entropy,
    tensor_power,
)
from .spectrum import ErrorPair, golden_section_max
from .symmetry import SteinCellLabel, stein_pvm

__all__ = [
    "ErrorPair",
    "NpCurvePoint",
    "BetaStar",
    "SteinRunRecord",
    "ConvergenceRow",
    "CumulantAudit",
    "error_probabilities",
    "np_test",
    "np_curve",
    "beta_star",
    "classical_np_beta",
    "stein_rate_curve",
    "spectrum_convergence_audit",
    "cumulant_bound_audit",
    "chernoff_sup",
    "log_trace_power",
]

ALPHA_TOL = 1e-10
MAX_BISECTIONS = 200
ZERO_CELL_REL_TOL = 1e-10
GOLDEN_TOL = 1e-8


def _mat(x) -> np.ndarray:
    return x.matrix if isinstance(x, HermitianOperator) else np.asarray(x, dtype=complex)


def _check_pair(rho_n, sigma_n) -> None:
    if rho_n.dim != sigma_n.dim:
        raise ValueError(f"dimension mismatch: {rho_n.dim} vs {sigma_n.dim}")


def error_probabilities(test: TestOperator | np.ndarray, rho_n: DensityMatrix,
                        sigma_n: DensityMatrix) -> ErrorPair:
    """``(Tr rho_n (I - A), Tr sigma_n A)``."""
    _check_pair(rho_n, sigma_n)
    a = _mat(test)
    if a.shape != (rho_n.dim, rho_n.dim):
        raise ValueError(f"test has shape {a.shape}, states have dimension {rho_n.dim}")
    accept_rho = float(np.real(np.sum(a * rho_n.matrix.T)))
    accept_sigma = float(np.real(np.sum(a * sigma_n.matrix.T)))
    return ErrorPair(1.0 - accept_rho, accept_sigma)


class _NpSpectrum:
    """Eigen-split of ``rho_n - t sigma_n`` into positive, zero and negative parts."""

    def __init__(self, rho_n: DensityMatrix, sigma_n: DensityMatrix, t: float,
                 zero_tol: float | None = None):
        diff = rho_n.matrix - t * sigma_n.matrix
        w, v = np.linalg.eigh((diff + diff.conj().T) / 2)
        scale = max(abs(w[0]), abs(w[-1]))
        tol = ZERO_CELL_REL_TOL * scale if zero_tol is None else zero_tol
        self.t = t
        self.evals, self.evecs = w, v
        self.positive = w > tol
        self.zero = np.abs(w) <= tol
        self.rho_weights = np.real(np.sum(v.conj() * (rho_n.matrix @ v), axis=0))
        self.sigma_weights = np.real(np.sum(v.conj() * (sigma_n.matrix @ v), axis=0))

    def errors(self, boundary_weight: float = 0.0) -> tuple[float, float]:
        accept = self.positive + boundary_weight * self.zero
        return (1.0 - float(np.dot(accept, self.rho_weights)),
                float(np.dot(accept, self.sigma_weights)))

    def test_matrix(self, boundary_weight: float = 0.0) -> np.ndarray:
        accept = self.positive + boundary_weight * self.zero
        return (self.evecs * accept) @ self.evecs.conj().T

    def positive_part_trace(self) -> float:
        return float(np.sum(self.evals[self.evals > 0]))


def np_test(rho_n: DensityMatrix, sigma_n: DensityMatrix, t: float,
            boundary_weight: float = 0.0, zero_tol: float | None = None) -> TestOperator:
    """Projector onto ``{rho_n - t sigma_n > 0}`` plus ``boundary_weight`` on its kernel.

    Minimizes ``alpha + t beta`` over all tests, for any boundary weight.
    The zero cell uses tolerance ``1e-10 * ||rho_n - t sigma_n||`` by default.
    """
    _check_pair(rho_n, sigma_n)
    if t < 0:
        raise ValueError("t must be non-negative")
    if not 0.0 <= boundary_weight <= 1.0:
        raise ValueError("boundary_weight must lie in [0, 1]")
    split = _NpSpectrum(rho_n, sigma_n, t, zero_tol)
    return TestOperator._wrap(split.test_matrix(boundary_weight))


@dataclass(frozen=True)
class NpCurvePoint:
    t: float
    test: TestOperator
    errors: ErrorPair


def np_curve(rho_n: DensityMatrix, sigma_n: DensityMatrix, ts: Iterable[float],
             boundary_weight: float = 0.0) -> list[NpCurvePoint]:
    out = []
    for t in ts:
        test = np_test(rho_n, sigma_n, t, boundary_weight)
        out.append(NpCurvePoint(float(t), test, error_probabilities(test, rho_n, sigma_n)))
    return out


@dataclass(frozen=True)
class BetaStar:
    """Optimal type-II error at type-I level ``epsilon`` with its certificate.

    ``dual`` is the lower bound ``max_t (1 - eps - Tr(rho_n - t sigma_n)_+)/t``
    evaluated at the bracketing thresholds; ``certificate_gap = beta - dual``.
    """

    beta: float
    certificate_gap: float
    alpha: float
    threshold: float
    dual: float
    mixing: str


def _dual_value(split: _NpSpectrum, eps: float) -> float:
    if split.t <= 0:
        return -math.inf
    return (1.0 - eps - split.positive_part_trace()) / split.t


def beta_star(rho: DensityMatrix, sigma: DensityMatrix, n: int, eps: float, *,
              budget: int | None = None) -> BetaStar:
    """``min { Tr sigma^n A : 0 <= A <= I, Tr rho^n (I - A) <= eps }``.

    Bisection over the threshold ``t`` of the projector tests (type-I error
    is non-decreasing in ``t``) until the level ``eps`` is bracketed; the
    level is then met exactly, either with a boundary weight on the kernel
    of ``rho_n - t sigma_n`` or by mixing the two bracketing tests.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    check_budget(rho.dim**n, budget, "tensor power")
    rho_n = tensor_power(rho, n, budget=budget)
    sigma_n = tensor_power(sigma, n, budget=budget)
    return _beta_star_tensor(rho_n, sigma_n, eps)


def _beta_star_tensor(rho_n: DensityMatrix, sigma_n: DensityMatrix, eps: float) -> BetaStar:
    sw, sv = sigma_n.eigh
    inv_sqrt = (sv / np.sqrt(sw)) @ sv.conj().T
    ratio = inv_sqrt @ rho_n.matrix @ inv_sqrt
    t_max = float(np.linalg.eigvalsh((ratio + ratio.conj().T) / 2)[-1])
    lo = _NpSpectrum(rho_n, sigma_n, 0.0)
    hi = _NpSpectrum(rho_n, sigma_n, t_max * (1 + 1e-9) + 1e-300)
    for _ in range(MAX_BISECTIONS):
        mid_t = 0.5 * (lo.t + hi.t)
        if not lo.t < mid_t < hi.t:
            break
        mid = _NpSpectrum(rho_n, sigma_n, mid_t)
        alpha, beta = mid.errors()
        if abs(alpha - eps) <= ALPHA_TOL:
            dual = max(_dual_value(mid, eps), _dual_value(lo, eps), _dual_value(hi, eps))
            return BetaStar(beta, beta - dual, alpha, mid_t, dual, "none")
        if alpha < eps:
            lo = mid
        else:
            hi = mid
    dual = max(_dual_value(lo, eps), _dual_value(hi, eps))
    for split in (hi, lo):
        a_strict, b_strict = split.errors(0.0)
        a_incl, b_incl = split.errors(1.0)
        if split.zero.any() and a_incl <= eps <= a_strict and a_strict > a_incl:
            x = (a_strict - eps) / (a_strict - a_incl)
            alpha, beta = split.errors(x)
            return BetaStar(beta, beta - dual, alpha, split.t, dual, "boundary")
    a_lo, b_lo = lo.errors()
    a_hi, b_hi = hi.errors()
    gamma = 1.0 if a_hi <= a_lo else (a_hi - eps) / (a_hi - a_lo)
    gamma = min(max(gamma, 0.0), 1.0)
    alpha = gamma * a_lo + (1 - gamma) * a_hi
    beta = gamma * b_lo + (1 - gamma) * b_hi
    return BetaStar(beta, beta - dual, alpha, 0.5 * (lo.t + hi.t), dual, "mixture")


def classical_np_beta(p: Sequence[float], q: Sequence[float], eps: float) -> float:
    """Randomized Neyman-Pearson optimum for distributions on a common alphabet.

    Outcomes are accepted in decreasing order of ``p/q``; the outcome that
    crosses the level ``eps`` is accepted with the fraction that meets it.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, p / np.where(q > 0, q, 1.0), np.inf)
    order = np.argsort(-ratio, kind="stable")
    target = 1.0 - eps
    accepted_p = beta = 0.0
    for i in order:
        if accepted_p >= target:
            break
        take = min(1.0, (target - accepted_p) / p[i]) if p[i] > 0 else 0.0
        accepted_p += take * p[i]
        beta += take * q[i]
    return beta


# ---------------------------------------------------------------- Stein pipeline


@dataclass(frozen=True)
class SteinRunRecord:
    n: int
    alpha_n: float
    beta_n: float
    rate: float
    threshold: float
    cells: int

    @property
    def beta_bound(self) -> float:
        return math.exp(-self.n * self.threshold)

    @property
    def beta_bound_ok(self) -> bool:
        return self.beta_n <= self.beta_bound


def _likelihood_test(p_rho: np.ndarray, p_sigma: np.ndarray, n: int, threshold: float):
    """Accept cells with ``(1/n) log(P_rho/P_sigma) >= threshold``.

    ``P_sigma = 0 < P_rho`` counts as ratio ``+inf``; cells where both vanish
    are dropped.
    """
    live = (p_rho > 0) | (p_sigma > 0)
    pr, ps = p_rho[live], p_sigma[live]
    with np.errstate(divide="ignore"):
        score = (np.log(pr) - np.log(ps)) / n
    accept = score >= threshold
    alpha = float(pr[~accept].sum())
    beta = float(ps[accept].sum())
    return min(max(alpha, 0.0), 1.0), min(max(beta, 0.0), 1.0)


def _stein_statistics(rho: DensityMatrix, sigma: DensityMatrix, n: int, budget, rank_one: bool):
    rho_n = tensor_power(rho, n, budget=budget)
    sigma_n = tensor_power(sigma, n, budget=budget)
    pvm = stein_pvm(sigma, n, budget=budget)
    if rank_one:
        pvm = rank_one_refinement(pvm, rho_n)
    p_rho = np.clip(cell_probabilities(rho_n.matrix, pvm), 0.0, None)
    # each cell sits inside one eigenspace of sigma^n, so its mass is rank * eigenvalue;
    # this keeps full relative precision for tiny eigenvalues
    p_sigma = np.array([_stein_label(lab).sigma_eigenvalue * r for lab, r in zip(pvm.labels, pvm.ranks)])
    return pvm, rho_n, sigma_n, p_rho, p_sigma


def _stein_label(label) -> SteinCellLabel:
    return label if isinstance(label, SteinCellLabel) else label[0]


def stein_rate_curve(rho: DensityMatrix, sigma: DensityMatrix, eps_margin: float,
                     n_range: Iterable[int], *, budget: int | None = None) -> list[SteinRunRecord]:
    """Likelihood-ratio test on the outcomes of the Stein PVM, threshold ``D - eps_margin``.

    Every accepted cell has ``P_sigma <= exp(-n thr) P_rho``, so
    ``beta_n <= exp(-n thr)`` for every ``n``.
    """
    if eps_margin <= 0:
        raise ValueError("eps_margin must be positive")
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    ns = list(n_range)
    for n in ns:
        check_budget(sigma.dim**n, budget, "Stein PVM")
    threshold = relative_entropy(rho, sigma) - eps_margin
    records = []
    for n in ns:
        pvm, _, _, p_rho, p_sigma = _stein_statistics(rho, sigma, n, budget, rank_one=False)
        alpha, beta = _likelihood_test(p_rho, p_sigma, n, threshold)
        rate = -math.log(beta) / n if beta > 0 else math.inf
        records.append(SteinRunRecord(n, alpha, beta, rate, threshold, len(pvm)))
    return records


@dataclass(frozen=True)
class ConvergenceRow:
    """Per-n concentration diagnostics of the measured log-likelihoods.

    ``deviation_prob``: P_rho-probability that ``(1/n) log P_rho`` is more than
    ``delta`` away from ``Tr rho log rho``.  ``absdev_measured``/``absdev_operator``: the two
    sides of ``sum P_rho |(1/n) log P_sigma - c| = Tr rho^n |(1/n) L_n - c|``
    with ``c = Tr rho log sigma`` and ``L_n`` the local sum of ``log sigma``.
    ``variance``/``variance_bound``: second moment of ``(1/n) log P_rho``
    about ``Tr rho log rho`` and its pinching bound.
    """

    n: int
    cells: int
    measured_rate: float
    deviation_prob: float
    absdev_measured: float
    absdev_operator: float
    variance: float
    variance_bound: float

    ABSDEV_TOL = 1e-8
    VARIANCE_TOL = 1e-8

    @property
    def absdev_ok(self) -> bool:
        return abs(self.absdev_measured - self.absdev_operator) <= self.ABSDEV_TOL

    @property
    def variance_ok(self) -> bool:
        return self.variance <= self.variance_bound + self.VARIANCE_TOL


def variance_bound(rho: DensityMatrix, n: int) -> float:
    """``8 ((k-1) log(n+1) / n)^2 + 2 Var_rho(log rho) / n``."""
    k = rho.dim
    mean, second = entropy_moments(rho)
    return 8.0 * ((k - 1) * math.log(n + 1) / n) ** 2 + 2.0 * (second - mean**2) / n


def spectrum_convergence_audit(rho: DensityMatrix, sigma: DensityMatrix, n_range: Iterable[int],
                               delta: float = 0.1, *, budget: int | None = None
                               ) -> list[ConvergenceRow]:
    """Audit the measured information spectrum on the rank-one refined Stein PVM.

    Each Stein cell is split along the eigenbasis of the pinched
    ``rho^{(x)n}``, which leaves the sigma-distribution untouched.
    """
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    ns = list(n_range)
    for n in ns:
        check_budget(sigma.dim**n, budget, "Stein PVM")
    h = entropy_moments(rho)[0]
    c = float(np.real(np.sum(rho.matrix * sigma.apply(np.log).T)))
    rows = []
    for n in ns:
        pvm, rho_n, _, p_rho, p_sigma = _stein_statistics(rho, sigma, n, budget, rank_one=True)
        live = p_rho > 0
        pr, ps = p_rho[live], p_sigma[live]
        log_pr = np.log(pr) / n
        deviation = float(pr[np.abs(log_pr - h) > delta].sum())
        absdev_measured = float(np.dot(pr, np.abs(np.log(ps) / n - c)))
        local = local_log_sum(sigma, n, budget=budget)
        x = local.matrix / n - c * np.eye(local.dim)
        xw, xv = np.linalg.eigh(x)
        abs_x = (xv * np.abs(xw)) @ xv.conj().T
        absdev_operator = float(np.real(np.sum(rho_n.matrix * abs_x.T)))
        variance = float(np.dot(pr, (log_pr - h) ** 2))
        measured = float(np.dot(pr, np.log(pr) - np.log(ps))) / n
        rows.append(ConvergenceRow(n, len(pvm), measured, deviation, absdev_measured, absdev_operator,
                                   variance, variance_bound(rho, n)))
    return rows


# ---------------------------------------------------------------- Markov / cumulant bounds


def log_trace_power(rho: DensityMatrix, sigma: DensityMatrix, t: float) -> float:
    """``log Tr rho sigma^{-t}`` via log-sum-exp over the eigenbasis of sigma."""
    q, v = sigma.eigh
    weights = np.real(np.sum(v.conj() * (rho.matrix @ v), axis=0))
    live = weights > 0
    return _log_mgf(weights[live], -np.log(q[live]), t)


def _log_mgf(probs: np.ndarray, values: np.ndarray, t: float) -> float:
    """``log sum_i probs_i exp(t values_i)``."""
    expo = t * values + np.log(probs)
    top = float(np.max(expo))
    return top + math.log(float(np.sum(np.exp(expo - top))))


def chernoff_sup(rho: DensityMatrix, sigma: DensityMatrix, a: float,
                 offset: float = 0.0) -> tuple[float, float]:
    """``sup_{0<=t<=1} (a - offset) t - log Tr rho sigma^{-t}`` and its maximizer.

    The objective is concave in ``t``, so golden-section search applies;
    ``t = 0`` gives 0, so the value is never negative.
    """
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    slope = a - offset
    t, value = golden_section_max(lambda t: slope * t - log_trace_power(rho, sigma, t),
                                  0.0, 1.0, GOLDEN_TOL)
    # the objective vanishes exactly at t = 0
    return (value, t) if value > 0.0 else (0.0, 0.0)


@dataclass(frozen=True)
class CumulantAudit:
    """Large-deviation bound for ``-(1/n) log P_sigma`` under ``P_rho``.

    ``lhs`` is the exact Chernoff exponent of the measured distributions and
    ``rhs`` its lower bound ``n sup_t (a t - t (k-1) log(n+1)/n - log Tr rho sigma^{-t})``;
    ``rhs_alt`` uses ``(k+1)`` in place of ``(k-1)``.
    """

    n: int
    a: float
    lhs: float
    rhs: float
    rhs_alt: float
    tail_prob: float
    tail_bound: float

    TOL = 1e-6

    @property
    def bound_ok(self) -> bool:
        return self.lhs >= self.rhs - self.TOL

    @property
    def markov_ok(self) -> bool:
        return self.tail_prob <= self.tail_bound + 1e-12


def cumulant_bound_audit(rho: DensityMatrix, sigma: DensityMatrix, a: float, n: int, *,
                         budget: int | None = None) -> CumulantAudit:
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    k = rho.dim
    _, _, _, p_rho, p_sigma = _stein_statistics(rho, sigma, n, budget, rank_one=True)
    live = p_rho > 0
    pr, values = p_rho[live], -np.log(p_sigma[live])
    lhs = golden_section_max(lambda t: a * n * t - _log_mgf(pr, values, t), 0.0, 1.0, GOLDEN_TOL)[1]
    rhs = n * chernoff_sup(rho, sigma, a, (k - 1) * math.log(n + 1) / n)[0]
    rhs_alt = n * chernoff_sup(rho, sigma, a, (k + 1) * math.log(n + 1) / n)[0]
    tail = float(pr[values / n >= a].sum())
    return CumulantAudit(n, a, lhs, rhs, rhs_alt, tail, math.exp(-lhs))
