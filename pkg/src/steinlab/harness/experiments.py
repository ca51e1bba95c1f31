"""End-to-end runs: the Stein pipeline on one state pair and the seeded invariant sweeps."""

from __future__ import annotations

import math
import time
import zlib
from typing import Callable, Iterator

import numpy as np

from .. import ensembles as ens
from ..opcore import (
    DensityMatrix,
    HypothesisError,
    Pvm,
    is_refinement,
    measured_relative_entropy,
    pinch,
    pinched_inverse_power_gap,
    pinched_log_variance,
    pinched_log_variance_bound,
    pinching_bound_margin,
    relative_entropy,
    tensor_power,
    tensor_spectral_pvm,
)
from ..spectrum import (
    ClassicalTest,
    FiniteDistribution,
    iid_log_ratio_spectrum,
    kl_divergence,
    max_plog2,
    max_plog2_oracle,
    np_dominance_check,
    s_test,
    s_test_indicator,
)
from ..symmetry import (
    class_size,
    isotypic_pvm,
    partitions_of,
    repeated_combination,
    schur_pvm,
    sl_dim,
    sn_character,
    stein_pvm,
    total_spin_pvm,
)
from ..testing import (
    _beta_star_tensor,
    beta_star,
    chernoff_sup,
    classical_np_beta,
    cumulant_bound_audit,
    error_probabilities,
    log_trace_power,
    np_test,
    spectrum_convergence_audit,
    stein_rate_curve,
)
from .config import ExperimentConfig
from .report import RunReport

BETA_STAR_MAX_DIM = 256


def _cross_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """``-Tr rho log sigma``."""
    return -float(np.real(np.sum(rho.matrix * sigma.apply(np.log).T)))


def run_stein_experiment(cfg: ExperimentConfig) -> RunReport:
    """Likelihood-ratio test on the Stein PVM plus its finite-n audits, for every n in range.

    Tables: ``stein`` (one row per n), ``convergence``, ``cumulant`` and, for
    dimensions up to ``BETA_STAR_MAX_DIM``, ``beta_star``.
    """
    cfg.check_budget()
    rho, sigma = cfg.require_states()
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    report = RunReport("stein-run", cfg.echo())
    d = relative_entropy(rho, sigma)
    threshold = d - cfg.epsilon_margin
    report.summary.update(relative_entropy=d, threshold=threshold,
                          cross_entropy=_cross_entropy(rho, sigma))

    start = time.perf_counter()
    records = stein_rate_curve(rho, sigma, cfg.epsilon_margin, cfg.n_range, budget=cfg.dim_budget)
    report.timings["stein"] = time.perf_counter() - start
    rows = []
    for r in records:
        rows.append({"n": r.n, "alpha": r.alpha_n, "beta": r.beta_n, "rate": r.rate,
                     "threshold": r.threshold, "cell_count": r.cells,
                     "beta_bound_ok": r.beta_bound_ok})
        report.check("stein_beta_bound", r.beta_bound - r.beta_n, n=r.n)
        report.check("stein_rate", r.rate - r.threshold, n=r.n)
    report.tables["stein"] = rows
    report.summary["rate_gap"] = {r.n: d - r.rate for r in records}

    start = time.perf_counter()
    conv = spectrum_convergence_audit(rho, sigma, cfg.n_range, delta=cfg.epsilon_margin,
                                      budget=cfg.dim_budget)
    report.timings["convergence"] = time.perf_counter() - start
    report.tables["convergence"] = [
        {"n": c.n, "cells": c.cells, "measured_rate": c.measured_rate,
         "deviation_prob": c.deviation_prob, "absdev_measured": c.absdev_measured, "absdev_operator": c.absdev_operator,
         "variance": c.variance, "variance_bound": c.variance_bound}
        for c in conv]
    for c in conv:
        report.check("abs_deviation_identity", cfg.tol("abs_deviation") - abs(c.absdev_measured - c.absdev_operator), n=c.n)
        report.check("variance_bound", c.variance_bound + cfg.tol("variance") - c.variance, n=c.n)

    start = time.perf_counter()
    a = _cross_entropy(rho, sigma) + cfg.epsilon_margin
    cum_rows = []
    for n in cfg.n_range:
        au = cumulant_bound_audit(rho, sigma, a, n, budget=cfg.dim_budget)
        cum_rows.append({"n": n, "a": a, "lhs": au.lhs, "rhs": au.rhs, "rhs_alt": au.rhs_alt,
                         "tail_prob": au.tail_prob, "tail_bound": au.tail_bound})
        report.check("cumulant_bound", au.lhs - au.rhs + cfg.tol("cumulant"), n=n)
        report.check("markov_tail", au.tail_bound - au.tail_prob + 1e-12, n=n)
    report.tables["cumulant"] = cum_rows
    report.timings["cumulant"] = time.perf_counter() - start

    start = time.perf_counter()
    bs_rows = []
    for r in records:
        if rho.dim**r.n > BETA_STAR_MAX_DIM:
            continue
        rho_n = tensor_power(rho, r.n, budget=cfg.dim_budget)
        sigma_n = tensor_power(sigma, r.n, budget=cfg.dim_budget)
        opt = _beta_star_tensor(rho_n, sigma_n, cfg.epsilon)
        bs_rows.append({"n": r.n, "epsilon": cfg.epsilon, "beta": opt.beta, "alpha": opt.alpha,
                        "certificate_gap": opt.certificate_gap})
        report.check("beta_star_certificate", cfg.tol("certificate") - opt.certificate_gap, n=r.n)
        if 0.0 < r.alpha_n < 1.0:
            at_level = _beta_star_tensor(rho_n, sigma_n, r.alpha_n)
            report.check("beta_star_dominance", r.beta_n - at_level.beta + 1e-10, n=r.n)
    report.tables["beta_star"] = bs_rows
    report.timings["beta_star"] = time.perf_counter() - start
    return report


# ---------------------------------------------------------------- invariant sweeps

Suite = Callable[[np.random.Generator, ExperimentConfig], Iterator[float]]
SUITES: dict[str, Suite] = {}


def suite(label: str):
    """Register an invariant sweep; it yields one slack per instance (``>= 0`` passes)."""
    def deco(fn: Suite) -> Suite:
        SUITES[label] = fn
        return fn
    return deco


def suite_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream per suite, so adding suites never shifts existing ones."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


def _pair(rng, dim: int = 2):
    return ens.random_density(rng, dim), ens.random_full_rank_density(rng, dim, 0.02)


def _n_cap(cfg: ExperimentConfig, cap: int) -> range:
    return range(cfg.n_min, min(cfg.n_max, cap) + 1)


def _random_pvm(rng, dim: int) -> Pvm:
    cuts = np.sort(rng.choice(np.arange(1, dim), size=int(rng.integers(0, dim)), replace=False))
    ranks = np.diff([0, *cuts, dim])
    return ens.random_block_pvm(rng, [int(r) for r in ranks])


def _commuting_instance(rng, ranks, full_rank: bool = True):
    """``(rho, E, M)``: rho block diagonal in E's blocks, M a rank-one refinement of E."""
    dim = int(sum(ranks))
    u = ens.random_unitary(rng, dim)
    e = ens.random_block_pvm(rng, ranks, basis=u)
    blocks, cells = [], []
    for label, v in e:
        r = v.shape[1]
        g = ens.ginibre(rng, r, r)
        blocks.append(v @ (g @ g.conj().T + (1e-2 * np.eye(r) if full_rank else 0)) @ v.conj().T)
        w = ens.random_unitary(rng, r)
        cells.extend(((label, i), (v @ w)[:, i]) for i in range(r))
    rho = sum(blocks)
    return DensityMatrix(rho / np.trace(rho).real), e, Pvm(cells)


@suite("relent_additivity")
def _relent_additivity(rng, cfg):
    for _ in range(5):
        rho, sigma = _pair(rng)
        d = relative_entropy(rho, sigma)
        for n in _n_cap(cfg, 5):
            dn = relative_entropy(tensor_power(rho, n), tensor_power(sigma, n))
            yield n * 1e-9 - abs(dn - n * d)


@suite("measured_monotonicity")
def _monotonicity(rng, cfg):
    for i in range(200):
        dim = 2 + i % 2
        rho, sigma = _pair(rng, dim)
        povm = ens.random_povm(rng, dim)
        yield relative_entropy(rho, sigma) + cfg.tol("monotonicity") - measured_relative_entropy(rho, sigma, povm)


@suite("pinching_dimension_bound")
def _pinching_dimension(rng, cfg):
    for i in range(200):
        dim = 2 + i % 3
        rho = ens.random_density(rng, dim, int(rng.integers(1, dim + 1)))
        yield pinching_bound_margin(rho, _random_pvm(rng, dim), dim) + cfg.tol("psd")


@suite("pinching_commuting_bound")
def _pinching_commuting(rng, cfg):
    for _ in range(100):
        ranks = [int(r) for r in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
        rho, e, m = _commuting_instance(rng, ranks)
        yield pinching_bound_margin(rho, m, e.w) + cfg.tol("psd")


@suite("pinched_inverse_power")
def _inverse_power(rng, cfg):
    for _ in range(100):
        ranks = [int(r) for r in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
        rho, e, m = _commuting_instance(rng, ranks)
        t = float(rng.uniform(0.05, 1.0))
        yield cfg.tol("inverse_power") - pinched_inverse_power_gap(rho, m, e.w, t)


@suite("pinched_log_variance")
def _log_variance(rng, cfg):
    for _ in range(100):
        ranks = [int(r) for r in rng.integers(1, 5, size=int(rng.integers(1, 3)))]
        ranks[0] = max(ranks[0], 3)
        rho, e, m = _commuting_instance(rng, ranks)
        yield pinched_log_variance_bound(e.w) + cfg.tol("log_variance") - pinched_log_variance(rho, e, m)


@suite("pinch_idempotence")
def _idempotence(rng, cfg):
    for i in range(100):
        dim = 2 + i % 3
        rho = ens.random_density(rng, dim)
        m = _random_pvm(rng, dim)
        once = pinch(rho, m)
        yield 1e-10 - float(np.abs(pinch(once, m).matrix - once.matrix).max())


@suite("character_orthogonality")
def _characters(rng, cfg):
    for n in range(1, min(cfg.n_max, 8) + 1):
        shapes = partitions_of(n)
        for lam in shapes:
            for mu in shapes:
                total = sum(class_size(c) * sn_character(lam, c) * sn_character(mu, c) for c in shapes)
                yield 0.0 if total == math.factorial(n) * (lam == mu) else -1.0


def _residual(x: np.ndarray) -> float:
    return float(np.abs(x).max())


@suite("isotypic_projectors")
def _isotypic(rng, cfg):
    for n in _n_cap(cfg, 6):
        for k in (2, 3):
            if k**n > min(cfg.dim_budget, 729):
                continue
            dec = isotypic_pvm(n, k)
            projs = [c.projector for c in dec.components]
            yield cfg.tol("projector") - _residual(sum(projs) - np.eye(k**n))
            for i, p in enumerate(projs):
                yield cfg.tol("projector") - _residual(p @ p - p)
                for q in projs[i + 1:]:
                    yield cfg.tol("projector") - _residual(p @ q)
            for _ in range(3):
                rho_n = tensor_power(ens.random_density(rng, k), n).matrix
                for p in projs:
                    yield cfg.tol("projector") - _residual(p @ rho_n - rho_n @ p)


@suite("spin_matches_isotypic")
def _spin(rng, cfg):
    for n in _n_cap(cfg, 6):
        yield 0.0 if total_spin_pvm(n).same_cells(isotypic_pvm(n, 2).pvm) else -1.0


@suite("sl_dim_bound")
def _sl_dim(rng, cfg):
    for n in range(1, cfg.n_max + 1):
        for k in (2, 3, 4):
            dims = [sl_dim(lam, k) for lam in partitions_of(n, k)]
            yield float((n + 1) ** (k - 1) - max(dims))
            yield 0.0 if sl_dim((n,), k) == repeated_combination(k, n) else -1.0
            if k == 2:
                # for k >= 3 mixed shapes can beat the symmetric one
                yield 0.0 if max(dims) == n + 1 else -1.0


@suite("stein_pvm_refinement")
def _stein_refines(rng, cfg):
    for n in _n_cap(cfg, 5):
        sigma = ens.random_full_rank_density(rng, 2, 0.02)
        m = stein_pvm(sigma, n)
        yield 0.0 if is_refinement(schur_pvm(n, 2), m) else -1.0
        yield 0.0 if is_refinement(tensor_spectral_pvm(sigma, n), m) else -1.0
        rho_n = tensor_power(ens.random_density(rng, 2), n)
        yield 0.0 if schur_pvm(n, 2).commutes_with(rho_n, cfg.tol("projector")) else -1.0
        yield 0.0 if m.commutes_with(tensor_power(sigma, n), cfg.tol("projector")) else -1.0


@suite("np_curve_monotone")
def _np_monotone(rng, cfg):
    for _ in range(5):
        rho, sigma = _pair(rng)
        for n in _n_cap(cfg, 4):
            rho_n, sigma_n = tensor_power(rho, n), tensor_power(sigma, n)
            prev = None
            for t in np.geomspace(0.05, 20, 25):
                err = error_probabilities(np_test(rho_n, sigma_n, t), rho_n, sigma_n)
                if prev is not None:
                    tol = cfg.tol("np_monotone")
                    yield min(prev.beta + tol - err.beta, err.alpha + tol - prev.alpha)
                prev = err


@suite("beta_star_certificate")
def _beta_star_gap(rng, cfg):
    for _ in range(10):
        rho, sigma = _pair(rng)
        for n in _n_cap(cfg, 4):
            for eps in (0.1, 0.3):
                yield cfg.tol("certificate") - beta_star(rho, sigma, n, eps).certificate_gap


@suite("beta_star_classical_oracle")
def _beta_star_oracle(rng, cfg):
    for _ in range(10):
        rho, sigma = ens.commuting_pair(rng, 2)
        basis = rho.eigh[1]
        p = np.real(np.diag(basis.conj().T @ rho.matrix @ basis))
        q = np.real(np.diag(basis.conj().T @ sigma.matrix @ basis))
        for n in _n_cap(cfg, 4):
            pn, qn = p, q
            for _ in range(n - 1):
                pn, qn = np.kron(pn, p), np.kron(qn, q)
            for eps in (0.1, 0.3):
                diff = beta_star(rho, sigma, n, eps).beta - classical_np_beta(pn, qn, eps)
                yield cfg.tol("oracle") - abs(diff)


@suite("beta_star_identical_states")
def _beta_star_same(rng, cfg):
    for _ in range(5):
        rho = ens.random_full_rank_density(rng, 2, 0.02)
        for n in _n_cap(cfg, 3):
            for eps in (0.1, 0.3):
                yield cfg.tol("oracle") - abs(beta_star(rho, rho, n, eps).beta - (1 - eps))


@suite("stein_beta_bound")
def _stein_bound(rng, cfg):
    for _ in range(3):
        rho, sigma = _pair(rng)
        margin = 0.5 * relative_entropy(rho, sigma)
        for r in stein_rate_curve(rho, sigma, margin, _n_cap(cfg, 8)):
            yield r.beta_bound - r.beta_n
            yield r.rate - r.threshold


@suite("stein_np_dominance")
def _stein_dominance(rng, cfg):
    for _ in range(3):
        rho, sigma = _pair(rng)
        margin = 0.5 * relative_entropy(rho, sigma)
        for r in stein_rate_curve(rho, sigma, margin, _n_cap(cfg, 4)):
            if 0.0 < r.alpha_n < 1.0:
                opt = beta_star(rho, sigma, r.n, r.alpha_n)
                yield r.beta_n - opt.beta + 1e-10


@suite("abs_deviation_identity")
def _dd(rng, cfg):
    for _ in range(3):
        rho, sigma = _pair(rng)
        for row in spectrum_convergence_audit(rho, sigma, _n_cap(cfg, 6)):
            yield cfg.tol("abs_deviation") - abs(row.absdev_measured - row.absdev_operator)


@suite("log_variance_concentration")
def _variance(rng, cfg):
    for _ in range(3):
        rho, sigma = _pair(rng)
        for row in spectrum_convergence_audit(rho, sigma, range(max(cfg.n_min, 2), min(cfg.n_max, 6) + 1)):
            yield row.variance_bound + cfg.tol("variance") - row.variance


@suite("cumulant_bound")
def _cumulant(rng, cfg):
    for _ in range(3):
        rho, sigma = _pair(rng)
        a = _cross_entropy(rho, sigma) + float(rng.uniform(0.05, 0.5))
        for n in _n_cap(cfg, 6):
            au = cumulant_bound_audit(rho, sigma, a, n)
            yield au.lhs - au.rhs + cfg.tol("cumulant")
            yield au.tail_bound - au.tail_prob + 1e-12


@suite("chernoff_concavity")
def _concavity(rng, cfg):
    for _ in range(100):
        rho, sigma = _pair(rng)
        t0, t1 = np.sort(rng.uniform(0, 1, 2))
        f0, f1 = log_trace_power(rho, sigma, t0), log_trace_power(rho, sigma, t1)
        yield 0.5 * (f0 + f1) - log_trace_power(rho, sigma, 0.5 * (t0 + t1)) + 1e-12
        yield chernoff_sup(rho, sigma, float(rng.normal()))[0]


def _random_distribution(rng, k: int) -> FiniteDistribution:
    return FiniteDistribution.from_probs(rng.dirichlet(np.ones(k)) * (1 - k * 1e-3) + 1e-3)


@suite("s_test_bound")
def _s_test(rng, cfg):
    for _ in range(20):
        k = int(rng.integers(2, 5))
        p, q = _random_distribution(rng, k), _random_distribution(rng, k)
        for n in (1, 4, 16):
            cdf = iid_log_ratio_spectrum(p, q, n)
            for lam in np.linspace(cdf.values[0] - 0.1, cdf.values[-1] + 0.1, 15):
                res = s_test(p, q, n, lam, spectrum=cdf)
                yield res.beta_bound - res.beta
                yield res.beta_bound * res.accept_p_mass * (1 + 1e-12) - res.beta


@suite("classical_np_dominance")
def _np_dominance(rng, cfg):
    for _ in range(5):
        p, q = _random_distribution(rng, 3), _random_distribution(rng, 3)
        labels = s_test_indicator(p, q, 3, 0.1)[1].labels
        for _ in range(40):
            challenger = ClassicalTest(dict(zip(labels, rng.uniform(0, 1, len(labels)))))
            yield 0.0 if np_dominance_check(p, q, 3, 0.1, challenger) else -1.0


@suite("spectrum_mean")
def _spectrum_mean(rng, cfg):
    for _ in range(20):
        k = int(rng.integers(2, 5))
        p, q = _random_distribution(rng, k), _random_distribution(rng, k)
        n = int(rng.integers(1, 20))
        yield cfg.tol("mean") - abs(iid_log_ratio_spectrum(p, q, n).mean() - kl_divergence(p, q))


@suite("plog2_extremum")
def _plog2_extremum(rng, cfg):
    for k in range(2, 7):
        exact = max_plog2(k)
        yield cfg.tol("plog2") - abs(exact - max_plog2_oracle(k))
        if k >= 3:
            yield cfg.tol("plog2") - abs(exact - math.log(k) ** 2)


def run_audit_suite(cfg: ExperimentConfig, labels: list[str] | None = None) -> RunReport:
    """Run the registered sweeps with per-suite substreams of ``cfg.seed``."""
    cfg.check_budget()
    chosen = list(SUITES) if labels is None else labels
    unknown = [x for x in chosen if x not in SUITES]
    if unknown:
        raise KeyError(f"unknown suites: {unknown}")
    report = RunReport("audit-all", cfg.echo())
    rows = []
    for label in chosen:
        start = time.perf_counter()
        slacks = list(SUITES[label](suite_rng(cfg.seed, label), cfg))
        report.timings[label] = time.perf_counter() - start
        failures = int(sum(s < 0 for s in slacks))
        worst = float(min(slacks)) if slacks else math.inf
        rows.append({"suite": label, "instances": len(slacks), "failures": failures, "worst_slack": worst})
        report.check(label, worst, instances=len(slacks), failures=failures)
    report.tables["suites"] = rows
    report.summary["instances"] = sum(r["instances"] for r in rows)
    report.summary["failures"] = sum(r["failures"] for r in rows)
    return report
