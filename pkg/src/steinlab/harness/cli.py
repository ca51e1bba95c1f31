"""``stein-lab`` command line.

Exit status: 0 on success, 1 when an asserted inequality fails, 2 on usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Sequence

import numpy as np

from ..opcore import (
    DimensionBudgetError,
    HypothesisError,
    MatrixFormatError,
    relative_entropy,
    tensor_power,
)
from ..spectrum import (
    FiniteDistribution,
    SupportError,
    finite_n_spectrum_bounds,
    iid_log_ratio_spectrum,
    kl_divergence,
    max_plog2,
    max_plog2_oracle,
)
from ..symmetry import isotypic_pvm, partitions_of, qubit_spin_blocks
from ..testing import beta_star, cumulant_bound_audit, error_probabilities, np_test
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import _cross_entropy, run_audit_suite, run_stein_experiment
from .report import RunReport, to_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_RHO = "fixture:commuting_rho"
DEFAULT_SIGMA = "fixture:commuting_sigma"
PINCH_SUITES = ["pinching_dimension_bound", "pinching_commuting_bound", "pinched_inverse_power",
                "pinched_log_variance", "pinch_idempotence", "measured_monotonicity"]


def _common(p: argparse.ArgumentParser, states: bool = True) -> None:
    p.add_argument("--config", help="JSON experiment configuration")
    if states:
        p.add_argument("--rho", help="state file, or fixture:<name>")
        p.add_argument("--sigma", help="state file, or fixture:<name>")
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilon-margin", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dim-budget", type=int)
    p.add_argument("--out-dir", help="also write the JSON report and CSV tables here")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stein-lab", description="Desk-scale quantum hypothesis testing lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("relent", help="quantum relative entropy D(rho||sigma)"))
    _common(sub.add_parser("beta-star", help="optimal type-II error at level epsilon"))
    _common(sub.add_parser("stein-run", help="likelihood-ratio test on the Stein measurement"))
    p = sub.add_parser("np-curve", help="Neyman-Pearson error trade-off over thresholds")
    _common(p)
    p.add_argument("--t-min", type=float, default=0.05)
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--boundary-weight", type=float, default=0.0)
    p = sub.add_parser("cumulant-audit", help="large-deviation bound on measured log-likelihoods")
    _common(p)
    p.add_argument("--a", type=float, help="level (default: -Tr rho log sigma + epsilon margin)")
    p = sub.add_parser("schur", help="isotypic decomposition tables")
    _common(p, states=False)
    p.add_argument("--k", type=int, default=2)
    _common(sub.add_parser("pinch-audit", help="seeded pinching inequality sweeps"), states=False)
    p = sub.add_parser("spectrum", help="classical log-likelihood-ratio spectrum")
    _common(p, states=False)
    p.add_argument("--p", default="0.7,0.3", help="comma-separated probabilities")
    p.add_argument("--q", default="0.3,0.7", help="comma-separated probabilities")
    p = sub.add_parser("lemma4", help="max of sum p (log p)^2 over the simplex")
    _common(p, states=False)
    p.add_argument("--k-max", type=int, default=6)
    _common(sub.add_parser("audit-all", help="every registered invariant sweep"), states=False)
    return parser


def _config(args, states: bool = True) -> ExperimentConfig:
    overrides = {name: getattr(args, name, None) for name in
                 ("n_min", "n_max", "epsilon", "epsilon_margin", "eta", "seed", "dim_budget")}
    if states:
        overrides["rho"] = getattr(args, "rho", None)
        overrides["sigma"] = getattr(args, "sigma", None)
    cfg = load_config(args.config, **overrides)
    if states and cfg.rho is None:
        cfg = load_config(args.config, **{**overrides, "rho": DEFAULT_RHO, "sigma": DEFAULT_SIGMA})
    return cfg


def _emit(args, report: RunReport, table: str) -> int:
    if args.out_dir:
        report.write(args.out_dir)
    if args.format == "json":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(to_csv(report.tables.get(table, [])))
    return EXIT_OK if report.ok else EXIT_FAIL


def _parse_probs(text: str) -> FiniteDistribution:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse probabilities {text!r}") from None
    if any(v < 0 for v in vals) or abs(sum(vals) - 1) > 1e-9:
        raise ConfigError(f"{text!r} is not a probability vector")
    return FiniteDistribution.from_probs(vals)


def cmd_relent(args) -> int:
    cfg = _config(args)
    rep = RunReport("relent", cfg.echo())
    d = relative_entropy(cfg.rho, cfg.sigma)
    rep.summary["relative_entropy"] = d
    rep.tables["relent"] = [{"relative_entropy": d, "relative_entropy_bits": d / math.log(2)}]
    return _emit(args, rep, "relent")


def cmd_beta_star(args) -> int:
    cfg = _config(args)
    cfg.check_budget()
    rep = RunReport("beta-star", cfg.echo())
    rows = []
    for n in cfg.n_range:
        r = beta_star(cfg.rho, cfg.sigma, n, cfg.epsilon, budget=cfg.dim_budget)
        rows.append({"n": n, "epsilon": cfg.epsilon, "beta": r.beta, "alpha": r.alpha,
                     "rate": -math.log(r.beta) / n if r.beta > 0 else math.inf,
                     "certificate_gap": r.certificate_gap})
        rep.check("beta_star_certificate", cfg.tol("certificate") - r.certificate_gap, n=n)
    rep.tables["beta_star"] = rows
    return _emit(args, rep, "beta_star")


def cmd_stein_run(args) -> int:
    return _emit(args, run_stein_experiment(_config(args)), "stein")


def cmd_np_curve(args) -> int:
    cfg = _config(args)
    cfg.check_budget()
    if not (0 < args.t_min < args.t_max) or args.points < 2:
        raise ConfigError("need 0 < t-min < t-max and at least 2 points")
    rep = RunReport("np-curve", cfg.echo())
    rows = []
    for n in cfg.n_range:
        rho_n = tensor_power(cfg.rho, n, budget=cfg.dim_budget)
        sigma_n = tensor_power(cfg.sigma, n, budget=cfg.dim_budget)
        prev = None
        for t in np.geomspace(args.t_min, args.t_max, args.points):
            err = error_probabilities(np_test(rho_n, sigma_n, t, args.boundary_weight), rho_n, sigma_n)
            rows.append({"n": n, "t": float(t), "alpha": err.alpha, "beta": err.beta})
            if prev is not None:
                tol = cfg.tol("np_monotone")
                rep.check("np_curve_monotone", min(prev.beta + tol - err.beta, err.alpha + tol - prev.alpha),
                          n=n, t=float(t))
            prev = err
    rep.tables["np_curve"] = rows
    return _emit(args, rep, "np_curve")


def cmd_cumulant(args) -> int:
    cfg = _config(args)
    cfg.check_budget()
    a = args.a if args.a is not None else _cross_entropy(cfg.rho, cfg.sigma) + cfg.epsilon_margin
    rep = RunReport("cumulant-audit", cfg.echo())
    rows = []
    for n in cfg.n_range:
        au = cumulant_bound_audit(cfg.rho, cfg.sigma, a, n, budget=cfg.dim_budget)
        rows.append({"n": n, "a": a, "lhs": au.lhs, "rhs": au.rhs, "rhs_alt": au.rhs_alt,
                     "tail_prob": au.tail_prob, "tail_bound": au.tail_bound, "bound_ok": au.bound_ok})
        rep.check("cumulant_bound", au.lhs - au.rhs + cfg.tol("cumulant"), n=n)
        rep.check("markov_tail", au.tail_bound - au.tail_prob + 1e-12, n=n)
    rep.tables["cumulant"] = rows
    return _emit(args, rep, "cumulant")


def cmd_schur(args) -> int:
    cfg = _config(args, states=False)
    if args.k < 1:
        raise ConfigError("k must be positive")
    rep = RunReport("schur", cfg.echo())
    rows = []
    for n in cfg.n_range:
        bound = (n + 1) ** (args.k - 1)
        if args.k**n <= cfg.dim_budget and n <= 8:
            dec = isotypic_pvm(n, args.k, budget=cfg.dim_budget)
            comps = [(c.partition, c.sn_dim, c.sl_dim, c.rank) for c in dec.components]
        elif args.k == 2:
            comps = []
            for b in qubit_spin_blocks(n):
                lam = partitions_of(n, 2)[int(n / 2 - b.j)]
                comps.append((lam, b.multiplicity, b.block_dim, b.multiplicity * b.block_dim))
        else:
            raise DimensionBudgetError(f"{args.k}^{n} exceeds the budget or n > 8")
        for lam, d, s, rank in comps:
            rows.append({"n": n, "k": args.k, "partition": str(lam), "d_lambda": d, "sl_dim": s,
                         "rank": rank, "w_bound_ok": s <= bound})
            rep.check("sl_dim_bound", bound - s, n=n, partition=str(lam))
    rep.tables["schur"] = rows
    return _emit(args, rep, "schur")


def cmd_pinch_audit(args) -> int:
    cfg = _config(args, states=False)
    rep = run_audit_suite(cfg, PINCH_SUITES)
    rep.kind = "pinch-audit"
    return _emit(args, rep, "suites")


def cmd_spectrum(args) -> int:
    cfg = _config(args, states=False)
    p, q = _parse_probs(args.p), _parse_probs(args.q)
    if len(p) != len(q):
        raise ConfigError("p and q need the same length")
    rep = RunReport("spectrum", cfg.echo())
    d = kl_divergence(p, q)
    rep.summary["kl_divergence"] = d
    rows, bounds = [], []
    for n in cfg.n_range:
        cdf = iid_log_ratio_spectrum(p, q, n, seed=cfg.seed)
        for lam in cdf.values:
            lam = float(lam)
            below, tail = cdf.p_mass_below(lam), cdf.q_mass_at_or_above(lam)
            bound = math.exp(-n * lam)
            rows.append({"n": n, "lambda": lam, "p_mass_below": below,
                         "q_mass_at_or_above": tail, "beta_bound": bound})
            rep.check("s_test_bound", bound - tail, n=n, lam=lam)
            # tight when the accepted set is a single merged point
            rep.check("s_test_refined_bound", bound * (1 - below) * (1 + 1e-12) - tail, n=n, lam=lam)
        lo, hi = finite_n_spectrum_bounds(p, q, n, cfg.eta, spectrum=cdf)
        bounds.append({"n": n, "eta": cfg.eta, "lower": lo, "upper": hi, "kl_divergence": d})
    rep.tables["spectrum"] = rows
    rep.tables["bounds"] = bounds
    return _emit(args, rep, "spectrum")


def cmd_lemma4(args) -> int:
    cfg = _config(args, states=False)
    if args.k_max < 2:
        raise ConfigError("k-max must be at least 2")
    rep = RunReport("lemma4", cfg.echo())
    rows = []
    for k in range(2, args.k_max + 1):
        exact, oracle = max_plog2(k), max_plog2_oracle(k)
        rows.append({"k": k, "max_plog2": exact, "oracle": oracle, "log_k_squared": math.log(k) ** 2,
                     "difference": abs(exact - oracle)})
        rep.check("plog2_oracle", cfg.tol("plog2") - abs(exact - oracle), k=k)
    rep.tables["lemma4"] = rows
    return _emit(args, rep, "lemma4")


def cmd_audit_all(args) -> int:
    return _emit(args, run_audit_suite(_config(args, states=False)), "suites")


COMMANDS = {
    "relent": cmd_relent,
    "beta-star": cmd_beta_star,
    "stein-run": cmd_stein_run,
    "np-curve": cmd_np_curve,
    "cumulant-audit": cmd_cumulant,
    "schur": cmd_schur,
    "pinch-audit": cmd_pinch_audit,
    "spectrum": cmd_spectrum,
    "lemma4": cmd_lemma4,
    "audit-all": cmd_audit_all,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MatrixFormatError, DimensionBudgetError, HypothesisError, SupportError) as exc:
        print(f"stein-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
