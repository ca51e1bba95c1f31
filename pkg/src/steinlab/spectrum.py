"""Classical information-spectrum toolkit.

Finite distributions, i.i.d. products, the exact distribution of the
normalized log-likelihood ratio, threshold tests on that ratio and the
extremal problem ``max sum_i p_i (log p_i)^2`` over the probability simplex.

All logarithms are natural.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

SUM_TOL = 1e-9
MASS_TOL = 1e-12
MERGE_RESOLUTION = 1e-12
MAX_MERGED_SUPPORT = 10**6
MC_SAMPLES = 10**6
PRODUCT_ALPHABET_BUDGET = 10**6


class SupportError(ValueError):
    """Raised when p charges an outcome that q does not."""


@dataclass(frozen=True)
class FiniteDistribution:
    """Probability vector over a finite labeled alphabet.

    Inputs within ``SUM_TOL`` of normalization are renormalized; tiny
    negative entries (rounding) are clamped to zero.
    """

    labels: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).ravel().copy()
        labels = tuple(self.labels)
        if len(labels) != probs.size:
            raise ValueError(f"{len(labels)} labels for {probs.size} probabilities")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be distinct")
        if probs.size == 0:
            raise ValueError("empty distribution")
        if np.any(~np.isfinite(probs)):
            raise ValueError("probabilities must be finite")
        if probs.min() < -SUM_TOL:
            raise ValueError(f"negative probability {probs.min():.3e}")
        probs = np.clip(probs, 0.0, None)
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        probs /= total
        probs.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "FiniteDistribution":
        probs = np.asarray(probs, dtype=float).ravel()
        return cls(tuple(range(probs.size)), probs)

    def __len__(self) -> int:
        return len(self.labels)

    def prob(self, label: Hashable) -> float:
        return float(self.probs[self.labels.index(label)])

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probs.tolist()))


@dataclass(frozen=True)
class ErrorPair:
    """Type-I error ``alpha`` and type-II error ``beta`` of a test."""

    alpha: float
    beta: float

    TOL = 1e-9

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = float(getattr(self, name))
            if not (-self.TOL <= value <= 1.0 + self.TOL):
                raise ValueError(f"{name}={value!r} outside [0, 1]")
            object.__setattr__(self, name, min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class ClassicalTest:
    """Randomized test: acceptance probability of the null for each outcome."""

    accept_prob: dict

    def __post_init__(self):
        for label, value in self.accept_prob.items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"acceptance probability {value!r} for {label!r}")

    @classmethod
    def constant(cls, labels, value: float) -> "ClassicalTest":
        return cls({label: float(value) for label in labels})

    def vector(self, labels) -> np.ndarray:
        try:
            return np.array([self.accept_prob[label] for label in labels], dtype=float)
        except KeyError as exc:
            raise ValueError(f"test has no entry for outcome {exc.args[0]!r}") from None


def _check_shared_labels(p: FiniteDistribution, q: FiniteDistribution) -> None:
    if p.labels != q.labels:
        raise ValueError("distributions are defined on different label sets")


def classical_errors(test: ClassicalTest, p: FiniteDistribution, q: FiniteDistribution) -> ErrorPair:
    """Return ``(sum (1-A) p, sum A q)``."""
    _check_shared_labels(p, q)
    a = test.vector(p.labels)
    return ErrorPair(float(np.dot(1.0 - a, p.probs)), float(np.dot(a, q.probs)))


def kl_divergence(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Classical relative entropy ``D(p||q)``; ``inf`` on support violation."""
    _check_shared_labels(p, q)
    charged = p.probs > 0
    if np.any(q.probs[charged] <= 0):
        return math.inf
    pp, qq = p.probs[charged], q.probs[charged]
    return float(max(np.dot(pp, np.log(pp) - np.log(qq)), 0.0))


def product_distribution(p: FiniteDistribution, n: int) -> FiniteDistribution:
    """The i.i.d. product ``p^n`` over tuples of labels."""
    if n < 1:
        raise ValueError("n must be positive")
    if len(p) ** n > PRODUCT_ALPHABET_BUDGET:
        raise ValueError(f"product alphabet {len(p)}^{n} exceeds {PRODUCT_ALPHABET_BUDGET}")
    labels = tuple(itertools.product(p.labels, repeat=n))
    probs = p.probs
    for _ in range(n - 1):
        probs = np.multiply.outer(probs, p.probs).ravel()
    return FiniteDistribution(labels, probs)


def _letter_log_ratios(p: FiniteDistribution, q: FiniteDistribution):
    _check_shared_labels(p, q)
    charged = p.probs > 0
    if np.any(q.probs[charged] <= 0):
        raise SupportError("support(p) is not contained in support(q)")
    pp, qq = p.probs[charged], q.probs[charged]
    return np.log(pp) - np.log(qq), pp, qq


@dataclass(frozen=True)
class SpectrumCdf:
    """Distribution of ``(1/n) log(p_n/q_n)`` under ``p_n``.

    ``values`` are strictly increasing; ``p_mass[i]`` and ``q_mass[i]`` are
    the p- and q-probabilities of the outcomes whose normalized log-ratio
    equals ``values[i]``.
    """

    n: int
    values: np.ndarray = field(repr=False)
    p_mass: np.ndarray = field(repr=False)
    q_mass: np.ndarray = field(repr=False)
    exact: bool = True

    @property
    def support_points(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.p_mass.tolist()))

    def mean(self) -> float:
        return float(np.dot(self.values, self.p_mass))

    def p_mass_below(self, lam: float) -> float:
        return float(self.p_mass[self.values < lam].sum())

    def p_mass_above(self, lam: float) -> float:
        return float(self.p_mass[self.values > lam].sum())

    def q_mass_at_or_above(self, lam: float) -> float:
        return float(self.q_mass[self.values >= lam].sum())


def _merge(values, p_mass, q_mass, resolution):
    order = np.argsort(values, kind="stable")
    values, p_mass, q_mass = values[order], p_mass[order], q_mass[order]
    if values.size == 0:
        return values, p_mass, q_mass
    starts = np.concatenate(([True], np.diff(values) > resolution))
    group = np.cumsum(starts) - 1
    count = group[-1] + 1
    pm = np.bincount(group, weights=p_mass, minlength=count)
    qm = np.bincount(group, weights=q_mass, minlength=count)
    # mass-weighted representative keeps the mean exact under merging
    weights = np.bincount(group, weights=p_mass * values, minlength=count)
    first = values[starts]
    merged = np.where(pm > 0, weights / np.where(pm > 0, pm, 1.0), first)
    return merged, pm, qm


def iid_log_ratio_spectrum(
    p: FiniteDistribution,
    q: FiniteDistribution,
    n: int,
    *,
    resolution: float = MERGE_RESOLUTION,
    max_support: int = MAX_MERGED_SUPPORT,
    seed: int = 0,
    samples: int = MC_SAMPLES,
) -> SpectrumCdf:
    """Exact spectrum of the i.i.d. log-likelihood ratio by repeated convolution.

    Sums of single-letter log-ratios are merged when closer than
    ``resolution``.  If the merged support would exceed ``max_support`` the
    spectrum is estimated from ``samples`` seeded Monte Carlo draws instead
    (``exact=False``); q-masses then follow from ``q = p exp(-n lambda)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    llr, pp, qq = _letter_log_ratios(p, q)
    values, p_mass, q_mass = _merge(llr.copy(), pp.copy(), qq.copy(), resolution)
    base_values, base_p, base_q = values, p_mass, q_mass
    for _ in range(n - 1):
        if values.size * base_values.size > 4 * max_support:
            return _monte_carlo_spectrum(llr, pp, n, seed, samples)
        values, p_mass, q_mass = _merge(
            np.add.outer(values, base_values).ravel(),
            np.multiply.outer(p_mass, base_p).ravel(),
            np.multiply.outer(q_mass, base_q).ravel(),
            resolution,
        )
        if values.size > max_support:
            return _monte_carlo_spectrum(llr, pp, n, seed, samples)
    return SpectrumCdf(n, values / n, p_mass, q_mass, exact=True)


def _monte_carlo_spectrum(llr, pp, n, seed, samples) -> SpectrumCdf:
    rng = np.random.default_rng(seed)
    draws = rng.choice(llr.size, size=(samples, n), p=pp / pp.sum())
    sums = llr[draws].sum(axis=1) / n
    values, counts = np.unique(sums, return_counts=True)
    p_mass = counts / samples
    return SpectrumCdf(n, values, p_mass, p_mass * np.exp(-n * values), exact=False)


@dataclass(frozen=True)
class STestResult:
    """Errors of the likelihood-ratio threshold test at level ``lam``."""

    n: int
    lam: float
    alpha: float
    beta: float
    accept_p_mass: float

    @property
    def beta_bound(self) -> float:
        return math.exp(-self.n * self.lam)

    @property
    def bound_ok(self) -> bool:
        return self.beta <= self.beta_bound


def s_test(p: FiniteDistribution, q: FiniteDistribution, n: int, lam: float,
           spectrum: SpectrumCdf | None = None) -> STestResult:
    """Accept the null iff ``(1/n) log(p_n/q_n) >= lam``; errors from the spectrum.

    The type-II error obeys ``beta <= exp(-n lam) * accept_p_mass <= exp(-n lam)``.
    """
    cdf = spectrum if spectrum is not None else iid_log_ratio_spectrum(p, q, n)
    accepted = cdf.values >= lam
    accept_mass = float(cdf.p_mass[accepted].sum())
    return STestResult(
        n=n,
        lam=float(lam),
        alpha=float(cdf.p_mass[~accepted].sum()),
        beta=float(cdf.q_mass[accepted].sum()),
        accept_p_mass=accept_mass,
    )


def s_test_indicator(p: FiniteDistribution, q: FiniteDistribution, n: int, lam: float):
    """The same test written out on the product alphabet.

    Returns ``(test, p_n, q_n)``.
    """
    _letter_log_ratios(p, q)
    pn, qn = product_distribution(p, n), product_distribution(q, n)
    with np.errstate(divide="ignore"):
        ratio = (np.log(pn.probs) - np.log(qn.probs)) / n
    ratio = np.where(pn.probs > 0, ratio, -np.inf)
    test = ClassicalTest({lab: float(r >= lam) for lab, r in zip(pn.labels, ratio)})
    return test, pn, qn


def np_dominance_check(p: FiniteDistribution, q: FiniteDistribution, n: int, lam: float,
                       challenger: ClassicalTest, tol: float = 1e-10) -> bool:
    """Check ``alpha(A_lam) + e^{n lam} beta(A_lam) <= alpha(A) + e^{n lam} beta(A)``."""
    test, pn, qn = s_test_indicator(p, q, n, lam)
    weight = math.exp(n * lam)
    own = classical_errors(test, pn, qn)
    other = classical_errors(challenger, pn, qn)
    return own.alpha + weight * own.beta <= other.alpha + weight * other.beta + tol


def finite_n_spectrum_bounds(p: FiniteDistribution, q: FiniteDistribution, n: int,
                             eta: float = 0.05, spectrum: SpectrumCdf | None = None
                             ) -> tuple[float, float]:
    """Finite-n surrogates for the lower and upper spectral divergence rates.

    ``lower`` is the largest lambda with ``p{ratio < lambda} <= eta`` and
    ``upper`` the smallest lambda with ``p{ratio > lambda} <= eta``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    cdf = spectrum if spectrum is not None else iid_log_ratio_spectrum(p, q, n)
    cumulative = np.cumsum(cdf.p_mass)
    survival = cumulative[-1] - cumulative + cdf.p_mass
    lower_idx = int(np.argmax(cumulative > eta + MASS_TOL))
    upper_idx = int(np.nonzero(survival > eta + MASS_TOL)[0][-1])
    return float(cdf.values[lower_idx]), float(cdf.values[upper_idx])


def _plog2(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(np.sum(p * np.log(p) ** 2))


def max_plog2(k: int) -> float:
    """Maximum of ``sum_i p_i (log p_i)^2`` over the k-point simplex."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k >= 3:
        return math.log(k) ** 2
    root = math.sqrt(1.0 - 4.0 / math.e**2)
    lo, hi = (1.0 - root) / 2.0, (1.0 + root) / 2.0
    return lo * math.log(lo) ** 2 + hi * math.log(hi) ** 2


@dataclass(frozen=True)
class KktCandidate:
    support: int
    upper_count: int
    probs: tuple
    value: float


def kkt_candidates(k: int) -> list[KktCandidate]:
    """Stationary points of the Lagrangian on every face of the simplex.

    On a face with ``m`` charged coordinates the stationarity condition
    forces two levels, ``r`` coordinates at ``exp(-1+l)`` and ``m-r`` at
    ``exp(-1-l)``; normalization gives ``r x^2 - e x + (m-r) = 0`` with
    ``x = exp(l)``, solvable only when ``e^2 >= 4 r (m-r)``.  The uniform
    points (``r in {0, m}``) are included for every ``m``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    out = []
    for m in range(1, k + 1):
        uniform = (1.0 / m,) * m
        out.append(KktCandidate(m, m, uniform, _plog2(np.array(uniform))))
        for r in range(1, m):
            disc = math.e**2 - 4.0 * r * (m - r)
            if disc < 0:
                continue
            for x in {(math.e - math.sqrt(disc)) / (2 * r), (math.e + math.sqrt(disc)) / (2 * r)}:
                probs = (x / math.e,) * r + (1.0 / (math.e * x),) * (m - r)
                if min(probs) <= 0 or abs(sum(probs) - 1.0) > 1e-12:
                    continue
                out.append(KktCandidate(m, r, probs, _plog2(np.array(probs))))
    return out


def max_plog2_oracle(k: int, grid: int = 10**6) -> float:
    """Independent evaluation of :func:`max_plog2` by candidate enumeration.

    For ``k == 2`` a uniform grid with ``grid`` intervals on ``[0, 1]`` is
    added, followed by a golden-section polish around the best grid point.
    """
    best = max(c.value for c in kkt_candidates(k))
    if k == 2:
        x = np.linspace(0.0, 1.0, grid + 1)[1:-1]
        vals = x * np.log(x) ** 2 + (1 - x) * np.log1p(-x) ** 2
        i = int(np.argmax(vals))
        h = 1.0 / grid
        f = lambda t: _plog2(np.array([t, 1.0 - t]))
        t, val = golden_section_max(f, max(x[i] - h, 1e-15), min(x[i] + h, 1 - 1e-15), 1e-12)
        best = max(best, float(vals[i]), val)
    return best


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-8) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[lo, hi]``; endpoints are also compared."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    best_t, best_v = (c, fc) if fc >= fd else (d, fd)
    for t in (lo, hi):
        v = f(t)
        if v > best_v:
            best_t, best_v = t, v
    return best_t, best_v
