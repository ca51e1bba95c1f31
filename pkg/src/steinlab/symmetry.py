"""Schur-Weyl machinery for ``(C^k)^{(x)n}``.

Partitions and symmetric-group characters (Murnaghan-Nakayama), the
isotypic decomposition of the n-fold tensor space into joint
``S_n x SL(k)`` irreducibles, the qubit total-spin construction of the same
PVM, and the measurement that refines it by the spectrum of ``sigma^{(x)n}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .opcore import (
    DensityMatrix,
    DimensionBudgetError,
    HypothesisError,
    Pvm,
    check_budget,
    joint_pvm,
    tensor_spectral_pvm,
)

DEFAULT_MAX_N_FACTORIAL = 8


@dataclass(frozen=True, order=True)
class Partition:
    """Non-increasing tuple of positive integers."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(x) for x in self.parts)
        if any(x <= 0 for x in parts):
            raise ValueError(f"parts must be positive: {parts}")
        if any(a < b for a, b in zip(parts, parts[1:])):
            raise ValueError(f"parts must be non-increasing: {parts}")
        object.__setattr__(self, "parts", parts)

    @property
    def n(self) -> int:
        return sum(self.parts)

    @property
    def rows(self) -> int:
        return len(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.parts)) + ")"

    @classmethod
    def parse(cls, text: str) -> "Partition":
        return cls(tuple(int(x) for x in text.strip("() ").split(",") if x.strip()))


def _as_parts(p) -> tuple[int, ...]:
    return p.parts if isinstance(p, Partition) else tuple(int(x) for x in p)


def partitions_of(n: int, max_rows: int | None = None) -> list[Partition]:
    """Partitions of ``n`` with at most ``max_rows`` rows, lexicographically decreasing."""
    if n < 1:
        raise ValueError("n must be positive")
    rows = n if max_rows is None else max_rows

    def gen(remaining, largest, depth):
        if remaining == 0:
            yield ()
            return
        if depth == 0:
            return
        for first in range(min(remaining, largest), 0, -1):
            for rest in gen(remaining - first, first, depth - 1):
                yield (first,) + rest

    return [Partition(p) for p in gen(n, n, rows)]


@lru_cache(maxsize=None)
def _mn(shape: tuple[int, ...], cycles: tuple[int, ...]) -> int:
    if not cycles:
        return 1
    r, rest = cycles[0], cycles[1:]
    # beta-set of the shape: removing an r-rim hook moves one bead down by r
    length = len(shape)
    beta = [shape[i] + length - 1 - i for i in range(length)]
    beads = set(beta)
    total = 0
    for b in beta:
        target = b - r
        if target < 0 or target in beads:
            continue
        sign = (-1) ** sum(1 for c in beads if target < c < b)
        new = sorted((beads - {b}) | {target}, reverse=True)
        parts = tuple(x - (length - 1 - i) for i, x in enumerate(new))
        total += sign * _mn(tuple(x for x in parts if x > 0), rest)
    return total


def sn_character(shape, cycle_type) -> int:
    """Character of the ``S_n`` irrep ``shape`` on the class ``cycle_type``."""
    lam, mu = _as_parts(shape), tuple(sorted(_as_parts(cycle_type), reverse=True))
    if sum(lam) != sum(mu):
        raise ValueError(f"{lam} and {mu} partition different integers")
    return _mn(lam, mu)


def class_size(cycle_type) -> int:
    mu = _as_parts(cycle_type)
    z = 1
    for part, mult in _multiplicities(mu).items():
        z *= part**mult * math.factorial(mult)
    return math.factorial(sum(mu)) // z


def _multiplicities(mu) -> dict[int, int]:
    out: dict[int, int] = {}
    for x in mu:
        out[x] = out.get(x, 0) + 1
    return out


def hook_length_dim(shape) -> int:
    """Dimension of the ``S_n`` irrep (hook-length formula, exact)."""
    lam = _as_parts(shape)
    conj = [sum(1 for x in lam if x > j) for j in range(lam[0])] if lam else []
    hooks = 1
    for i, row in enumerate(lam):
        for j in range(row):
            hooks *= (row - j - 1) + (conj[j] - i - 1) + 1
    return math.factorial(sum(lam)) // hooks


def sl_dim(shape, k: int) -> int:
    """Dimension of the ``SL(k)`` irrep with highest weight ``shape`` (Weyl formula)."""
    lam = list(_as_parts(shape))
    if len(lam) > k:
        return 0
    lam += [0] * (k - len(lam))
    num = den = 1
    for i in range(k):
        for j in range(i + 1, k):
            num *= lam[i] - lam[j] + j - i
            den *= j - i
    return num // den


def repeated_combination(k: int, n: int) -> int:
    """Number of multisets of size ``n`` from ``k`` kinds, ``C(n+k-1, k-1)``."""
    return math.comb(n + k - 1, k - 1)


def cycle_type(perm) -> tuple[int, ...]:
    seen = [False] * len(perm)
    lengths = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        length, j = 0, start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        lengths.append(length)
    return tuple(sorted(lengths, reverse=True))


def permutation_action(perm, k: int) -> np.ndarray:
    """Index map of the operator permuting tensor factors.

    ``U |i_1 .. i_n> = |i_{perm[0]} .. i_{perm[n-1]}>``, returned as the array
    ``idx`` with ``(U psi)[a] = psi[idx[a]]``.
    """
    n = len(perm)
    return np.arange(k**n).reshape((k,) * n).transpose(np.argsort(perm)).ravel()


@dataclass(frozen=True)
class SchurComponent:
    partition: Partition
    projector: np.ndarray
    sn_dim: int
    sl_dim: int

    @property
    def rank(self) -> int:
        return self.sn_dim * self.sl_dim


@dataclass(frozen=True)
class SchurDecomposition:
    """Isotypic decomposition of ``(C^k)^{(x)n}``; ``pvm`` cells are labeled by partition."""

    n: int
    k: int
    components: tuple[SchurComponent, ...]
    pvm: Pvm

    @property
    def w(self) -> int:
        return self.pvm.w

    def component(self, shape) -> SchurComponent:
        key = Partition(_as_parts(shape))
        for c in self.components:
            if c.partition == key:
                return c
        raise KeyError(key)


@lru_cache(maxsize=2)
def _permutation_table(n: int, k: int):
    perms = list(itertools.permutations(range(n)))
    types = [cycle_type(p) for p in perms]
    dim = k**n
    rows = np.arange(dim)
    flat = np.empty((len(perms), dim), dtype=np.int64)
    for i, p in enumerate(perms):
        flat[i] = rows * dim + permutation_action(p, k)
    return types, flat


def isotypic_pvm(n: int, k: int, *, budget: int | None = None,
                 max_n: int = DEFAULT_MAX_N_FACTORIAL) -> SchurDecomposition:
    """Central-character projectors ``P_l = (d_l/n!) sum_pi chi_l(pi) U_pi``.

    Only partitions with at most ``k`` rows survive.  The sum over ``S_n`` is
    accumulated by index scattering, so no permutation matrix is formed.
    """
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    if n > max_n:
        raise DimensionBudgetError(f"n = {n} exceeds the factorial budget {max_n}")
    dim = k**n
    check_budget(dim, budget, "isotypic decomposition")
    types, flat = _permutation_table(n, k)
    nfact = math.factorial(n)
    components, cells = [], []
    for lam in partitions_of(n, k):
        d = hook_length_dim(lam)
        chi = {mu: sn_character(lam, mu) for mu in set(types)}
        weights = np.repeat(np.array([chi[t] for t in types], dtype=float), dim)
        summed = np.bincount(flat.ravel(), weights=weights, minlength=dim * dim)
        proj = summed.reshape(dim, dim) * (d / nfact)
        proj = (proj + proj.T) / 2
        proj.setflags(write=False)
        sdim = sl_dim(lam, k)
        w, v = np.linalg.eigh(proj)
        basis = v[:, w > 0.5]
        if basis.shape[1] != d * sdim:
            raise ArithmeticError(f"rank of P{lam} is {basis.shape[1]}, expected {d * sdim}")
        components.append(SchurComponent(lam, proj, d, sdim))
        cells.append((lam, basis.astype(complex)))
    return SchurDecomposition(n, k, tuple(components), Pvm(cells))


# ---------------------------------------------------------------- qubits


class SpinBlock(NamedTuple):
    j: Fraction
    block_dim: int
    multiplicity: int


def qubit_spin_blocks(n: int) -> list[SpinBlock]:
    """Total-spin sectors of ``n`` spin-1/2 sites, largest ``j`` first.

    Multiplicities follow the coupling ladder
    ``m(n, j) = m(n-1, j-1/2) + m(n-1, j+1/2)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    half = Fraction(1, 2)
    mult = {half: 1}
    for _ in range(n - 1):
        nxt: dict[Fraction, int] = {}
        for j, m in mult.items():
            for jj in (j + half, j - half):
                if jj >= 0:
                    nxt[jj] = nxt.get(jj, 0) + m
        mult = nxt
    return [SpinBlock(j, int(2 * j + 1), mult[j]) for j in sorted(mult, reverse=True)]


def spin_label(casimir: float) -> Fraction:
    """``j`` from the eigenvalue ``j(j+1)`` of ``J^2``."""
    j = (-1.0 + math.sqrt(1.0 + 4.0 * max(casimir, 0.0))) / 2.0
    return Fraction(round(2 * j), 2)


def total_spin_casimir(n: int) -> np.ndarray:
    """``J^2 = Jz^2 + (J+ J- + J- J+)/2`` on ``n`` qubits (real, dense).

    Basis index bit ``n-1-i`` is site ``i``; ``|0>`` is spin up.
    """
    dim = 2**n
    idx = np.arange(dim)
    bits = (idx[:, None] >> np.arange(n)[None, :]) & 1
    jz = (n - 2 * bits.sum(axis=1)) / 2.0
    # J^2 = Jz^2 + n/2 + sum_{a<b} (S+_a S-_b + S-_a S+_b)
    cas = np.diag(jz**2 + n / 2.0)
    for a in range(n):
        for b in range(a + 1, n):
            src = idx[bits[:, a] != bits[:, b]]
            cas[src ^ ((1 << a) | (1 << b)), src] += 1.0
    return cas


@lru_cache(maxsize=16)
def total_spin_pvm(n: int, *, budget: int | None = None) -> Pvm:
    """Eigenspaces of the total-spin Casimir, labeled by ``j``.

    ``J^2`` conserves ``Jz`` so it is diagonalized one magnetization sector
    at a time.
    """
    dim = 2**n
    check_budget(dim, budget, "total spin")
    cas = total_spin_casimir(n)
    weight = np.array([bin(i).count("1") for i in range(dim)])
    evals, evecs = [], []
    for w in range(n + 1):
        sector = np.nonzero(weight == w)[0]
        vals, vecs = np.linalg.eigh(cas[np.ix_(sector, sector)])
        full = np.zeros((dim, sector.size))
        full[sector] = vecs
        evals.append(vals)
        evecs.append(full)
    evals = np.concatenate(evals)
    evecs = np.concatenate(evecs, axis=1)
    labels = np.array([spin_label(x) for x in evals], dtype=object)
    cells = []
    for j in sorted(set(labels), reverse=True):
        cells.append((j, evecs[:, labels == j].astype(complex)))
    return Pvm(cells)


def schur_pvm(n: int, k: int, *, budget: int | None = None) -> Pvm:
    """The isotypic PVM, via total spin for qubits."""
    if k == 2:
        return total_spin_pvm(n, budget=budget)
    return isotypic_pvm(n, k, budget=budget).pvm


class SteinCellLabel(NamedTuple):
    sector: object
    sigma_eigenvalue: float


def stein_pvm(sigma: DensityMatrix, n: int, *, budget: int | None = None,
              degeneracy_tol: float | None = None) -> Pvm:
    """Joint measurement of the isotypic PVM and the spectral PVM of ``sigma^{(x)n}``.

    Cells are labeled ``(sector, sigma_eigenvalue)`` where ``sector`` is the
    spin ``j`` for qubits and the partition otherwise.
    """
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    k = sigma.dim
    check_budget(k**n, budget, "Stein PVM")
    sectors = schur_pvm(n, k, budget=budget)
    spectral = tensor_spectral_pvm(sigma, n, degeneracy_tol, budget=budget)
    joint = joint_pvm(sectors, spectral)
    return Pvm([(SteinCellLabel(*label), basis) for label, basis in joint], validate=False)
