"""Operator-algebra core.

Hermitian operators and density matrices, spectral measures, tensor powers,
PVM/POVM algebra (refinement, joint measurement, pinching), relative
entropies and the pinching inequalities the testing pipeline relies on.

A PVM cell is stored as an isometry ``V`` (orthonormal columns spanning the
cell), so the projector is ``V V^dagger``.  This keeps the memory of a PVM
at ``dim^2`` numbers however many cells it has.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

from .spectrum import FiniteDistribution, kl_divergence

TAU_HERM = 1e-9
TAU_PROJ = 1e-9
TAU_PSD = 1e-10
TAU_TRACE = 1e-9
REJECT_FACTOR = 1e6
DEFAULT_DIM_BUDGET = 4096
DEGENERACY_REL_TOL = 1e-8


class DimensionBudgetError(ValueError):
    """Raised before building an operator larger than the dimension budget."""


class HypothesisError(ValueError):
    """A documented precondition of an inequality does not hold."""


class NotProjectiveError(ValueError):
    pass


class CommutationError(ValueError):
    pass


class MatrixFormatError(ValueError):
    """Malformed matrix exchange document."""


def dim_budget(budget: int | None = None) -> int:
    if budget is not None:
        return int(budget)
    env = os.environ.get("STEIN_LAB_DIM_BUDGET")
    return int(env) if env else DEFAULT_DIM_BUDGET


def check_budget(dim: int, budget: int | None = None, what: str = "operator") -> None:
    limit = dim_budget(budget)
    if dim > limit:
        raise DimensionBudgetError(f"{what} dimension {dim} exceeds budget {limit}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _support_cutoff(evals: np.ndarray) -> float:
    # eigenvalues at or below this are numerical zeros
    scale = max(float(np.max(np.abs(evals))), 1.0) if evals.size else 1.0
    return max(TAU_PSD * 1e-2, 4 * evals.size * np.finfo(float).eps * scale)


class HermitianOperator:
    """Finite-dimensional self-adjoint matrix.

    The input is symmetrized as ``(X + X^dagger)/2``; it is rejected when the
    anti-Hermitian part exceeds ``REJECT_FACTOR * TAU_HERM`` (relative to the
    norm of ``X``).
    """

    def __init__(self, matrix: Any, *, _trusted: bool = False):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not _trusted:
            if not np.all(np.isfinite(m)):
                raise ValueError("matrix has non-finite entries")
            skew = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
            scale = max(1.0, float(np.max(np.abs(m))))
            if skew > REJECT_FACTOR * TAU_HERM * scale:
                raise ValueError(f"matrix is not Hermitian (max |X - X^dagger| = {skew:.3e})")
        m = (m + m.conj().T) / 2
        self._matrix = _freeze(m)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending eigenvalues and the matching orthonormal eigenvectors."""
        w, v = np.linalg.eigh(self._matrix)
        return _freeze(w), _freeze(v)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigh[0]

    def trace(self) -> float:
        return float(np.trace(self._matrix).real)

    def expectation(self, rho: "HermitianOperator | np.ndarray") -> float:
        other = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        return float(np.real(np.sum(self._matrix * other.T)))

    def apply(self, func) -> np.ndarray:
        w, v = self.eigh
        return (v * func(w)) @ v.conj().T

    def __array__(self, dtype=None, copy=None):
        return self._matrix if dtype is None else self._matrix.astype(dtype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


def _as_matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, HermitianOperator) else np.asarray(x, dtype=complex)


class DensityMatrix(HermitianOperator):
    """Positive semidefinite, unit-trace operator.

    Eigenvalues in ``[-REJECT_FACTOR*TAU_PSD, 0)`` are clamped to zero and a
    trace within ``REJECT_FACTOR*TAU_TRACE`` of one is renormalized.
    """

    def __init__(self, matrix: Any, *, _trusted: bool = False):
        super().__init__(matrix, _trusted=_trusted)
        if _trusted:
            return
        tr = self.trace()
        if abs(tr - 1.0) > REJECT_FACTOR * TAU_TRACE:
            raise ValueError(f"trace {tr!r} is not 1")
        w, v = self.eigh
        if w[0] < -REJECT_FACTOR * TAU_PSD:
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
        if w[0] < 0:
            w = np.clip(w, 0.0, None)
            w = w / w.sum()
            m = (v * w) @ v.conj().T
            self._matrix = _freeze((m + m.conj().T) / 2)
            self.__dict__["eigh"] = (_freeze(w), v)
        elif tr != 1.0:
            self._matrix = _freeze(self._matrix / tr)
            self.__dict__["eigh"] = (_freeze(w / tr), v)

    @classmethod
    def _wrap(cls, matrix: np.ndarray) -> "DensityMatrix":
        return cls(matrix, _trusted=True)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls._wrap(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def pure(cls, vector: Sequence[complex]) -> "DensityMatrix":
        psi = np.asarray(vector, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls._wrap(np.outer(psi, psi.conj()))

    @classmethod
    def diagonal(cls, probs: Sequence[float]) -> "DensityMatrix":
        return cls(np.diag(np.asarray(probs, dtype=float)))

    def support_rank(self) -> int:
        w = self.eigenvalues
        return int(np.sum(w > _support_cutoff(w)))

    def is_full_rank(self) -> bool:
        return self.support_rank() == self.dim


class TestOperator(HermitianOperator):
    """Operator ``A`` with ``0 <= A <= I`` (spectrum clamped into ``[0, 1]``)."""

    __test__ = False  # not a pytest class

    def __init__(self, matrix: Any, *, _trusted: bool = False):
        super().__init__(matrix, _trusted=_trusted)
        if _trusted:
            return
        w, v = self.eigh
        slack = REJECT_FACTOR * TAU_PSD
        if w[0] < -slack or w[-1] > 1.0 + slack:
            raise ValueError(f"spectrum [{w[0]:.3e}, {w[-1]:.3e}] not inside [0, 1]")
        if w[0] < 0 or w[-1] > 1:
            w = np.clip(w, 0.0, 1.0)
            self._matrix = _freeze((v * w) @ v.conj().T)
            self.__dict__["eigh"] = (_freeze(w), v)

    @classmethod
    def _wrap(cls, matrix: np.ndarray) -> "TestOperator":
        return cls(matrix, _trusted=True)


# ---------------------------------------------------------------- measurements


class Pvm:
    """Projection-valued measure given by labeled orthonormal cell bases.

    Parameters
    ----------
    cells : iterable of (label, isometry)
        Each isometry is a ``dim x rank`` matrix with orthonormal columns.
        Cells must be mutually orthogonal and their ranks must add to ``dim``.
    validate : bool
        Check isometry, orthogonality and completeness within ``TAU_PROJ``.
    """

    def __init__(self, cells: Iterable[tuple[Hashable, np.ndarray]], *, validate: bool = True):
        labels, bases = [], []
        for label, basis in cells:
            b = np.asarray(basis, dtype=complex)
            if b.ndim == 1:
                b = b[:, None]
            if b.shape[1] == 0:
                continue
            labels.append(label)
            bases.append(_freeze(b))
        if not bases:
            raise ValueError("a PVM needs at least one non-zero cell")
        dims = {b.shape[0] for b in bases}
        if len(dims) != 1:
            raise ValueError(f"cells live on different dimensions {sorted(dims)}")
        if len(set(labels)) != len(labels):
            raise ValueError("cell labels must be distinct")
        self.labels: tuple = tuple(labels)
        self.bases: tuple[np.ndarray, ...] = tuple(bases)
        if validate:
            self.validate()

    @classmethod
    def from_projectors(cls, cells: Iterable[tuple[Hashable, np.ndarray]], *,
                        tol: float = TAU_PROJ) -> "Pvm":
        out = []
        for label, proj in cells:
            p = _as_matrix(proj)
            if np.max(np.abs(p @ p - p)) > tol * max(1, p.shape[0]):
                raise NotProjectiveError(f"cell {label!r} is not a projector")
            w, v = np.linalg.eigh((p + p.conj().T) / 2)
            out.append((label, v[:, w > 0.5]))
        return cls(out)

    @classmethod
    def computational(cls, dim: int) -> "Pvm":
        eye = np.eye(dim, dtype=complex)
        return cls([(i, eye[:, i]) for i in range(dim)], validate=False)

    @classmethod
    def from_basis(cls, unitary: np.ndarray, labels: Sequence | None = None) -> "Pvm":
        u = np.asarray(unitary, dtype=complex)
        labels = range(u.shape[1]) if labels is None else labels
        return cls([(lab, u[:, i]) for i, lab in enumerate(labels)])

    @classmethod
    def trivial(cls, dim: int) -> "Pvm":
        return cls([("I", np.eye(dim, dtype=complex))], validate=False)

    def validate(self, tol: float = TAU_PROJ) -> None:
        stacked = np.concatenate(self.bases, axis=1)
        if stacked.shape[1] != self.dim:
            raise ValueError(f"cell ranks add to {stacked.shape[1]}, not {self.dim}")
        gram = stacked.conj().T @ stacked
        err = np.max(np.abs(gram - np.eye(self.dim)))
        if err > tol * max(1.0, math.sqrt(self.dim)):
            raise ValueError(f"cells are not orthonormal and complete (error {err:.3e})")

    @property
    def dim(self) -> int:
        return self.bases[0].shape[0]

    def __len__(self) -> int:
        return len(self.bases)

    def __iter__(self):
        return iter(zip(self.labels, self.bases))

    def __repr__(self) -> str:
        return f"Pvm(dim={self.dim}, cells={len(self)}, w={self.w})"

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.bases)

    @property
    def w(self) -> int:
        """Largest cell rank."""
        return max(self.ranks)

    def projector(self, i: int) -> np.ndarray:
        b = self.bases[i]
        return b @ b.conj().T

    def projectors(self) -> list[np.ndarray]:
        return [self.projector(i) for i in range(len(self))]

    def cell(self, label: Hashable) -> np.ndarray:
        return self.projector(self.labels.index(label))

    def as_povm(self) -> "Povm":
        return Povm(list(zip(self.labels, self.projectors())), validate=False)

    def commutes_with(self, x, tol: float = TAU_PROJ) -> bool:
        """True iff ``x`` is block diagonal with respect to the cells."""
        m = _as_matrix(x)
        stacked = np.concatenate(self.bases, axis=1)
        blocks = stacked.conj().T @ m @ stacked
        edges = np.cumsum((0,) + self.ranks)
        mask = np.ones(blocks.shape, dtype=bool)
        for a, b in zip(edges[:-1], edges[1:]):
            mask[a:b, a:b] = False
        scale = max(1.0, float(np.max(np.abs(m))))
        return not mask.any() or float(np.max(np.abs(blocks[mask]))) <= tol * scale

    def same_cells(self, other: "Pvm", tol: float = TAU_PROJ) -> bool:
        """Whether both PVMs consist of the same projectors (labels ignored)."""
        if self.dim != other.dim or sorted(self.ranks) != sorted(other.ranks):
            return False
        overlap = _overlaps(self, other)
        for i, r in enumerate(self.ranks):
            j = int(np.argmax(overlap[i]))
            if abs(overlap[i, j] - r) > tol * max(1, r) or other.ranks[j] != r:
                return False
        return True


class Povm:
    """Labeled positive operators summing to the identity."""

    def __init__(self, elements: Iterable[tuple[Hashable, Any]], *, validate: bool = True):
        labels, ops = [], []
        for label, op in elements:
            m = _as_matrix(op)
            labels.append(label)
            ops.append(_freeze((m + m.conj().T) / 2))
        if not ops:
            raise ValueError("empty POVM")
        if len(set(labels)) != len(labels):
            raise ValueError("element labels must be distinct")
        self.labels = tuple(labels)
        self.elements = tuple(ops)
        if validate:
            self.validate()

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    def __len__(self) -> int:
        return len(self.elements)

    def validate(self, tol: float = TAU_PROJ) -> None:
        for label, m in zip(self.labels, self.elements):
            if m.shape != (self.dim, self.dim):
                raise ValueError(f"element {label!r} has shape {m.shape}")
            if np.linalg.eigvalsh(m)[0] < -TAU_PSD * REJECT_FACTOR:
                raise ValueError(f"element {label!r} is not positive")
        err = np.max(np.abs(sum(self.elements) - np.eye(self.dim)))
        if err > tol * REJECT_FACTOR:
            raise ValueError(f"elements sum to identity only within {err:.3e}")

    def as_pvm(self, tol: float = TAU_PROJ) -> Pvm:
        return Pvm.from_projectors(zip(self.labels, self.elements), tol=tol)


def _overlaps(e: Pvm, f: Pvm) -> np.ndarray:
    """``Tr E_i F_j`` for all pairs."""
    fs = np.concatenate(f.bases, axis=1)
    edges = np.cumsum((0,) + f.ranks)
    out = np.empty((len(e), len(f)))
    for i, v in enumerate(e.bases):
        c = np.abs(fs.conj().T @ v) ** 2
        row = c.sum(axis=1)
        out[i] = np.add.reduceat(row, edges[:-1])
    return out


def _check_dims(*ops) -> int:
    dims = {o.dim for o in ops}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


# ---------------------------------------------------------------- tensor powers


def kron_power(matrix: np.ndarray, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return reduce(np.kron, [matrix] * n)


def tensor_power(rho: DensityMatrix, n: int, *, budget: int | None = None) -> DensityMatrix:
    """``rho^{(x)n}`` on the n-fold tensor space."""
    if n < 1:
        raise ValueError("n must be positive")
    check_budget(rho.dim**n, budget, "tensor power")
    if n == 1:
        return rho
    return DensityMatrix._wrap(kron_power(rho.matrix, n))


def local_log_sum(sigma: DensityMatrix, n: int, *, budget: int | None = None) -> HermitianOperator:
    """``sum_i I x .. x log(sigma) x .. x I`` (n sites), i.e. ``log(sigma^{(x)n})``."""
    check_budget(sigma.dim**n, budget, "local sum")
    if not sigma.is_full_rank():
        raise HypothesisError("sigma must be full rank")
    log_sigma = sigma.apply(np.log)
    k = sigma.dim
    total = np.zeros((k**n, k**n), dtype=complex)
    for site in range(n):
        left = np.eye(k**site)
        right = np.eye(k ** (n - site - 1))
        total += np.kron(np.kron(left, log_sigma), right)
    return HermitianOperator(total, _trusted=True)


# ---------------------------------------------------------------- spectra


def _cluster(evals: np.ndarray, tol: float) -> list[np.ndarray]:
    gaps = np.diff(evals)
    breaks = np.nonzero(gaps >= tol)[0] + 1 if tol > 0 else np.nonzero(gaps > 0)[0] + 1
    return np.split(np.arange(evals.size), breaks)


def pvm_from_eigensystem(evals: np.ndarray, evecs: np.ndarray,
                         degeneracy_tol: float | None = None) -> Pvm:
    """Group eigenvectors into cells of (numerically) equal eigenvalue."""
    evals = np.asarray(evals, dtype=float)
    order = np.argsort(evals, kind="stable")
    evals, evecs = evals[order], np.asarray(evecs)[:, order]
    if degeneracy_tol is None:
        degeneracy_tol = DEGENERACY_REL_TOL * float(evals[-1] - evals[0])
    groups = _cluster(evals, degeneracy_tol)
    return Pvm([(float(evals[g].mean()), evecs[:, g]) for g in groups], validate=False)


def spectral_pvm(x: HermitianOperator | np.ndarray, degeneracy_tol: float | None = None) -> Pvm:
    """Spectral measure ``E(X)``; cells labeled by their mean eigenvalue.

    The default clustering tolerance is ``1e-8`` times the spectral range.
    """
    op = x if isinstance(x, HermitianOperator) else HermitianOperator(x)
    w, v = op.eigh
    return pvm_from_eigensystem(w, v, degeneracy_tol)


def tensor_spectral_pvm(sigma: HermitianOperator, n: int, degeneracy_tol: float | None = None,
                        *, budget: int | None = None) -> Pvm:
    """``E(sigma^{(x)n})`` assembled from the single-site eigensystem.

    For a positive spectrum and no explicit tolerance, eigenvalues are grouped
    by their logarithms, so products far below the largest eigenvalue are not
    lumped together.
    """
    check_budget(sigma.dim**n, budget, "tensor power")
    w, v = sigma.eigh
    evecs = kron_power(v, n)
    if degeneracy_tol is None and w[0] > 0:
        logs = reduce(np.add.outer, [np.log(w)] * n).ravel() if n > 1 else np.log(w)
        order = np.argsort(logs, kind="stable")
        logs, evecs = logs[order], evecs[:, order]
        tol = DEGENERACY_REL_TOL * max(1.0, float(logs[-1] - logs[0]))
        groups = _cluster(logs, tol)
        return Pvm([(float(np.exp(logs[g].mean())), evecs[:, g]) for g in groups], validate=False)
    evals = reduce(np.multiply.outer, [w] * n).ravel() if n > 1 else w
    return pvm_from_eigensystem(evals, evecs, degeneracy_tol)


# ---------------------------------------------------------------- entropies


def _support_log(op: HermitianOperator) -> np.ndarray:
    w, v = op.eigh
    cut = _support_cutoff(w)
    logw = np.where(w > cut, np.log(np.where(w > cut, w, 1.0)), 0.0)
    return (v * logw) @ v.conj().T


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """``Tr rho (log rho - log sigma)``, or ``inf`` if supp(rho) is not in supp(sigma).

    Logarithms act on supports (``0 log 0 = 0``).  A support violation is
    declared when rho puts more than ``TAU_TRACE`` weight on the numerical
    kernel of sigma.
    """
    _check_dims(rho, sigma)
    p = rho.eigenvalues
    pos = p > _support_cutoff(p)
    neg_entropy = float(np.sum(p[pos] * np.log(p[pos])))
    q, v = sigma.eigh
    weights = np.real(np.sum(v.conj() * (rho.matrix @ v), axis=0))
    support = q > _support_cutoff(q)
    if weights[~support].sum() > TAU_TRACE:
        return math.inf
    cross = float(np.dot(weights[support], np.log(q[support])))
    return max(neg_entropy - cross, 0.0)


def entropy_moments(rho: DensityMatrix) -> tuple[float, float]:
    """``(Tr rho log rho, Tr rho (log rho)^2)``."""
    p = rho.eigenvalues
    p = p[p > _support_cutoff(p)]
    logs = np.log(p)
    return float(np.dot(p, logs)), float(np.dot(p, logs**2))


# ---------------------------------------------------------------- measurement maps


def _as_pvm(m: Pvm | Povm) -> Pvm:
    if isinstance(m, Pvm):
        return m
    if isinstance(m, Povm):
        try:
            return m.as_pvm()
        except NotProjectiveError:
            raise NotProjectiveError("pinching is defined for projective measurements only") from None
    raise TypeError(f"expected Pvm or Povm, got {type(m).__name__}")


def pinch_matrix(x: np.ndarray, pvm: Pvm) -> np.ndarray:
    out = np.zeros_like(x, dtype=complex)
    for v in pvm.bases:
        block = v.conj().T @ x @ v
        out += v @ block @ v.conj().T
    return (out + out.conj().T) / 2


def pinch(rho: DensityMatrix, m: Pvm | Povm) -> DensityMatrix:
    """``sum_i E_i rho E_i``; non-projective measurements are rejected."""
    pvm = _as_pvm(m)
    _check_dims(rho, pvm)
    return DensityMatrix._wrap(pinch_matrix(rho.matrix, pvm))


def cell_probabilities(rho: np.ndarray, pvm: Pvm) -> np.ndarray:
    stacked = np.concatenate(pvm.bases, axis=1)
    diag = np.real(np.sum(stacked.conj() * (rho @ stacked), axis=0))
    edges = np.cumsum((0,) + pvm.ranks)
    return np.add.reduceat(diag, edges[:-1])


def measured_distribution(rho: DensityMatrix, m: Pvm | Povm) -> FiniteDistribution:
    """Outcome distribution ``P(i) = Tr M_i rho``."""
    _check_dims(rho, m)
    if isinstance(m, Pvm):
        probs = cell_probabilities(rho.matrix, m)
    else:
        probs = np.array([np.real(np.sum(e * rho.matrix.T)) for e in m.elements])
    probs = np.clip(probs, 0.0, 1.0)
    total = probs.sum()
    if abs(total - 1.0) > TAU_TRACE * REJECT_FACTOR:
        raise ValueError(f"measurement probabilities sum to {total!r}")
    return FiniteDistribution(m.labels, probs / total)


def measured_relative_entropy(rho: DensityMatrix, sigma: DensityMatrix, m: Pvm | Povm) -> float:
    """``D(P_rho^M || P_sigma^M)``."""
    _check_dims(rho, sigma, m)
    return kl_divergence(measured_distribution(rho, m), measured_distribution(sigma, m))


# ---------------------------------------------------------------- PVM algebra


@dataclass(frozen=True)
class Refinement:
    """Outcome of :func:`is_refinement`; truthy when ``fine`` refines ``coarse``."""

    refines: bool
    mapping: dict | None = None

    def __bool__(self) -> bool:
        return self.refines


def is_refinement(coarse: Pvm, fine: Pvm, tol: float = TAU_PROJ) -> Refinement:
    """Whether every cell of ``coarse`` is a sum of cells of ``fine``.

    On success ``mapping`` sends each coarse label to the list of fine labels
    whose projectors add up to it.
    """
    _check_dims(coarse, fine)
    overlap = _overlaps(coarse, fine)
    mapping: dict = {label: [] for label in coarse.labels}
    for j, r in enumerate(fine.ranks):
        col = overlap[:, j]
        i = int(np.argmax(col))
        if abs(col[i] - r) > tol * max(1, r):
            return Refinement(False)
        mapping[coarse.labels[i]].append(fine.labels[j])
    for i, label in enumerate(coarse.labels):
        got = sum(fine.ranks[fine.labels.index(x)] for x in mapping[label])
        if got != coarse.ranks[i]:
            return Refinement(False)
    return Refinement(True, mapping)


def joint_pvm(e: Pvm, f: Pvm, tol: float = TAU_PROJ) -> Pvm:
    """Simultaneous measurement ``{F_j E_i}`` of two commuting PVMs.

    Cells are labeled ``(e_label, f_label)``; zero products are dropped.
    Raises :class:`CommutationError` if some ``E_i`` and ``F_j`` do not
    commute.
    """
    _check_dims(e, f)
    fs = np.concatenate(f.bases, axis=1)
    edges = np.cumsum((0,) + f.ranks)
    cells = []
    for e_label, v in zip(e.labels, e.bases):
        c = fs.conj().T @ v
        for j, f_label in enumerate(f.labels):
            block = c[edges[j]:edges[j + 1]]
            if not np.any(np.abs(block) > tol):
                continue
            g = block.conj().T @ block
            w, u = np.linalg.eigh(g)
            if np.max(np.minimum(np.abs(w), np.abs(1.0 - w))) > tol:
                raise CommutationError(f"cells {e_label!r} and {f_label!r} do not commute")
            keep = w > 0.5
            if keep.any():
                cells.append(((e_label, f_label), v @ u[:, keep]))
    out = Pvm(cells, validate=False)
    if sum(out.ranks) != e.dim:
        raise CommutationError("products of cells do not resolve the identity")
    return out


def rank_one_refinement(pvm: Pvm, state: HermitianOperator | np.ndarray) -> Pvm:
    """Split each cell into rank-one cells along the eigenbasis of the pinched state.

    Labels become ``(cell_label, index)``.  The pinched state is diagonal in
    the result, and any operator that is constant on each cell keeps its
    measured distribution.
    """
    m = _as_matrix(state)
    cells = []
    for label, v in pvm:
        block = v.conj().T @ m @ v
        _, u = np.linalg.eigh((block + block.conj().T) / 2)
        basis = v @ u
        cells.extend(((label, a), basis[:, a]) for a in range(basis.shape[1]))
    return Pvm(cells, validate=False)


# ---------------------------------------------------------------- pinching inequalities


def pinching_bound_margin(rho: DensityMatrix, m: Pvm, c: float) -> float:
    """Smallest eigenvalue of ``c * E_M(rho) - rho``.

    Non-negative for ``c`` at least the number of cells (in particular for
    ``c = dim``), and for ``c = w(E)`` when rho commutes with some ``E``
    refined by ``M``.
    """
    if c < 1:
        raise ValueError("c must be at least 1")
    pvm = _as_pvm(m)
    _check_dims(rho, pvm)
    gap = c * pinch_matrix(rho.matrix, pvm) - rho.matrix
    return float(np.linalg.eigvalsh((gap + gap.conj().T) / 2)[0])


def pinched_inverse_power_gap(rho: DensityMatrix, m: Pvm, w: float, t: float) -> float:
    """Largest eigenvalue of ``E_M(rho)^{-t} - w^t rho^{-t}`` for full-rank rho."""
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    if not rho.is_full_rank():
        raise HypothesisError("rho must be full rank")
    pvm = _as_pvm(m)
    pinched = HermitianOperator(pinch_matrix(rho.matrix, pvm), _trusted=True)
    lhs = pinched.apply(lambda x: x ** (-t))
    rhs = w**t * rho.apply(lambda x: x ** (-t))
    gap = lhs - rhs
    return float(np.linalg.eigvalsh((gap + gap.conj().T) / 2)[-1])


def pinched_log_variance_bound(w: int) -> float:
    """``4 (log w)^2``."""
    return 4.0 * math.log(w) ** 2


def pinched_log_variance(rho: DensityMatrix, e: Pvm, m: Pvm, *, tol: float = TAU_PROJ) -> float:
    """``Tr rho (log rho - log E_M(rho))^2``.

    Preconditions (checked, :class:`HypothesisError` otherwise): rho commutes
    with ``E``, ``M`` refines ``E``, ``w(E) >= 3`` and rho has full rank on
    every cell of ``E`` it charges.  The value is then at most
    ``4 (log w(E))^2``.
    """
    _check_dims(rho, e, m)
    if e.w < 3:
        raise HypothesisError(f"w(E) = {e.w} < 3")
    if not e.commutes_with(rho, tol):
        raise HypothesisError("rho does not commute with E")
    if not is_refinement(e, m, tol):
        raise HypothesisError("M does not refine E")
    for label, v in e:
        block = v.conj().T @ rho.matrix @ v
        bw = np.linalg.eigvalsh((block + block.conj().T) / 2)
        if bw.sum() > TAU_TRACE and bw[0] <= _support_cutoff(bw):
            raise HypothesisError(f"rho is not full rank on cell {label!r}")
    pinched = HermitianOperator(pinch_matrix(rho.matrix, m), _trusted=True)
    pw, pv = pinched.eigh
    kernel = pv[:, pw <= _support_cutoff(pw)]
    if kernel.size and np.real(np.trace(kernel.conj().T @ rho.matrix @ kernel)) > TAU_TRACE:
        raise HypothesisError("E_M(rho) vanishes on part of the support of rho")
    x = _support_log(rho) - _support_log(pinched)
    return float(np.real(np.sum(rho.matrix * (x @ x).T)))


# ---------------------------------------------------------------- exchange format


def operator_to_json(op: HermitianOperator | np.ndarray) -> dict:
    m = _as_matrix(op)
    return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}


def operator_from_json(doc: dict | str, *, source: str = "<matrix>", kind: type = HermitianOperator):
    """Parse ``{"dim": n, "re": [[..]], "im": [[..]]}`` into ``kind``.

    Errors name the offending field (and the line for JSON syntax errors).
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise MatrixFormatError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise MatrixFormatError(f"{source}: expected a JSON object")
    if "dim" not in doc or not isinstance(doc["dim"], int) or doc["dim"] < 1:
        raise MatrixFormatError(f"{source}: field 'dim' must be a positive integer")
    n = doc["dim"]
    parts = []
    for key in ("re", "im"):
        rows = doc.get(key, [[0.0] * n for _ in range(n)] if key == "im" else None)
        if not isinstance(rows, list) or len(rows) != n:
            raise MatrixFormatError(f"{source}: field '{key}' must be a list of {n} rows")
        for r, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != n:
                raise MatrixFormatError(f"{source}: field '{key}' row {r} must have {n} entries")
            for c, val in enumerate(row):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise MatrixFormatError(f"{source}: field '{key}'[{r}][{c}] is not a number")
        parts.append(np.array(rows, dtype=float))
    try:
        return kind(parts[0] + 1j * parts[1])
    except ValueError as exc:
        raise MatrixFormatError(f"{source}: {exc}") from None


def load_operator(path: str | os.PathLike, kind: type = DensityMatrix):
    with open(path) as fh:
        text = fh.read()
    return operator_from_json(text, source=str(path), kind=kind)
