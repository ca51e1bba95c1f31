"""Seeded random instances: states, unitaries and measurements."""

from __future__ import annotations

import numpy as np

from .opcore import DensityMatrix, HermitianOperator, Povm, Pvm


def ginibre(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar unitary (QR of a Ginibre matrix with phase correction)."""
    q, r = np.linalg.qr(ginibre(rng, dim, dim))
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_density(rng: np.random.Generator, dim: int, rank: int | None = None) -> DensityMatrix:
    """Induced-measure state ``G G^dagger / Tr`` with ``G`` of shape ``dim x rank``."""
    g = ginibre(rng, dim, dim if rank is None else rank)
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def random_full_rank_density(rng: np.random.Generator, dim: int, floor: float = 1e-3) -> DensityMatrix:
    """Random state whose smallest eigenvalue is at least ``floor``."""
    rho = random_density(rng, dim).matrix
    return DensityMatrix((1 - dim * floor) * rho + floor * np.eye(dim))


def random_hermitian(rng: np.random.Generator, dim: int) -> HermitianOperator:
    g = ginibre(rng, dim, dim)
    return HermitianOperator((g + g.conj().T) / 2)


def random_rank_one_pvm(rng: np.random.Generator, dim: int) -> Pvm:
    return Pvm.from_basis(random_unitary(rng, dim))


def random_block_pvm(rng: np.random.Generator, ranks, basis: np.ndarray | None = None) -> Pvm:
    """PVM whose cells are consecutive column blocks of a (random) unitary."""
    dim = int(sum(ranks))
    u = random_unitary(rng, dim) if basis is None else np.asarray(basis, dtype=complex)
    edges = np.cumsum([0, *ranks])
    return Pvm([(i, u[:, a:b]) for i, (a, b) in enumerate(zip(edges[:-1], edges[1:]))])


def random_povm(rng: np.random.Generator, dim: int, outcomes: int | None = None) -> Povm:
    """``S^{-1/2} G_i S^{-1/2}`` with random positive ``G_i`` and ``S = sum_i G_i``."""
    m = outcomes if outcomes is not None else int(rng.integers(2, 2 * dim + 2))
    gs = []
    for i in range(m):
        # a full-rank first element keeps the sum invertible
        g = ginibre(rng, dim, dim if i == 0 else int(rng.integers(1, dim + 1)))
        gs.append(g @ g.conj().T)
    w, v = np.linalg.eigh(sum(gs))
    s = (v / np.sqrt(w)) @ v.conj().T
    return Povm([(i, s @ g @ s) for i, g in enumerate(gs)])


def commuting_pair(rng: np.random.Generator, dim: int):
    """Two full-rank states diagonal in a shared random basis."""
    u = random_unitary(rng, dim)
    p = rng.dirichlet(np.ones(dim)) * (1 - dim * 1e-3) + 1e-3
    q = rng.dirichlet(np.ones(dim)) * (1 - dim * 1e-3) + 1e-3
    rho = DensityMatrix((u * p) @ u.conj().T)
    sigma = DensityMatrix((u * q) @ u.conj().T)
    return rho, sigma
