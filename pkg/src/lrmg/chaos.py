"""Total-degree Legendre chaos and its Galerkin matrices.

The basis is orthonormal with respect to the uniform density on [-1, 1]^m, so
G_0 = I and g_0 = e_1. Each G_l couples multi-indices that differ by one in
coordinate l, with entry beta_n = n / sqrt(4 n^2 - 1) from the normalized
Legendre recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ChaosBasis",
    "StochasticMatrices",
    "build_basis",
    "build_matrices",
    "legendre_beta",
    "orthonormal_legendre",
    "triple_product_oracle",
]

MAX_BASIS_SIZE = 10**7


@dataclass(frozen=True)
class ChaosBasis:
    m: int
    p: int
    indices: tuple  # tuple of m-tuples, graded lexicographic

    def __len__(self):
        return len(self.indices)

    @property
    def size(self) -> int:
        return len(self.indices)

    def position(self) -> dict:
        return {idx: r for r, idx in enumerate(self.indices)}


@dataclass(frozen=True)
class StochasticMatrices:
    G0: sp.csr_matrix
    Gl: tuple  # m sparse matrices
    g0: np.ndarray

    @property
    def all(self) -> list:
        """[G_0, G_1, ..., G_m]"""
        return [self.G0, *self.Gl]


def _graded_indices(m: int, p: int):
    # within a degree, descending lexicographic: (1,0,..) precedes (0,1,..)
    for degree in range(p + 1):
        yield from _compositions(degree, m)


def _compositions(total: int, parts: int):
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            out.append((first, *rest))
    return out


def build_basis(m: int, p: int) -> ChaosBasis:
    """Multi-indices of total degree <= p in m variables, grouped by degree."""
    if m < 1 or p < 0:
        raise ValueError(f"need m >= 1 and p >= 0, got m={m}, p={p}")
    n = comb(m + p, p)
    if n > MAX_BASIS_SIZE:
        raise OverflowError(f"chaos basis of size {n} exceeds {MAX_BASIS_SIZE}")
    indices = tuple(_graded_indices(m, p))
    assert len(indices) == n
    return ChaosBasis(m, p, indices)


def legendre_beta(n):
    """Recurrence coefficient of orthonormal Legendre: xi p_n = beta_{n+1} p_{n+1} + beta_n p_{n-1}."""
    n = np.asarray(n, dtype=float)
    return n / np.sqrt(4.0 * n**2 - 1.0)


def build_matrices(basis: ChaosBasis) -> StochasticMatrices:
    N = basis.size
    pos = basis.position()
    Gl = []
    for l in range(basis.m):
        rows, cols, vals = [], [], []
        for r, idx in enumerate(basis.indices):
            if sum(idx) == basis.p:
                continue
            up = idx[:l] + (idx[l] + 1,) + idx[l + 1:]
            s = pos[up]
            beta = float(legendre_beta(idx[l] + 1))
            rows += [r, s]
            cols += [s, r]
            vals += [beta, beta]
        Gl.append(sp.csr_matrix((vals, (rows, cols)), shape=(N, N)))
    g0 = np.zeros(N)
    g0[0] = 1.0
    return StochasticMatrices(sp.identity(N, format="csr"), tuple(Gl), g0)


def orthonormal_legendre(n: int, x: np.ndarray) -> np.ndarray:
    """Values of the degree-n Legendre polynomial normalized for the density 1/2 on [-1, 1]."""
    c = np.zeros(n + 1)
    c[n] = 1.0
    return np.sqrt(2 * n + 1) * np.polynomial.legendre.legval(x, c)


def triple_product_oracle(basis: ChaosBasis, l: int | None, r: int, s: int,
                          quad_points: int | None = None) -> float:
    """<xi_l psi_r psi_s> by tensorized Gauss-Legendre quadrature.

    ``l=None`` drops the xi factor and returns <psi_r psi_s>. Only the
    coordinates where either index is nonzero (or coordinate l) are
    integrated; the rest contribute a factor of one.
    """
    if quad_points is None:
        quad_points = basis.p + 2
    x, w = np.polynomial.legendre.leggauss(quad_points)
    w = w / 2.0
    a, b = basis.indices[r], basis.indices[s]
    value = 1.0
    for d in range(basis.m):
        if a[d] == 0 and b[d] == 0 and d != l:
            continue
        f = orthonormal_legendre(a[d], x) * orthonormal_legendre(b[d], x)
        if d == l:
            f = f * x
        value *= float(np.dot(w, f))
    return value
