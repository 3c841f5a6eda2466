"""The stochastic Galerkin operator A = sum_l G_l kron K_l.

Unknowns are matricized column-major: ``vec`` stacks the columns of the
N_x x N_xi matrix U, so (G kron K) vec(U) = vec(K U G^T).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lowrank import FactoredMatrix

__all__ = [
    "TensorOperator",
    "vec",
    "mat",
    "apply_dense",
    "apply_factored",
    "assemble_kronecker",
    "residual_dense",
    "residual_factored",
    "CoarseSolver",
    "KroneckerCapExceeded",
    "DEFAULT_KRONECKER_CAP",
]

DEFAULT_KRONECKER_CAP = 200_000


class KroneckerCapExceeded(ValueError):
    pass


def vec(U: np.ndarray) -> np.ndarray:
    return np.asarray(U).ravel(order="F")


def mat(u: np.ndarray, n_rows: int) -> np.ndarray:
    return np.asarray(u).reshape(n_rows, -1, order="F")


class TensorOperator:
    """Pairs of spatial matrices K_l and stochastic matrices G_l (G_0 first)."""

    def __init__(self, K: Sequence, G: Sequence):
        if len(K) != len(G):
            raise ValueError(f"got {len(K)} spatial and {len(G)} stochastic matrices")
        if not K:
            raise ValueError("operator needs at least one term")
        self.K = [sp.csr_matrix(k) for k in K]
        self.G = [sp.csr_matrix(g) for g in G]
        nx = self.K[0].shape
        nxi = self.G[0].shape
        if any(k.shape != nx for k in self.K) or nx[0] != nx[1]:
            raise ValueError("spatial matrices must be square and share one shape")
        if any(g.shape != nxi for g in self.G) or nxi[0] != nxi[1]:
            raise ValueError("stochastic matrices must be square and share one shape")
        self._diag = None

    @property
    def n_x(self) -> int:
        return self.K[0].shape[0]

    @property
    def n_xi(self) -> int:
        return self.G[0].shape[0]

    @property
    def shape(self):
        return (self.n_x, self.n_xi)

    @property
    def diag_K0(self) -> np.ndarray:
        if self._diag is None:
            self._diag = self.K[0].diagonal()
        return self._diag

    def __len__(self):
        return len(self.K)

    def __call__(self, U):
        if isinstance(U, FactoredMatrix):
            return apply_factored(self, U)
        return apply_dense(self, U)


def apply_dense(op: TensorOperator, U: np.ndarray) -> np.ndarray:
    """K_0 U G_0^T + sum_l K_l U G_l^T."""
    U = np.asarray(U, dtype=float)
    if U.shape != op.shape:
        raise ValueError(f"expected shape {op.shape}, got {U.shape}")
    out = np.zeros(op.shape)
    for K, G in zip(op.K, op.G):
        if K.nnz == 0 or G.nnz == 0:
            continue
        KU = K @ U
        # (K U) G^T computed as (G (K U)^T)^T keeps the sparse factor on the left
        out += (G @ KU.T).T
    return out


def apply_factored(op: TensorOperator, X: FactoredMatrix) -> FactoredMatrix:
    """[K_0 V, ..., K_m V] [G_0 W, ..., G_m W]^T; the rank grows to (m+1) k."""
    if X.shape != op.shape:
        raise ValueError(f"expected shape {op.shape}, got {X.shape}")
    V = np.hstack([K @ X.V for K in op.K])
    W = np.hstack([G @ X.W for G in op.G])
    return FactoredMatrix(V, W)


def assemble_kronecker(op: TensorOperator, cap: int | None = DEFAULT_KRONECKER_CAP) -> sp.csr_matrix:
    n = op.n_x * op.n_xi
    if cap is not None and n > cap:
        raise KroneckerCapExceeded(
            f"assembled system would have {n} unknowns (cap {cap}); "
            "use a coarser coarsest level / deeper grid hierarchy"
        )
    A = sp.csr_matrix((n, n))
    for K, G in zip(op.K, op.G):
        A = A + sp.kron(G, K, format="csr")
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def residual_dense(op: TensorOperator, U: np.ndarray, F: np.ndarray) -> np.ndarray:
    return np.asarray(F, dtype=float) - apply_dense(op, U)


def residual_factored(op: TensorOperator, X: FactoredMatrix, F: FactoredMatrix) -> FactoredMatrix:
    return F - apply_factored(op, X)


class CoarseSolver:
    """Sparse direct solve of the assembled Kronecker system, factored once."""

    def __init__(self, op: TensorOperator, cap: int | None = DEFAULT_KRONECKER_CAP):
        self.op = op
        A = assemble_kronecker(op, cap).tocsc()
        # symmetric ordering and no pivoting: A is SPD
        self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})

    def solve(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return mat(self._lu.solve(vec(F)), self.op.n_x)
