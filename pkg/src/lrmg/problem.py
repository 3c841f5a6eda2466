"""Benchmark problem assembly: KL field, chaos matrices and the grid hierarchy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chaos import ChaosBasis, StochasticMatrices, build_basis, build_matrices
from .fem import GridHierarchy, assemble_load, build_hierarchy
from .kl import CovarianceModel, KLExpansion, build_expansion
from .lowrank import FactoredMatrix
from .operator import TensorOperator

__all__ = ["StochasticProblem", "build_problem"]


@dataclass
class StochasticProblem:
    kl: KLExpansion
    basis: ChaosBasis
    stoch: StochasticMatrices
    grids: GridHierarchy
    f0: np.ndarray

    @property
    def m(self) -> int:
        return self.kl.m

    @property
    def operators(self) -> list:
        """One TensorOperator per grid, coarsest first."""
        G = self.stoch.all
        return [TensorOperator(K, G) for K in self.grids.K]

    @property
    def n_x(self) -> int:
        return self.grids.finest.n_interior

    @property
    def n_xi(self) -> int:
        return self.basis.size

    def rhs_factored(self) -> FactoredMatrix:
        return FactoredMatrix.outer(self.f0, self.stoch.g0)

    def rhs_dense(self) -> np.ndarray:
        return np.outer(self.f0, self.stoch.g0)


def build_problem(cov: CovarianceModel, level: int, p: int, m: int | None = None,
                  coarsest_level: int = 2, kl: KLExpansion | None = None) -> StochasticProblem:
    """Assemble the benchmark on D = (-1,1)^2 with f = 1 and finest mesh size 2^-level.

    ``m=None`` picks the KL length by the 95% eigenvalue-mass rule. A
    prebuilt ``kl`` skips the eigensolve.
    """
    if kl is None:
        kl = build_expansion(cov, m)
    elif m is not None:
        kl = kl.truncated(m)
    if kl.m == 0:
        raise ValueError("need at least one random variable (m >= 1)")
    basis = build_basis(kl.m, p)
    stoch = build_matrices(basis)
    grids = build_hierarchy(level, kl, coarsest_level)
    return StochasticProblem(kl, basis, stoch, grids, assemble_load(grids.finest))
