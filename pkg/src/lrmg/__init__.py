"""Multigrid with low-rank truncation for stochastic Galerkin diffusion problems."""

from .kl import CovarianceKind, CovarianceModel, build_expansion, choose_m
from .lowrank import FactoredMatrix, truncate
from .operator import TensorOperator
from .problem import StochasticProblem, build_problem
from .solver import MGConfig, MultigridHierarchy, SmootherConfig, solve_full, solve_lowrank

__version__ = "0.1.0"

__all__ = [
    "CovarianceKind", "CovarianceModel", "build_expansion", "choose_m", "FactoredMatrix", "truncate",
    "TensorOperator", "StochasticProblem", "build_problem", "MGConfig", "MultigridHierarchy",
    "SmootherConfig", "solve_full", "solve_lowrank",
]
