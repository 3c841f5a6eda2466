"""Geometric multigrid for the stochastic Galerkin system.

Two drivers share one grid hierarchy:

* :func:`solve_full` iterates on dense N_x x N_xi matrices (no truncation);
* :func:`solve_lowrank` keeps every iterate as a factored matrix V W^T and
  truncates after each smoothing step, after the pre-smoothed residual, and
  after each outer update.

Both use damped Jacobi with D = I kron diag(K_0), V-cycles with bilinear
prolongation P and restriction P^T acting on the spatial side only, and a
sparse direct solve of the assembled Kronecker system on the coarsest grid.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lowrank as lr
from .lowrank import Absolute, FactoredMatrix, RelativeFraction, RelativeToNorm
from .operator import CoarseSolver, TensorOperator, apply_dense, apply_factored

__all__ = [
    "SmootherConfig",
    "MGConfig",
    "SolveReport",
    "MultigridHierarchy",
    "DivergenceError",
    "smooth_full",
    "smooth_lowrank",
    "vcycle_full",
    "vcycle_lowrank",
    "solve_full",
    "solve_lowrank",
    "spectral_radius_estimate",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class SmootherConfig:
    omega: float = 2.0 / 3.0
    nu_pre: int = 3
    nu_post: int = 3

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if self.nu_pre < 0 or self.nu_post < 0:
            raise ValueError("smoothing step counts must be nonnegative")


@dataclass(frozen=True)
class MGConfig:
    tol: float = 1e-6
    maxit: int = 30
    eps_rel: float = 1e-2
    eps_abs: float = 1e-6
    outer_truncation: str = "absolute"  # or "relative"
    smoother: SmootherConfig = field(default_factory=SmootherConfig)

    def __post_init__(self):
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.maxit < 0:
            raise ValueError("maxit must be nonnegative")
        if not 0 < self.eps_rel < 1:
            raise ValueError("eps_rel must lie in (0, 1)")
        if not self.eps_abs > 0:
            raise ValueError("eps_abs must be positive")
        if self.outer_truncation not in ("absolute", "relative"):
            raise ValueError("outer_truncation must be 'absolute' or 'relative'")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=lambda: [1.0])
    rank_history: list = field(default_factory=lambda: [0])
    truncated_residual_history: list = field(default_factory=list)
    residual_rank_history: list = field(default_factory=list)
    max_pre_truncation_rank: int = 0
    rank_warnings: int = 0
    final_rank: int = 0
    converged: bool = False
    stop_reason: str = ""
    wall_time: float = 0.0
    mode: str = ""

    @property
    def rel_residual(self) -> float:
        return self.residual_history[-1]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


class DivergenceError(RuntimeError):
    def __init__(self, message, report: SolveReport):
        super().__init__(message)
        self.report = report


class MultigridHierarchy:
    """Per-level operators (coarsest first), prolongations and mesh sizes.

    ``P[i]`` maps level ``i - 1`` to level ``i``. The coarse factorization
    is built on first use and cached.
    """

    def __init__(self, operators: Sequence[TensorOperator], P: Sequence, h: Sequence[float],
                 kronecker_cap: Optional[int] = None):
        if len(operators) != len(P) or len(P) != len(h):
            raise ValueError("operators, prolongations and mesh sizes must align")
        if not operators:
            raise ValueError("hierarchy is empty")
        self.operators = list(operators)
        self.P = list(P)
        self.h = list(h)
        self.kronecker_cap = kronecker_cap
        self._coarse: Optional[CoarseSolver] = None

    @classmethod
    def from_problem(cls, problem, **kw) -> "MultigridHierarchy":
        return cls(problem.operators, problem.grids.P, [g.h for g in problem.grids.grids], **kw)

    @property
    def finest(self) -> TensorOperator:
        return self.operators[-1]

    @property
    def coarse_solver(self) -> CoarseSolver:
        if self._coarse is None:
            kw = {} if self.kronecker_cap is None else {"cap": self.kronecker_cap}
            self._coarse = CoarseSolver(self.operators[0], **kw)
        return self._coarse

    def __len__(self):
        return len(self.operators)


# ---------------------------------------------------------------------------
# full-rank path


def smooth_full(op: TensorOperator, U: np.ndarray, F: np.ndarray, nu: int, omega: float) -> np.ndarray:
    """``nu`` damped Jacobi steps U <- U + omega D^-1 (F - A(U))."""
    inv_d = omega / op.diag_K0
    U = np.array(U, dtype=float, copy=True)
    for _ in range(nu):
        U += inv_d[:, None] * (F - apply_dense(op, U))
    return U


def vcycle_full(mg: MultigridHierarchy, U0: np.ndarray, F: np.ndarray,
                smoother: SmootherConfig = SmootherConfig(), level: Optional[int] = None) -> np.ndarray:
    if level is None:
        level = len(mg) - 1
    if level == 0:
        return mg.coarse_solver.solve(F)
    op = mg.operators[level]
    P = mg.P[level]
    U = smooth_full(op, U0, F, smoother.nu_pre, smoother.omega)
    R = F - apply_dense(op, U)
    Rc = P.T @ R
    Cc = vcycle_full(mg, np.zeros_like(Rc), Rc, smoother, level - 1)
    U = U + P @ Cc
    return smooth_full(op, U, F, smoother.nu_post, smoother.omega)


def solve_full(mg: MultigridHierarchy, F: np.ndarray, cfg: MGConfig = MGConfig(),
               callback=None):
    """Residual-correction iteration with one V-cycle per step.

    Returns ``(U, report)``. ``callback(i, C)`` receives each correction.
    """
    start = time.perf_counter()
    op = mg.finest
    F = np.asarray(F, dtype=float)
    U = np.zeros(op.shape)
    R = F.copy()
    r0 = float(np.linalg.norm(F))
    report = SolveReport(mode="full")
    report.rank_history = []
    r = r0
    i = 0
    while r > cfg.tol * r0 and i < cfg.maxit:
        C = vcycle_full(mg, np.zeros_like(R), R, cfg.smoother)
        if callback is not None:
            callback(i, C)
        U += C
        R = F - apply_dense(op, U)
        r = float(np.linalg.norm(R))
        i += 1
        report.residual_history.append(r / r0)
        log.debug("full iteration %d: rel residual %.3e", i, r / r0)
        if r > DIVERGENCE_FACTOR * r0:
            report.iterations = i
            report.stop_reason = "diverged"
            report.wall_time = time.perf_counter() - start
            raise DivergenceError(f"residual grew to {r / r0:.3e} of the initial residual", report)
    if r0 == 0:
        report.residual_history = [0.0]
    report.iterations = i
    report.converged = r <= cfg.tol * r0
    report.stop_reason = "tol" if report.converged else "maxit"
    report.wall_time = time.perf_counter() - start
    return U, report


# ---------------------------------------------------------------------------
# low-rank path


def _jacobi_factored(op: TensorOperator, X: FactoredMatrix, omega: float) -> FactoredMatrix:
    # S = I kron (omega D_0^-1): scales the spatial factor only
    return FactoredMatrix((omega / op.diag_K0)[:, None] * X.V, X.W)


class _Tracker:
    """Largest factored rank seen just before a truncation.

    Ranks above 2 N_xi void the sqrt(N_xi) eps_abs error estimate, so they
    are counted and logged.
    """

    def __init__(self):
        self.max_rank = 0
        self.rank_warnings = 0

    def truncate(self, X, crit, tag=""):
        self.max_rank = max(self.max_rank, X.rank)
        if X.rank > 2 * X.shape[1]:
            self.rank_warnings += 1
            if self.rank_warnings == 1:
                log.warning("%s truncation input rank %d exceeds 2 N_xi = %d (further cases counted only)",
                            tag, X.rank, 2 * X.shape[1])
        return lr.truncate(X, crit, tag)


_NULL_TRACKER = _Tracker()


def smooth_lowrank(op: TensorOperator, X: FactoredMatrix, F: FactoredMatrix, nu: int,
                   omega: float, crit, tracker: _Tracker = _NULL_TRACKER) -> FactoredMatrix:
    """``nu`` damped Jacobi steps in factored form, truncating after each with ``crit``."""
    for _ in range(nu):
        R = F - apply_factored(op, X)
        X = tracker.truncate(X + _jacobi_factored(op, R, omega), crit, "smooth")
    return X


def _coarse_factored(mg: MultigridHierarchy, F: FactoredMatrix) -> FactoredMatrix:
    U = mg.coarse_solver.solve(F.dense())
    left, s, right_t = np.linalg.svd(U, full_matrices=False)
    k = int(np.count_nonzero(s > s[0] * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
    return FactoredMatrix(left[:, :k], right_t[:k].T * s[:k])


def vcycle_lowrank(mg: MultigridHierarchy, X0: FactoredMatrix, F: FactoredMatrix,
                   cfg: MGConfig = MGConfig(), level: Optional[int] = None,
                   tracker: _Tracker = _NULL_TRACKER) -> FactoredMatrix:
    """V-cycle on factored iterates.

    Smoothing iterates are truncated to within eps_rel * ||F - A(X0)||_F and
    the pre-smoothed residual to within eps_rel * h * ||F - A(X0)||_F.
    """
    if level is None:
        level = len(mg) - 1
    if level == 0:
        return _coarse_factored(mg, F)
    op = mg.operators[level]
    P = mg.P[level]
    sm = cfg.smoother
    ref = lr.frobenius_norm(F - apply_factored(op, X0)) if X0.rank else lr.frobenius_norm(F)
    if ref == 0:
        return X0
    crit_smooth = RelativeToNorm(cfg.eps_rel, ref)
    crit_resid = RelativeToNorm(cfg.eps_rel * mg.h[level], ref)

    X = smooth_lowrank(op, X0, F, sm.nu_pre, sm.omega, crit_smooth, tracker)
    R = tracker.truncate(F - apply_factored(op, X), crit_resid, "residual")
    Rc = FactoredMatrix(P.T @ R.V, R.W)
    n_coarse = mg.operators[level - 1].n_x
    Cc = vcycle_lowrank(mg, FactoredMatrix.zeros(n_coarse, op.n_xi), Rc, cfg, level - 1, tracker)
    X = X + FactoredMatrix(P @ Cc.V, Cc.W)
    return smooth_lowrank(op, X, F, sm.nu_post, sm.omega, crit_smooth, tracker)


def _outer_truncate(X: FactoredMatrix, crit, tracker: _Tracker, tag: str):
    """Truncate and also return the full spectrum, so norms need no extra QR."""
    spectra = []
    prev = lr._spectrum_sink

    def grab(t, s, k):
        spectra.append(s)
        if prev is not None:
            prev(t, s, k)

    lr.set_spectrum_sink(grab)
    try:
        Y = tracker.truncate(X, crit, tag)
    finally:
        lr.set_spectrum_sink(prev)
    s = spectra[0] if spectra else np.zeros(0)
    return Y, s


def solve_lowrank(mg: MultigridHierarchy, F: FactoredMatrix, cfg: MGConfig = MGConfig(),
                  callback=None):
    """Multigrid with low-rank truncation of all iterates.

    The iterate U is always truncated with the absolute criterion. The
    residual is truncated the same way, or relative to its own norm when
    ``cfg.outer_truncation == "relative"``. Stops when the truncated residual
    norm drops to tol * ||F||_F, when the largest singular value of the
    residual falls below eps_abs (absolute variant only), or after
    ``cfg.maxit`` iterations. The report's ``residual_history`` holds the
    untruncated residual ||F - A(U)||_F / ||F||_F.
    """
    start = time.perf_counter()
    op = mg.finest
    tracker = _Tracker()
    report = SolveReport(mode="lowrank")
    U = FactoredMatrix.zeros(*op.shape)
    R = F
    r0 = lr.frobenius_norm(F)
    r = r0
    report.residual_rank_history = [F.rank]
    report.truncated_residual_history = [1.0 if r0 > 0 else 0.0]
    i = 0
    stop = ""
    crit_u = Absolute(cfg.eps_abs)
    # the relative variant truncates only the residual relative to itself
    crit_r = crit_u if cfg.outer_truncation == "absolute" else RelativeFraction(cfg.eps_rel)
    while r > cfg.tol * r0 and i < cfg.maxit:
        C = vcycle_lowrank(mg, FactoredMatrix.zeros(*op.shape), R, cfg, tracker=tracker)
        if callback is not None:
            callback(i, C)
        U, _ = _outer_truncate(U + C, crit_u, tracker, "solution")
        R, s = _outer_truncate(F - apply_factored(op, U), crit_r, tracker, "outer_residual")
        true_r = float(np.sqrt(np.sum(s**2)))
        r = lr.frobenius_norm(R)
        i += 1
        report.residual_history.append(true_r / r0)
        report.truncated_residual_history.append(r / r0)
        report.rank_history.append(U.rank)
        report.residual_rank_history.append(R.rank)
        log.debug("lowrank iteration %d: rel residual %.3e, rank %d", i, true_r / r0, U.rank)
        if true_r > DIVERGENCE_FACTOR * r0:
            report.iterations = i
            report.stop_reason = "diverged"
            report.wall_time = time.perf_counter() - start
            raise DivergenceError(f"residual grew to {true_r / r0:.3e} of the initial residual", report)
        if cfg.outer_truncation == "absolute" and (s.size == 0 or s[0] < cfg.eps_abs):
            stop = "eps_abs"
            break
    if r0 == 0:
        report.residual_history = [0.0]
    report.iterations = i
    report.final_rank = U.rank
    report.max_pre_truncation_rank = tracker.max_rank
    report.rank_warnings = tracker.rank_warnings
    if not stop:
        stop = "tol" if r <= cfg.tol * r0 else "maxit"
    report.stop_reason = stop
    report.converged = stop in ("tol", "eps_abs")
    report.wall_time = time.perf_counter() - start
    return U, report


# ---------------------------------------------------------------------------


def spectral_radius_estimate(op: TensorOperator, omega: float = SmootherConfig.omega,
                             maxiter: int = 200, rtol: float = 1e-8, seed: int = 0) -> float:
    """Power iteration for rho(I - omega D^-1 A), measured in the D-weighted norm.

    The iteration matrix is self-adjoint in that norm, so the norm ratios are
    bounded by the spectral radius and converge to it.
    """
    d = op.diag_K0[:, None]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(op.shape)

    def dnorm(Y):
        return math.sqrt(float(np.sum(d * Y * Y)))

    X /= dnorm(X)
    est = 0.0
    for _ in range(maxiter):
        Y = X - omega * apply_dense(op, X) / d
        new = dnorm(Y)
        if new == 0:
            return 0.0
        X = Y / new
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return est
