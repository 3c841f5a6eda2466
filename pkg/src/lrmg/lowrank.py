"""Factored matrices X = V W^T and their rank truncation.

Truncation orthogonalizes both factors with thin QR, takes the SVD of the
small core R_V R_W^T, and keeps the leading k singular triplets. When the
factored rank reaches the smaller matrix dimension, it densifies and takes a
direct SVD instead, since that is then cheaper. Singular values are carried
on the W factor, so the returned V has orthonormal columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "FactoredMatrix",
    "RelativeFraction",
    "RelativeToNorm",
    "Absolute",
    "TruncationCriterion",
    "truncate",
    "select_rank",
    "frobenius_norm",
    "max_singular_value",
    "add",
    "STATS",
    "set_spectrum_sink",
]


@dataclass
class TruncationStats:
    calls: int = 0
    dense_fallbacks: int = 0

    def reset(self):
        self.calls = 0
        self.dense_fallbacks = 0


STATS = TruncationStats()

_spectrum_sink: Optional[Callable[[str, np.ndarray, int], None]] = None


def set_spectrum_sink(sink: Optional[Callable[[str, np.ndarray, int], None]]) -> None:
    """Install ``sink(tag, singular_values, kept_rank)``, called on every truncation; None disables."""
    global _spectrum_sink
    _spectrum_sink = sink


class FactoredMatrix:
    """An n x N matrix stored as V @ W.T with V (n x k) and W (N x k)."""

    __slots__ = ("V", "W")

    def __init__(self, V, W):
        V = np.asarray(V, dtype=float)
        W = np.asarray(W, dtype=float)
        if V.ndim != 2 or W.ndim != 2:
            raise ValueError("factors must be 2D arrays")
        if V.shape[1] != W.shape[1]:
            raise ValueError(f"factor column counts differ: {V.shape[1]} vs {W.shape[1]}")
        self.V = V
        self.W = W

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> "FactoredMatrix":
        return cls(np.zeros((n_rows, 0)), np.zeros((n_cols, 0)))

    @classmethod
    def outer(cls, v, w) -> "FactoredMatrix":
        return cls(np.asarray(v, float).reshape(-1, 1), np.asarray(w, float).reshape(-1, 1))

    @property
    def shape(self):
        return (self.V.shape[0], self.W.shape[0])

    @property
    def rank(self) -> int:
        """Number of stored columns (an upper bound on the true rank)."""
        return self.V.shape[1]

    def dense(self) -> np.ndarray:
        return self.V @ self.W.T

    def __add__(self, other: "FactoredMatrix") -> "FactoredMatrix":
        return add(self, other)

    def __neg__(self) -> "FactoredMatrix":
        return FactoredMatrix(self.V, -self.W)

    def __sub__(self, other: "FactoredMatrix") -> "FactoredMatrix":
        return add(self, -other)

    def scaled(self, alpha: float) -> "FactoredMatrix":
        return FactoredMatrix(self.V, alpha * self.W)

    def __repr__(self):
        return f"FactoredMatrix(shape={self.shape}, rank={self.rank})"


def add(A: FactoredMatrix, B: FactoredMatrix) -> FactoredMatrix:
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return FactoredMatrix(np.hstack([A.V, B.V]), np.hstack([A.W, B.W]))


@dataclass(frozen=True)
class RelativeFraction:
    """Drop a tail of Frobenius norm at most eps times the norm of the input."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class RelativeToNorm:
    """Drop a tail of Frobenius norm at most eps * reference."""

    eps: float
    reference: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.reference > 0:
            raise ValueError("reference norm must be positive")

    @property
    def budget(self) -> float:
        return self.eps * self.reference


@dataclass(frozen=True)
class Absolute:
    """Keep singular values >= eps (ties kept)."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


TruncationCriterion = Union[RelativeFraction, RelativeToNorm, Absolute]


def select_rank(s: np.ndarray, crit: TruncationCriterion) -> int:
    """Rank kept from descending singular values ``s`` under ``crit``."""
    s = np.asarray(s, dtype=float)
    if isinstance(crit, Absolute):
        return int(np.count_nonzero(s >= crit.eps))
    # tails[k] = ||(s_{k+1}, ..., s_n)||_2 for k = 0..n
    sq = s[::-1] ** 2
    tails = np.sqrt(np.concatenate([np.cumsum(sq)[::-1], [0.0]]))
    if isinstance(crit, RelativeFraction):
        budget = crit.eps * tails[0]
    elif isinstance(crit, RelativeToNorm):
        budget = crit.budget
    else:
        raise TypeError(f"unknown truncation criterion {crit!r}")
    return int(np.argmax(tails <= budget))


def _core_svd(X: FactoredMatrix):
    """(left, s, right) with X = left diag(s) right^T and orthonormal left/right."""
    n, N = X.shape
    if X.rank >= min(n, N):
        STATS.dense_fallbacks += 1
        U, s, Vh = np.linalg.svd(X.dense(), full_matrices=False)
        return U, s, Vh.T
    Qv, Rv = np.linalg.qr(X.V)
    Qw, Rw = np.linalg.qr(X.W)
    Uc, s, Vhc = np.linalg.svd(Rv @ Rw.T)
    return Qv @ Uc, s, Qw @ Vhc.T


def truncate(X: FactoredMatrix, crit: TruncationCriterion, tag: str = "") -> FactoredMatrix:
    """Rank-reduce ``X`` according to ``crit``; may return rank 0."""
    STATS.calls += 1
    if not (np.all(np.isfinite(X.V)) and np.all(np.isfinite(X.W))):
        raise FloatingPointError("non-finite entries in factored matrix")
    if X.rank == 0:
        return X
    left, s, right = _core_svd(X)
    k = select_rank(s, crit)
    if _spectrum_sink is not None:
        _spectrum_sink(tag, s, k)
    return FactoredMatrix(left[:, :k], right[:, :k] * s[:k])


def singular_values(X: FactoredMatrix) -> np.ndarray:
    """Singular values of X from the QR cores (no n x N buffer)."""
    if X.rank == 0:
        return np.zeros(0)
    Rv = np.linalg.qr(X.V, mode="r")
    Rw = np.linalg.qr(X.W, mode="r")
    return np.linalg.svd(Rv @ Rw.T, compute_uv=False)


def frobenius_norm(X: FactoredMatrix) -> float:
    if X.rank == 0:
        return 0.0
    Rv = np.linalg.qr(X.V, mode="r")
    Rw = np.linalg.qr(X.W, mode="r")
    return float(np.linalg.norm(Rv @ Rw.T))


def max_singular_value(X: FactoredMatrix) -> float:
    s = singular_values(X)
    return float(s[0]) if s.size else 0.0
