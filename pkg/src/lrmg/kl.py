"""Truncated Karhunen-Loeve expansions of the random diffusion coefficient.

Two covariance models on D = (-1, 1)^2 are supported:

* exponential, r(x, y) = sigma^2 exp(-|x - y|_1 / b), separable, with
  analytic 1D eigenpairs;
* squared exponential, r(x, y) = sigma^2 exp(-|x - y|_2^2 / b^2), whose
  eigenpairs come from a dense Galerkin eigensolve on a coarse bilinear grid.

The variance sigma^2 is folded into the eigenvalues, so downstream code never
sees sigma on its own.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "CovarianceKind",
    "CovarianceModel",
    "KLTerm",
    "KLExpansion",
    "OneDimEigenpair",
    "exponential_eigenpairs_1d",
    "tensorize_2d",
    "choose_m",
    "galerkin_eigensolve",
    "build_expansion",
    "exponential_expansion",
    "equation_residual",
    "KLError",
]

UNIFORM_SCALE = float(np.sqrt(3.0))
DEFAULT_THRESHOLD = 0.95
DEFAULT_M = 1000
EIGEN_GRID_LEVEL = 4  # h = 2^-4 for the squared exponential eigensolve


class KLError(ValueError):
    """Raised when an expansion cannot be built from the given inputs."""


class CovarianceKind(str, enum.Enum):
    EXPONENTIAL = "exp"
    SQUARED_EXPONENTIAL = "sqexp"


@dataclass(frozen=True)
class CovarianceModel:
    kind: CovarianceKind
    sigma: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "kind", CovarianceKind(self.kind))
        if not self.sigma > 0:
            raise KLError(f"sigma must be positive, got {self.sigma}")
        if not self.b > 0:
            raise KLError(f"correlation length b must be positive, got {self.b}")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate r(x, y) for broadcastable point arrays of shape (..., 2)."""
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.kind is CovarianceKind.EXPONENTIAL:
            return self.sigma**2 * np.exp(-np.abs(d).sum(axis=-1) / self.b)
        return self.sigma**2 * np.exp(-(d**2).sum(axis=-1) / self.b**2)


@dataclass(frozen=True)
class OneDimEigenpair:
    """Eigenpair of exp(-|x - y| / b) on [-a, a].

    The eigenfunction is ``norm * cos(omega x)`` when ``even`` and
    ``norm * sin(omega x)`` otherwise.
    """

    eigenvalue: float
    omega: float
    even: bool
    norm: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.even:
            return self.norm * np.cos(self.omega * x)
        return self.norm * np.sin(self.omega * x)


@dataclass(frozen=True)
class KLTerm:
    """One (eigenvalue, eigenfunction) pair; ``eigenfunction`` maps (..., 2) points to values."""

    eigenvalue: float
    eigenfunction: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KLExpansion:
    c0: float = 1.0
    terms: tuple = field(default_factory=tuple)
    scale: float = UNIFORM_SCALE

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        lam = self.eigenvalues
        if np.any(lam < 0):
            raise KLError("KL eigenvalues must be nonnegative")
        if np.any(np.diff(lam) > 0):
            raise KLError("KL terms must be sorted by non-increasing eigenvalue")

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([t.eigenvalue for t in self.terms], dtype=float)

    def truncated(self, m: int) -> "KLExpansion":
        if m > self.m:
            raise KLError(f"expansion has only {self.m} terms, {m} requested")
        return KLExpansion(self.c0, self.terms[:m], self.scale)

    def coefficient(self, x: np.ndarray, xi: Sequence[float]) -> np.ndarray:
        """Realization c0 + scale * sum_l sqrt(lambda_l) c_l(x) xi_l."""
        out = np.full(np.shape(x)[:-1], self.c0, dtype=float)
        for term, xl in zip(self.terms, xi):
            out = out + self.scale * np.sqrt(term.eigenvalue) * xl * term.eigenfunction(x)
        return out


# ---------------------------------------------------------------------------
# exponential covariance, analytic route


def _bisect(fun, lo, hi, iters=200):
    """Vectorized bisection; every bracket [lo, hi] must contain a sign change."""
    flo = fun(lo)
    fhi = fun(hi)
    bad = np.sign(flo) * np.sign(fhi) > 0
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise KLError(f"bisection bracket has no sign change for root index {idx}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        fmid = fun(mid)
        left = np.sign(fmid) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fmid, flo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def exponential_eigenpairs_1d(b: float, a: float = 1.0, count: int = 10) -> list[OneDimEigenpair]:
    """Leading eigenpairs of the unit-variance kernel exp(-|x - y| / b) on [-a, a].

    With c = 1/b, even modes cos(omega x) solve ``c - omega tan(omega a) = 0``
    and odd modes sin(omega x) solve ``omega + c tan(omega a) = 0``; the
    eigenvalue is 2c / (omega^2 + c^2). Roots are located by bisection
    between consecutive poles of the tangent.
    """
    if not (b > 0 and a > 0):
        raise KLError("b and a must be positive")
    if count < 1:
        raise KLError("count must be at least 1")
    c = 1.0 / b
    half = np.pi / 2
    n_even = (count + 1) // 2
    n_odd = count // 2

    # Work in theta = omega * a. The residuals below are the pole-free forms
    # ca*cos(theta) - theta*sin(theta) and theta*cos(theta) + ca*sin(theta).
    ca = c * a
    k = np.arange(n_even, dtype=float)
    tiny = 1e-300
    theta_even = _bisect(
        lambda t: ca * np.cos(t) - t * np.sin(t),
        k * np.pi + tiny, k * np.pi + half,
    )
    k = np.arange(1, n_odd + 1, dtype=float)
    theta_odd = _bisect(
        lambda t: t * np.cos(t) + ca * np.sin(t),
        k * np.pi - half, k * np.pi,
    )

    pairs = []
    for theta, even in [(t, True) for t in theta_even] + [(t, False) for t in theta_odd]:
        omega = theta / a
        lam = 2.0 * c / (omega**2 + c**2)
        s = np.sin(2.0 * omega * a) / (2.0 * omega)
        norm = 1.0 / np.sqrt(a + s if even else a - s)
        pairs.append(OneDimEigenpair(float(lam), float(omega), even, float(norm)))
    pairs.sort(key=lambda p: p.omega)
    return pairs[:count]


def equation_residual(pair: OneDimEigenpair, b: float, a: float = 1.0, form: str = "cos") -> float:
    """Residual of the transcendental equation satisfied by ``pair.omega``.

    ``form="tan"`` evaluates c - w tan(wa) or w + c tan(wa) as written. Near
    the tangent poles these are badly conditioned, so the default ``"cos"``
    multiplies through by cos(wa), which leaves the roots unchanged.
    """
    c = 1.0 / b
    w = pair.omega
    if form == "tan":
        if pair.even:
            return float(c - w * np.tan(w * a))
        return float(w + c * np.tan(w * a))
    if form != "cos":
        raise ValueError(f"unknown form {form!r}")
    if pair.even:
        return float(c * np.cos(w * a) - w * np.sin(w * a))
    return float(w * np.cos(w * a) + c * np.sin(w * a))


class _SeparableEigenfunction:
    def __init__(self, fx: OneDimEigenpair, fy: OneDimEigenpair):
        self.fx = fx
        self.fy = fy

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.fx(x[..., 0]) * self.fy(x[..., 1])


def tensorize_2d(one_d: Sequence[OneDimEigenpair], count: int | None = None,
                 variance: float = 1.0) -> list[KLTerm]:
    """Product eigenpairs of the separable kernel on the square.

    The L1 distance makes exp(-|x - y|_1 / b) a product of 1D kernels, so the
    2D eigenpairs are (lam_i lam_j, c_i(x1) c_j(x2)). Products are sorted by
    eigenvalue, descending, ties broken by (i, j).
    """
    lam = np.array([p.eigenvalue for p in one_d])
    n = len(lam)
    if count is None:
        count = n * n
    if count > n * n:
        raise KLError(f"{n} 1D pairs give only {n * n} products, {count} requested")
    prod = np.outer(lam, lam).ravel()
    ii, jj = np.divmod(np.arange(n * n), n)
    order = np.lexsort((jj, ii, -prod))[:count]
    return [
        KLTerm(variance * float(prod[o]), _SeparableEigenfunction(one_d[ii[o]], one_d[jj[o]]))
        for o in order
    ]


def exponential_expansion(sigma: float, b: float, count: int = DEFAULT_M) -> list[KLTerm]:
    """Leading ``count`` 2D terms for the exponential model, sigma^2 folded in."""
    # the i-th largest 2D product needs at most i 1D factors on either axis
    one_d = exponential_eigenpairs_1d(b, 1.0, count)
    return tensorize_2d(one_d, count, variance=sigma**2)


# ---------------------------------------------------------------------------
# truncation length


def choose_m(eigenvalues, threshold: float = DEFAULT_THRESHOLD, M: int = DEFAULT_M) -> int:
    """Smallest m whose partial eigenvalue sum reaches ``threshold`` of the first M."""
    lam = np.asarray(eigenvalues, dtype=float)[:M]
    if not 0 < threshold < 1:
        raise KLError("threshold must lie in (0, 1)")
    if lam.size == 0 or np.any(lam < 0):
        raise KLError("eigenvalues must be a nonempty nonnegative list")
    total = lam.sum()
    if total <= 0:
        raise KLError("all eigenvalues are zero")
    frac = np.cumsum(lam) / total
    # guard the fraction against roundoff just below the threshold
    return int(np.argmax(frac >= threshold * (1 - 1e-14))) + 1


# ---------------------------------------------------------------------------
# squared exponential covariance, Galerkin route


def _nodal_mass_1d(n_cells: int) -> np.ndarray:
    """1D P1 mass matrix on [-1, 1] including both boundary nodes."""
    h = 2.0 / n_cells
    main = np.full(n_cells + 1, 4.0)
    main[[0, -1]] = 2.0
    off = np.ones(n_cells)
    return (h / 6.0) * (np.diag(main) + np.diag(off, 1) + np.diag(off, -1))


class _NodalEigenfunction:
    """Bilinear interpolant of nodal values on the full (boundary-inclusive) lattice."""

    def __init__(self, coords_1d: np.ndarray, values: np.ndarray):
        n = coords_1d.size
        # values are ordered with x fastest, so reshape gives [iy, ix]
        self._interp = RegularGridInterpolator(
            (coords_1d, coords_1d), values.reshape(n, n), method="linear",
        )
        self.values = values

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.stack([x[..., 1], x[..., 0]], axis=-1)
        return self._interp(pts.reshape(-1, 2)).reshape(x.shape[:-1])


def _hat_values(coords: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the 1D P1 hat functions (rows) at points ``x`` (columns)."""
    h = coords[1] - coords[0]
    return np.clip(1.0 - np.abs(x[None, :] - coords[:, None]) / h, 0.0, None)


def _galerkin_kernel_1d(coords: np.ndarray, b: float, order: int = 6) -> np.ndarray:
    """B1[i, j] = int int phi_i(x) exp(-(x - y)^2 / b^2) phi_j(y) dx dy by Gauss quadrature per cell."""
    g, gw = np.polynomial.legendre.leggauss(order)
    h = coords[1] - coords[0]
    mid = 0.5 * (coords[:-1] + coords[1:])
    xq = (mid[:, None] + 0.5 * h * g[None, :]).ravel()
    wq = np.tile(0.5 * h * gw, mid.size)
    phi = _hat_values(coords, xq) * wq[None, :]
    R = np.exp(-((xq[:, None] - xq[None, :]) ** 2) / b**2)
    return phi @ R @ phi.T


def galerkin_eigensolve(cov: CovarianceModel, level: int = EIGEN_GRID_LEVEL,
                        count: int = 10) -> list[KLTerm]:
    """Largest eigenpairs of the covariance operator in the bilinear FEM space.

    Solves B v = lam M v with B_ij = int int phi_i(x) r(x, y) phi_j(y) and M
    the bilinear mass matrix, on the uniform grid with h = 2^-level. Boundary
    nodes are included since c_l need not vanish there. The squared
    exponential kernel factorizes over coordinates, so B = sigma^2 B1 kron B1
    with accurately integrated 1D blocks. Eigenvectors are M-normalized and
    become bilinear interpolants.
    """
    if cov.kind is not CovarianceKind.SQUARED_EXPONENTIAL:
        raise KLError("galerkin_eigensolve is meant for the squared exponential model")
    n_cells = 2 ** (level + 1)
    coords = np.linspace(-1.0, 1.0, n_cells + 1)
    n_nodes = coords.size**2
    if count > n_nodes:
        raise KLError(f"count={count} exceeds the {n_nodes} nodal unknowns")
    b1 = _galerkin_kernel_1d(coords, cov.b)
    # node index iy * n + ix, so kron(y-block, x-block)
    B = cov.sigma**2 * np.kron(b1, b1)
    B = 0.5 * (B + B.T)
    m1 = _nodal_mass_1d(n_cells)
    M = np.kron(m1, m1)
    vals, vecs = scipy.linalg.eigh(B, M, subset_by_index=[n_nodes - count, n_nodes - 1])
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    vals = np.clip(vals, 0.0, None)
    terms = []
    for lam, v in zip(vals, vecs.T):
        # fix the sign so the largest-magnitude entry is positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        terms.append(KLTerm(float(lam), _NodalEigenfunction(coords, v)))
    return terms


def build_expansion(cov: CovarianceModel, m: int | None = None,
                    threshold: float = DEFAULT_THRESHOLD, M: int = DEFAULT_M) -> KLExpansion:
    """KL expansion with c0 = 1, uniform scaling sqrt(3), and m chosen by ``choose_m`` unless given."""
    if cov.kind is CovarianceKind.EXPONENTIAL:
        terms = exponential_expansion(cov.sigma, cov.b, M)
    else:
        n_nodes = (2 ** (EIGEN_GRID_LEVEL + 1) + 1) ** 2
        terms = galerkin_eigensolve(cov, EIGEN_GRID_LEVEL, min(M, n_nodes))
    if m is None:
        m = choose_m([t.eigenvalue for t in terms], threshold, M)
    return KLExpansion(1.0, terms[:m], UNIFORM_SCALE)
