"""Bilinear finite elements on uniform square grids of D = (-1, 1)^2.

A grid of level k has mesh size h = 2^-k, so 2/h = 2^(k+1) cells per side
and N_x = (2/h - 1)^2 interior unknowns (homogeneous Dirichlet nodes are
eliminated). Interior nodes are numbered lexicographically with x fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .kl import KLExpansion

__all__ = [
    "Grid",
    "GridHierarchy",
    "assemble_stiffness",
    "assemble_kl_stiffnesses",
    "assemble_load",
    "prolongation",
    "build_hierarchy",
    "reference_stiffness",
    "write_triplets",
]

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# local node order: counterclockwise from the lower-left corner
_CORNERS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


@dataclass(frozen=True)
class Grid:
    level: int

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def cells(self) -> int:
        """Cells per side."""
        return 2 ** (self.level + 1)

    @property
    def n_interior(self) -> int:
        return (self.cells - 1) ** 2

    @property
    def coords_1d(self) -> np.ndarray:
        """Node coordinates along one axis, boundary included."""
        return np.linspace(-1.0, 1.0, self.cells + 1)

    def interior_points(self) -> np.ndarray:
        x = self.coords_1d[1:-1]
        X, Y = np.meshgrid(x, x)
        return np.stack([X.ravel(), Y.ravel()], axis=-1)


def _gauss_data():
    """Reference gradients (4 points x 4 nodes x 2) and point offsets (4 x 2)."""
    pts = np.array([[gx, gy] for gy in _GAUSS for gx in _GAUSS])
    grads = np.empty((4, 4, 2))
    for a, (xa, ya) in enumerate(_CORNERS):
        grads[:, a, 0] = xa * (1 + ya * pts[:, 1]) / 4
        grads[:, a, 1] = ya * (1 + xa * pts[:, 0]) / 4
    return pts, grads


def reference_stiffness(coeff_at_points=None) -> np.ndarray:
    """Element stiffness for one square cell (h-independent for bilinears)."""
    pts, grads = _gauss_data()
    c = np.ones(4) if coeff_at_points is None else np.asarray(coeff_at_points, float)
    return np.einsum("q,qad,qbd->ab", c, grads, grads)


def _element_topology(grid: Grid):
    """Node ids (full lattice) of every cell, plus cell lower-left coordinates."""
    n = grid.cells
    ex, ey = np.meshgrid(np.arange(n), np.arange(n))
    ex, ey = ex.ravel(), ey.ravel()
    ll = ey * (n + 1) + ex
    nodes = np.stack([ll, ll + 1, ll + n + 2, ll + n + 1], axis=1)
    origin = np.stack([-1.0 + ex * grid.h, -1.0 + ey * grid.h], axis=1)
    return nodes, origin


def _interior_map(grid: Grid) -> np.ndarray:
    """Full-lattice node id -> interior index, -1 on the boundary."""
    n = grid.cells
    ids = -np.ones((n + 1, n + 1), dtype=np.int64)
    ids[1:-1, 1:-1] = np.arange((n - 1) ** 2).reshape(n - 1, n - 1)
    return ids.ravel()


def quadrature_points(grid: Grid) -> np.ndarray:
    """Physical Gauss points, shape (cells, 4, 2)."""
    pts, _ = _gauss_data()
    _, origin = _element_topology(grid)
    return origin[:, None, :] + (pts[None, :, :] + 1.0) * (grid.h / 2)


def _assemble(grid: Grid, coeff_values: np.ndarray) -> sp.csr_matrix:
    """Assemble from coefficient values at Gauss points, shape (cells, 4)."""
    _, grads = _gauss_data()
    local = np.einsum("eq,qad,qbd->eab", coeff_values, grads, grads)
    nodes, _ = _element_topology(grid)
    imap = _interior_map(grid)
    rows = imap[np.repeat(nodes, 4, axis=1)].ravel()
    cols = imap[np.tile(nodes, (1, 4))].ravel()
    keep = (rows >= 0) & (cols >= 0)
    N = grid.n_interior
    K = sp.csr_matrix((local.ravel()[keep], (rows[keep], cols[keep])), shape=(N, N))
    # duplicate summation order differs between (i, j) and (j, i); averaging
    # makes the matrix exactly symmetric
    K = ((K + K.T) * 0.5).tocsr()
    K.sum_duplicates()
    K.eliminate_zeros()
    return K


def assemble_stiffness(grid: Grid, coeff: Callable[[np.ndarray], np.ndarray] | float = 1.0) -> sp.csr_matrix:
    """Stiffness matrix int c grad(phi_i) . grad(phi_j) on interior nodes.

    ``coeff`` is a constant or a callable evaluated at the 2x2 Gauss points
    of each cell.
    """
    qp = quadrature_points(grid)
    if callable(coeff):
        values = np.asarray(coeff(qp), dtype=float)
    else:
        values = np.full(qp.shape[:2], float(coeff))
    return _assemble(grid, values)


def assemble_kl_stiffnesses(grid: Grid, kl: KLExpansion, m: int | None = None) -> list:
    """[K_0, K_1, ..., K_m]: K_0 with c_0, K_l with scale * sqrt(lambda_l) * c_l."""
    terms = kl.terms if m is None else kl.terms[:m]
    qp = quadrature_points(grid)
    mats = [_assemble(grid, np.full(qp.shape[:2], float(kl.c0)))]
    for term in terms:
        weight = kl.scale * np.sqrt(term.eigenvalue)
        mats.append(_assemble(grid, weight * np.asarray(term.eigenfunction(qp), dtype=float)))
    return mats


def assemble_load(grid: Grid, f: float = 1.0) -> np.ndarray:
    """Load vector int f phi_i for a constant source f."""
    pts, _ = _gauss_data()
    shape = np.prod(1 + _CORNERS[None, :, :] * pts[:, None, :], axis=-1) / 4  # (q, a)
    local = float(f) * shape.sum(axis=0) * (grid.h**2 / 4)
    nodes, _ = _element_topology(grid)
    imap = _interior_map(grid)
    idx = imap[nodes].ravel()
    vals = np.broadcast_to(local, nodes.shape).ravel()
    keep = idx >= 0
    return np.bincount(idx[keep], weights=vals[keep], minlength=grid.n_interior)


def _prolongation_1d(n_coarse_cells: int) -> sp.csr_matrix:
    nc = n_coarse_cells - 1
    nf = 2 * n_coarse_cells - 1
    i = np.arange(nc)
    rows = np.concatenate([2 * i + 1, 2 * i, 2 * i + 2])
    cols = np.concatenate([i, i, i])
    vals = np.concatenate([np.ones(nc), np.full(nc, 0.5), np.full(nc, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


def prolongation(coarse: Grid, fine: Grid) -> sp.csr_matrix:
    """Bilinear interpolation from ``coarse`` interior nodes to ``fine`` ones."""
    if fine.level != coarse.level + 1:
        raise ValueError(f"prolongation needs consecutive levels, got {coarse.level} -> {fine.level}")
    p1 = _prolongation_1d(coarse.cells)
    return sp.kron(p1, p1, format="csr")


@dataclass
class GridHierarchy:
    """Grids from coarsest to finest with per-level stiffness lists.

    ``P[i]`` prolongs from ``grids[i - 1]`` to ``grids[i]``; ``P[0]`` is None.
    """

    grids: list
    P: list
    K: list  # K[i] = [K_0, ..., K_m] on grids[i]

    @property
    def finest(self) -> Grid:
        return self.grids[-1]

    @property
    def coarsest(self) -> Grid:
        return self.grids[0]

    def __len__(self):
        return len(self.grids)


def build_hierarchy(finest_level: int, kl: KLExpansion, coarsest_level: int = 2,
                    m: int | None = None) -> GridHierarchy:
    """Re-assemble the KL stiffness matrices on every level from coarsest to finest."""
    if finest_level < coarsest_level:
        raise ValueError("finest level must not be coarser than the coarsest level")
    if coarsest_level < 0:
        raise ValueError("coarsest level must be >= 0")
    grids = [Grid(k) for k in range(coarsest_level, finest_level + 1)]
    P = [None] + [prolongation(c, f) for c, f in zip(grids[:-1], grids[1:])]
    K = [assemble_kl_stiffnesses(g, kl, m) for g in grids]
    return GridHierarchy(grids, P, K)


def write_triplets(path, matrix) -> None:
    """Write ``row col value`` lines (0-based, 17 significant digits)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path, shape: Sequence[int]) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(tuple(shape))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=tuple(shape))
