"""Typed neighborhood adjacency families for the context regularizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import ConfigError, DegenerateGridError, InsufficientPointsError, ShapeError

# (row offset, col offset) per neighbor type, starting top-left and turning
# anticlockwise; rows grow downward.
GRID_OFFSETS = (
    (-1, -1),  # 1 top-left
    (0, -1),  # 2 left
    (1, -1),  # 3 bottom-left
    (1, 0),  # 4 bottom
    (1, 1),  # 5 bottom-right
    (0, 1),  # 6 right
    (-1, 1),  # 7 top-right
    (-1, 0),  # 8 top
)
GRID_TYPE_NAMES = ("top-left", "left", "bottom-left", "bottom", "bottom-right", "right", "top-right", "top")


@dataclass(frozen=True)
class ContextSystem:
    """One sparse n x n adjacency matrix per neighbor type."""

    w_list: tuple[sparse.csr_array, ...]
    kind: str

    @property
    def c_count(self) -> int:
        return len(self.w_list)

    @property
    def n(self) -> int:
        return self.w_list[0].shape[0]


def empty_context(n: int, c_count: int = 1) -> ContextSystem:
    """All-zero adjacency family, i.e. no regularization."""
    return ContextSystem(tuple(sparse.csr_array((n, n)) for _ in range(c_count)), "empty")


def build_isotropic_knn(coords: ArrayLike, k: int) -> ContextSystem:
    """Single adjacency linking each point to its ``k`` nearest neighbors with weight ``1/k``.

    ``coords`` holds one position per row. Distance ties go to the lower index.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeError(f"coords must be n x dim, got shape {pts.shape}")
    n = pts.shape[0]
    if k < 1:
        raise ConfigError("k must be at least 1")
    if n <= k:
        raise InsufficientPointsError(f"need more than k={k} points, got {n}")
    dist = cdist(pts, pts)
    np.fill_diagonal(dist, np.inf)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    w = sparse.csr_array((np.full(n * k, 1.0 / k), (rows, nbrs.ravel())), shape=(n, n))
    return ContextSystem((w,), "isotropic-knn")


def build_grid_typed_8(rows: int, cols: int) -> ContextSystem:
    """Eight typed adjacencies on a row-major ``rows x cols`` grid.

    ``W[c][i, j] = 1`` iff cell ``j`` is the type-``c`` neighbor of cell ``i``
    (see ``GRID_OFFSETS``). Border cells simply lack some neighbors.
    """
    if rows < 2 or cols < 2:
        raise DegenerateGridError(f"grid must be at least 2x2, got {rows}x{cols}")
    n = rows * cols
    r, c = np.divmod(np.arange(n), cols)
    mats = []
    for dr, dc in GRID_OFFSETS:
        rr, cc = r + dr, c + dc
        ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
        src = np.flatnonzero(ok)
        dst = rr[ok] * cols + cc[ok]
        mats.append(sparse.csr_array((np.ones(src.size), (src, dst)), shape=(n, n)))
    return ContextSystem(tuple(mats), "grid-typed-8")
