"""Dense linear-algebra kernels shared by the solver and the builders.

Data matrices are stored feature-major: one sample per *column*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla

from .errors import DegenerateInputError, NotPositiveDefiniteError, ShapeError

DEFAULT_EPS_REL = 1e-6


@dataclass(frozen=True)
class FeatureMatrix:
    """Column-centered view data together with the means that were removed.

    Attributes
    ----------
    data : ndarray, shape (dim, count)
        Centered samples, one per column.
    col_means : ndarray, shape (dim,)
        Per-feature mean subtracted from every column.
    """

    data: NDArray[np.float64]
    col_means: NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def scaled(self) -> NDArray[np.float64]:
        """Data divided by sqrt(count), so that ``X X'`` is the 1/n covariance."""
        return self.data / np.sqrt(self.count)


@dataclass(frozen=True)
class CovarianceBundle:
    c_rr: NDArray[np.float64]
    c_tt: NDArray[np.float64]
    ridge: float


@dataclass(frozen=True)
class GeneralizedEigSolution:
    """Top pairs of ``A v = lambda B v``; eigenvalues descending, columns B-orthonormal."""

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]


def center_columns(raw: ArrayLike) -> FeatureMatrix:
    """Subtract the mean sample from every column of ``raw`` (dim x count)."""
    x = np.array(raw, dtype=np.float64, ndmin=2)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    if x.shape[1] < 2:
        raise DegenerateInputError(f"need at least 2 samples, got {x.shape[1]}")
    means = x.mean(axis=1)
    return FeatureMatrix(data=x - means[:, None], col_means=means)


def covariance(x: FeatureMatrix, y: FeatureMatrix | None = None) -> NDArray[np.float64]:
    """Return ``(1/n) X Y'``; with ``y`` omitted (or ``y is x``) the result is exactly symmetric."""
    if y is None or y is x:
        c = x.data @ x.data.T / x.count
        return 0.5 * (c + c.T)
    if x.count != y.count:
        raise ShapeError(f"sample counts differ: {x.count} vs {y.count}")
    return x.data @ y.data.T / x.count


def ridge_regularize(c: ArrayLike, eps_rel: float = DEFAULT_EPS_REL) -> tuple[NDArray[np.float64], float]:
    """Add ``eps_rel * trace(C)/dim`` to the diagonal of ``C``.

    A zero matrix stays zero (its trace is 0); the downstream Cholesky
    is what flags that case.
    """
    c = np.asarray(c, dtype=np.float64)
    dim = c.shape[0]
    eps = float(eps_rel * np.trace(c) / dim)
    return c + eps * np.eye(dim), eps


def _fix_signs(vectors: NDArray[np.float64]) -> NDArray[np.float64]:
    # largest-magnitude coordinate made positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def solve_gen_sym_eig(a: ArrayLike, b: ArrayLike, k: int | None = None) -> GeneralizedEigSolution:
    """Top-``k`` eigenpairs of the symmetric-definite pencil ``(A, B)``.

    The pencil is reduced with ``B = L L'`` to the standard symmetric
    problem ``L^-1 A L^-T w = lambda w`` and mapped back with
    ``v = L^-T w``. Each eigenvector is sign-normalized so that its
    largest-magnitude coordinate is positive.

    Parameters
    ----------
    a : array_like, shape (d, d)
        Symmetric positive semi-definite matrix.
    b : array_like, shape (d, d)
        Symmetric positive definite matrix.
    k : int, optional
        Number of leading pairs to keep; all ``d`` by default.

    Raises
    ------
    NotPositiveDefiniteError
        If ``B`` has no Cholesky factor.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d) or b.shape != (d, d):
        raise ShapeError(f"pencil shapes {a.shape} and {b.shape} are not square and equal")
    k = d if k is None else int(k)
    if not 1 <= k <= d:
        raise ShapeError(f"k={k} outside [1, {d}]")
    try:
        chol = sla.cholesky(0.5 * (b + b.T), lower=True)
    except sla.LinAlgError as exc:
        raise NotPositiveDefiniteError("B is not positive definite; increase the ridge") from exc
    tmp = sla.solve_triangular(chol, 0.5 * (a + a.T), lower=True)
    reduced = sla.solve_triangular(chol, tmp.T, lower=True)
    reduced = 0.5 * (reduced + reduced.T)
    evals, w = np.linalg.eigh(reduced)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    vecs = sla.solve_triangular(chol.T, w[:, order], lower=False)
    return GeneralizedEigSolution(eigenvalues=evals, eigenvectors=_fix_signs(vecs))


def spd_inverse(c: ArrayLike) -> NDArray[np.float64]:
    """Inverse of a symmetric positive definite matrix through its Cholesky factor."""
    c = np.asarray(c, dtype=np.float64)
    try:
        factor = sla.cho_factor(c, lower=True)
    except sla.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite; increase the ridge") from exc
    inv = sla.cho_solve(factor, np.eye(c.shape[0]))
    return 0.5 * (inv + inv.T)


def entrywise_l1(m: ArrayLike) -> float:
    """Sum of absolute values of all entries."""
    return float(np.abs(np.asarray(m, dtype=np.float64)).sum())
