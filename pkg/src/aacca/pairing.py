"""Cross-affinity matrices between reference and test samples.

Rows of every pairing matrix index reference samples (columns of ``U``),
columns index test samples (columns of ``V``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import ConfigError, DegenerateScaleError, InconsistentLabelError, ShapeError
from .linalg import FeatureMatrix

SPARSE_DENSITY = 0.1
DEFAULT_MAX_PAIRS = 100_000


class Label(enum.IntEnum):
    """Per-sample ground truth; the value doubles as the strict pairing weight."""

    CHANGE = -1
    UNLABELED = 0
    NO_CHANGE = 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            text = value.strip().lower()
            key = text.replace("-", "_")
            aliases = {"change": cls.CHANGE, "no_change": cls.NO_CHANGE, "nochange": cls.NO_CHANGE,
                       "unlabeled": cls.UNLABELED, "unlabelled": cls.UNLABELED}
            if key in aliases:
                return aliases[key]
            value = int(float(text))
        return cls(int(value))


class PairingMode(str, enum.Enum):
    STRICT = "strict"
    RELAXED = "relaxed"
    DENSE_CROSSSIM = "dense-crosssim"


@dataclass(frozen=True)
class RbfKernel:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DegenerateScaleError(f"RBF scale must be positive, got {self.sigma}")


@dataclass(frozen=True)
class PairingMatrix:
    """Cross-affinity ``D`` (n_r x n_t) with entries in [-1, 1].

    ``entries`` is a ``scipy.sparse`` CSR array when fewer than 10% of the
    entries are nonzero and a dense ndarray otherwise.
    """

    entries: NDArray[np.float64] | sparse.csr_array
    mode: PairingMode
    includes_unlabeled: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.entries)

    def toarray(self) -> NDArray[np.float64]:
        if self.is_sparse:
            return self.entries.toarray()
        return np.array(self.entries)

    def right_apply(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Return ``X D`` for a dense ``X`` with n_r columns."""
        return np.asarray((self.entries.T @ x.T).T)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self.entries.count_nonzero())
        return int(np.count_nonzero(self.entries))


def _store(dense_or_coo, shape, mode, includes_unlabeled) -> PairingMatrix:
    if sparse.issparse(dense_or_coo):
        m = sparse.csr_array(dense_or_coo, shape=shape)
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.count_nonzero() >= SPARSE_DENSITY * shape[0] * shape[1]:
            m = m.toarray()
    else:
        m = np.asarray(dense_or_coo, dtype=np.float64)
        if np.count_nonzero(m) < SPARSE_DENSITY * m.size:
            m = sparse.csr_array(m)
    return PairingMatrix(entries=m, mode=mode, includes_unlabeled=includes_unlabeled)


def pairwise_distances(x: FeatureMatrix, y: FeatureMatrix) -> NDArray[np.float64]:
    """Euclidean distances between the columns of two views of equal dimension."""
    if x.dim != y.dim:
        raise ShapeError(f"feature dimensions differ: {x.dim} vs {y.dim}")
    return cdist(x.data.T, y.data.T)


def rbf_scale_from_quantile(
    x: FeatureMatrix,
    y: FeatureMatrix,
    q: float = 0.1,
    max_pairs: int = DEFAULT_MAX_PAIRS,
    seed: int = 0,
) -> RbfKernel:
    """RBF scale set to the ``q``-quantile of cross-pair Euclidean distances.

    At most ``max_pairs`` (i, j) pairs are used, drawn without replacement
    with a seeded generator when the full set is larger. When ``x`` and
    ``y`` are the same object, the self pairs (i, i) are left out of the
    pool. Like every kernel in this module, distances are taken between
    centered columns.
    """
    if not 0.0 < q < 1.0:
        raise ConfigError(f"q must lie in (0, 1), got {q}")
    n_x, n_y = x.count, y.count
    same = x is y
    total = n_x * n_y
    rng = np.random.default_rng(seed)
    if total <= max_pairs:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=max_pairs, replace=False))
    i, j = np.divmod(flat, n_y)
    if same:
        keep = i != j
        i, j = i[keep], j[keep]
    if i.size == 0:
        raise DegenerateScaleError("no cross pairs available for the scale estimate")
    diff = x.data[:, i] - y.data[:, j]
    dists = np.sqrt(np.einsum("ij,ij->j", diff, diff))
    if not np.any(dists > 0):
        raise DegenerateScaleError("all pairwise distances are zero")
    sigma = float(np.quantile(dists, q))
    if sigma <= 0:
        raise DegenerateScaleError(f"the {q}-quantile of pairwise distances is zero")
    return RbfKernel(sigma)


def rbf(u: ArrayLike, v: ArrayLike, kernel: RbfKernel) -> float:
    """``exp(-|u - v|^2 / (2 sigma^2))``."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"vector lengths differ: {u.size} vs {v.size}")
    d2 = float(np.dot(u - v, u - v))
    return float(np.exp(-d2 / (2.0 * kernel.sigma**2)))


def rbf_matrix(x: NDArray, y: NDArray, kernel: RbfKernel) -> NDArray[np.float64]:
    """Kernel values between the columns of ``x`` (rows of result) and of ``y``."""
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"feature dimensions differ: {x.shape[0]} vs {y.shape[0]}")
    d2 = cdist(x.T, y.T, metric="sqeuclidean")
    return np.exp(-d2 / (2.0 * kernel.sigma**2))


def _rbf_pairs(u: FeatureMatrix, v: FeatureMatrix, i: NDArray, j: NDArray, kernel: RbfKernel):
    diff = u.data[:, i] - v.data[:, j]
    return np.exp(-np.einsum("ij,ij->j", diff, diff) / (2.0 * kernel.sigma**2))


def build_strict_D(labels: Sequence, n: int | None = None) -> PairingMatrix:
    """Diagonal pairing: +1 for no-change, -1 for change, 0 for unlabeled samples."""
    values = np.array([Label.parse(lab) for lab in labels], dtype=np.float64)
    n = values.size if n is None else int(n)
    if values.size != n:
        raise ShapeError(f"{values.size} labels for n={n}")
    if n < 1:
        raise ShapeError("need at least one sample")
    return _store(sparse.diags_array(values, format="csr"), (n, n), PairingMode.STRICT, False)


def build_strict_semisup_D(labels: Sequence, u: FeatureMatrix, v: FeatureMatrix, kernel: RbfKernel) -> PairingMatrix:
    """Strict diagonal for labeled samples plus ``2 k(u_i, v_i) - 1`` on unlabeled co-located pairs."""
    values = np.array([Label.parse(lab) for lab in labels], dtype=np.float64)
    n = values.size
    if u.count != n or v.count != n:
        raise ShapeError(f"{n} labels for {u.count} reference and {v.count} test samples")
    free = np.flatnonzero(values == 0)
    values[free] = 2.0 * _rbf_pairs(u, v, free, free, kernel) - 1.0
    return _store(sparse.diags_array(values, format="csr"), (n, n), PairingMode.STRICT, bool(free.size))


def _check_bounds(i, j, u: FeatureMatrix, v: FeatureMatrix):
    if i.size and (i.min() < 0 or i.max() >= u.count or j.min() < 0 or j.max() >= v.count):
        raise ShapeError(f"pair index out of range for {u.count} x {v.count} pairing")


def build_relaxed_D(
    u: FeatureMatrix,
    v: FeatureMatrix,
    labeled_pairs: Iterable[tuple[int, int, object]],
    kernel: RbfKernel,
    semisup: bool = False,
    unlabeled_pairs: Iterable[tuple[int, int]] = (),
) -> PairingMatrix:
    """Kernel-weighted pairing over listed (reference, test) pairs.

    Labeled no-change pairs get ``k(u_i, v_j)``, labeled change pairs
    ``k(u_i, v_j) - 1``; with ``semisup`` the unlabeled pairs get
    ``2 k(u_i, v_j) - 1``. Every other entry is zero.

    Raises
    ------
    InconsistentLabelError
        If the same (i, j) pair is listed with two different classes.
    """
    classes: dict[tuple[int, int], Label] = {}
    for i, j, lab in labeled_pairs:
        key = (int(i), int(j))
        lab = Label.parse(lab)
        if lab is Label.UNLABELED:
            raise InconsistentLabelError(f"pair {key} listed as labeled without a class")
        if classes.setdefault(key, lab) is not lab:
            raise InconsistentLabelError(f"pair {key} listed as both change and no-change")
    unl: set[tuple[int, int]] = set()
    if semisup:
        for i, j in unlabeled_pairs:
            key = (int(i), int(j))
            if key in classes:
                raise InconsistentLabelError(f"pair {key} listed as both labeled and unlabeled")
            unl.add(key)

    rows, cols, vals = [], [], []
    if classes:
        ij = np.array(list(classes.keys()), dtype=np.int64)
        signs = np.array([classes[k] for k in classes], dtype=np.float64)
        _check_bounds(ij[:, 0], ij[:, 1], u, v)
        kappa = _rbf_pairs(u, v, ij[:, 0], ij[:, 1], kernel)
        rows.append(ij[:, 0])
        cols.append(ij[:, 1])
        vals.append(np.where(signs > 0, kappa, kappa - 1.0))
    if unl:
        ij = np.array(sorted(unl), dtype=np.int64)
        _check_bounds(ij[:, 0], ij[:, 1], u, v)
        kappa = _rbf_pairs(u, v, ij[:, 0], ij[:, 1], kernel)
        rows.append(ij[:, 0])
        cols.append(ij[:, 1])
        vals.append(2.0 * kappa - 1.0)
    shape = (u.count, v.count)
    if rows:
        coo = sparse.coo_array(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )
    else:
        coo = sparse.coo_array(shape)
    return _store(coo, shape, PairingMode.RELAXED, bool(unl))


def build_dense_crosssim_D(u: FeatureMatrix, v: FeatureMatrix, kernel: RbfKernel) -> PairingMatrix:
    """``D_ij = k(u_i, v_j)`` for every pair."""
    return _store(rbf_matrix(u.data, v.data, kernel), (u.count, v.count), PairingMode.DENSE_CROSSSIM, False)


def colocated_pairs(indices: Iterable[int]) -> list[tuple[int, int]]:
    return [(int(i), int(i)) for i in indices]


def sample_cross_pairs(
    ref_indices: Sequence[int], test_indices: Sequence[int], n_pairs: int, seed: int
) -> list[tuple[int, int]]:
    """Seeded subsample of distinct (reference, test) pairs."""
    ref = np.asarray(ref_indices, dtype=np.int64)
    test = np.asarray(test_indices, dtype=np.int64)
    total = ref.size * test.size
    n_pairs = min(int(n_pairs), total)
    flat = np.sort(np.random.default_rng(seed).choice(total, size=n_pairs, replace=False))
    a, b = np.divmod(flat, test.size)
    return list(zip(ref[a].tolist(), test[b].tolist()))
