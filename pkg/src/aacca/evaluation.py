"""Change-detection and realignment metrics.

"No-change" is the positive class throughout: a high score means the two
co-located patches are predicted unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .cca import CcaModel, transform
from .datasets import ArcToy
from .errors import ConfigError, DegenerateLabelsError, ShapeError
from .pairing import Label


@dataclass(frozen=True)
class ScoredSet:
    scores: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __post_init__(self):
        if np.shape(self.scores) != np.shape(self.labels):
            raise ShapeError(f"{np.size(self.scores)} scores for {np.size(self.labels)} labels")


def cosine_rows(zr: NDArray, zt: NDArray) -> NDArray[np.float64]:
    """Column-wise cosine similarity; columns with a zero norm score 0."""
    num = np.einsum("ij,ij->j", zr, zt)
    den = np.linalg.norm(zr, axis=0) * np.linalg.norm(zt, axis=0)
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


def change_score(model: CcaModel, u: ArrayLike, v: ArrayLike) -> NDArray[np.float64] | float:
    """Cosine similarity between the reference and test latent codes.

    ``u`` and ``v`` are single samples or matrices of co-located samples
    (one per column); a matrix input returns one score per column.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    single = u.ndim == 1
    zr = transform(model, u, "reference")
    zt = transform(model, v, "test")
    if zr.shape != zt.shape:
        raise ShapeError(f"{zr.shape[1]} reference samples vs {zt.shape[1]} test samples")
    s = cosine_rows(zr, zt)
    return float(s[0]) if single else s


def fit_ridge_classifier(z: ArrayLike, y: ArrayLike, lam: float = 1.0) -> tuple[NDArray[np.float64], float]:
    """Regularized least squares on latent codes with an unpenalized intercept.

    Returns ``(w, b)``; the decision score of a code ``z`` is ``w @ z + b``.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != y.size:
        raise ShapeError(f"{z.shape[1]} codes for {y.size} labels")
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    if np.unique(np.sign(y)).size < 2:
        raise DegenerateLabelsError("ridge classifier needs both classes")
    z_mean = z.mean(axis=1)
    y_mean = y.mean()
    zc = z - z_mean[:, None]
    w = np.linalg.solve(zc @ zc.T + lam * np.eye(z.shape[0]), zc @ (y - y_mean))
    return w, float(y_mean - w @ z_mean)


def _error_curves(scores, positive):
    """FNR and FPR at each distinct score used as threshold (predict positive iff score >= t)."""
    thresholds = np.unique(scores)
    pos = np.sort(scores[positive])
    neg = np.sort(scores[~positive])
    fnr = np.searchsorted(pos, thresholds, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg, thresholds, side="left") / neg.size
    return thresholds, fnr, fpr


def compute_eer(s: ScoredSet) -> tuple[float, float]:
    """Equal error rate and the threshold where it is attained.

    FNR - FPR is nondecreasing in the threshold; the EER is read at its
    zero crossing, interpolating linearly between the two adjacent
    candidate thresholds when no threshold hits zero exactly.
    """
    scores = np.asarray(s.scores, dtype=np.float64).ravel()
    labels = np.asarray(s.labels).ravel()
    positive = labels == Label.NO_CHANGE
    negative = labels == Label.CHANGE
    if not positive.any() or not negative.any():
        raise DegenerateLabelsError("EER needs both change and no-change samples")
    keep = positive | negative
    scores, positive = scores[keep], positive[keep]
    thr, fnr, fpr = _error_curves(scores, positive)
    # one step past the top score everything is predicted negative
    thr = np.append(thr, np.nextafter(thr[-1], np.inf))
    fnr = np.append(fnr, 1.0)
    fpr = np.append(fpr, 0.0)
    diff = fnr - fpr
    b = int(np.argmax(diff >= 0))
    if diff[b] == 0 or b == 0:
        return float(0.5 * (fnr[b] + fpr[b])), float(thr[b])
    a = b - 1
    alpha = -diff[a] / (diff[b] - diff[a])
    eer = fnr[a] + alpha * (fnr[b] - fnr[a])
    return float(eer), float(thr[a] + alpha * (thr[b] - thr[a]))


def toy_features(toy: ArcToy) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Raw reference and test features of the arc toy (colors, one sample per column)."""
    return toy.colors_r, toy.colors_t


def latent_affinity(model: CcaModel, x_r: ArrayLike, x_t: ArrayLike) -> NDArray[np.float64]:
    """Matrix of latent inner products, reference samples by test samples."""
    return transform(model, x_r, "reference").T @ transform(model, x_t, "test")


def predicted_matches(model: CcaModel, toy: ArcToy) -> NDArray[np.int64]:
    x_r, x_t = toy_features(toy)
    return np.argmax(latent_affinity(model, x_r, x_t), axis=1)


def realignment_accuracy(model: CcaModel, toy: ArcToy) -> float:
    """Fraction of reference samples whose highest-correlation test sample is the true partner."""
    return float(np.mean(predicted_matches(model, toy) == toy.truth_pairing))
