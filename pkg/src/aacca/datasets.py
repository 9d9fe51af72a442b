"""Seeded synthetic generators and feature-matrix file I/O.

Every generator is a pure function of its arguments; the same seed gives
bit-identical output.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage

from .errors import ConfigError, ParseError
from .pairing import Label

log = logging.getLogger(__name__)

HUE_SPAN = 1.0


@dataclass(frozen=True)
class ArcToy:
    """Two copies of a colored arc; the test copy is rotated, perturbed and shuffled.

    ``truth_pairing[i]`` is the column of the test arrays holding the
    partner of reference sample ``i``. Coordinates and colors are stored
    one sample per column.
    """

    coords_r: NDArray[np.float64]
    coords_t: NDArray[np.float64]
    colors_r: NDArray[np.float64]
    colors_t: NDArray[np.float64]
    truth_pairing: NDArray[np.int64]
    seed: int
    clipped: int = 0

    @property
    def n(self) -> int:
        return self.truth_pairing.size


@dataclass(frozen=True)
class PatchScene:
    """Grid of co-located reference/test patch features (one cell per column, row-major)."""

    rows: int
    cols: int
    features_r: NDArray[np.float64]
    features_t: NDArray[np.float64]
    labels: NDArray[np.int64]
    shifts: NDArray[np.float64]
    change_rate: float
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def coords(self) -> NDArray[np.float64]:
        r, c = np.divmod(np.arange(self.n), self.cols)
        return np.vstack([r, c]).astype(np.float64)


def hue_colors(s: ArrayLike) -> NDArray[np.float64]:
    """RGB in [0, 1] from a curvilinear coordinate in [0, 1] via a smooth cosine hue wheel.

    The centered colors lie on a circle, so every sample has the same
    distance to the mean color.
    """
    h = 2.0 * np.pi * HUE_SPAN * np.asarray(s, dtype=np.float64)
    phases = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    return 0.5 + 0.5 * np.cos(h[None, :] - phases[:, None])


def generate_arc_toy(
    n: int = 100,
    rotation_deg: float = 180.0,
    coord_noise: float = 0.05,
    color_noise: float = 0.05,
    seed: int = 0,
) -> ArcToy:
    """Sample ``n`` points on a unit semicircle and build the rotated, noisy, shuffled duplicate."""
    if n < 10:
        raise ConfigError(f"arc toy needs at least 10 points, got {n}")
    rng = np.random.default_rng(seed)
    s = (np.arange(n) + 0.5) / n
    theta = np.pi * s
    coords_r = np.vstack([np.cos(theta), np.sin(theta)])
    colors_r = hue_colors(s)

    centroid = coords_r.mean(axis=1, keepdims=True)
    a = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    coords_t = rot @ (coords_r - centroid) + centroid
    coords_t = coords_t + coord_noise * rng.standard_normal(coords_t.shape)
    colors_t = colors_r + color_noise * rng.standard_normal(colors_r.shape)
    outside = (colors_t < 0.0) | (colors_t > 1.0)
    clipped = int(np.any(outside, axis=0).sum())
    colors_t = np.clip(colors_t, 0.0, 1.0)

    perm = rng.permutation(n)  # storage slot -> original index
    truth = np.empty(n, dtype=np.int64)
    truth[perm] = np.arange(n)
    return ArcToy(coords_r, coords_t[:, perm], colors_r, colors_t[:, perm], truth, seed, clipped)


def _smooth_field(rng: np.random.Generator, rows: int, cols: int, d: int, n_waves: int = 6,
                  max_freq: float = 0.25) -> NDArray[np.float64]:
    """``d`` channels of random low-frequency cosine mixtures sampled on the grid, shape (d, rows, cols)."""
    r, c = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")
    out = np.zeros((d, rows, cols))
    for ch in range(d):
        freqs = rng.uniform(-max_freq, max_freq, size=(n_waves, 2))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_waves)
        amps = rng.standard_normal(n_waves) / np.sqrt(n_waves)
        for (fr, fc), ph, am in zip(freqs, phases, amps):
            out[ch] += am * np.cos(2.0 * np.pi * (fr * r + fc * c) + ph)
    return out


def _grow_blobs(rng: np.random.Generator, rows: int, cols: int, count: int) -> NDArray[np.bool_]:
    """Mark ``count`` cells as contiguous blobs grown from random seeds."""
    mask = np.zeros((rows, cols), dtype=bool)
    if count <= 0:
        return mask
    if count >= rows * cols:
        mask[:] = True
        return mask
    frontier: list[tuple[int, int]] = []
    marked = 0
    while marked < count:
        if not frontier or rng.uniform() < 0.05:
            free = np.flatnonzero(~mask.ravel())
            seed_cell = divmod(int(free[rng.integers(free.size)]), cols)
            frontier.append(seed_cell)
        idx = int(rng.integers(len(frontier)))
        r, c = frontier.pop(idx)
        if mask[r, c]:
            continue
        mask[r, c] = True
        marked += 1
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and not mask[rr, cc]:
                frontier.append((rr, cc))
    return mask


def _sample_bilinear(field_: NDArray[np.float64], pos_r: NDArray, pos_c: NDArray) -> NDArray[np.float64]:
    """Bilinear samples of every channel of ``field_`` (d, rows, cols) at fractional positions."""
    coords = np.vstack([pos_r.ravel(), pos_c.ravel()])
    return np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="nearest") for ch in field_])


def generate_patch_scene(
    rows: int = 20,
    cols: int = 20,
    d: int = 64,
    change_rate: float = 0.3,
    shift_lo: float = 0.0,
    shift_hi: float = 0.15,
    noise: float = 0.3,
    seed: int = 0,
) -> PatchScene:
    """Reference/test patch features over a grid with localized changes and misalignment.

    The reference features are a smooth random field sampled at the cell
    centers. The test features resample that field (bilinearly) at
    positions displaced per cell by ``(+-a, +-b)`` with ``a, b`` uniform in
    ``[shift_lo, shift_hi]`` cell units and random signs, then add
    Gaussian noise of standard deviation ``noise``. Inside the change blobs
    (contiguous, ``round(change_rate * rows * cols)`` cells) the test image
    holds an independent field, so displaced samples near a blob border mix
    both contents.
    """
    if rows * cols < 25:
        raise ConfigError(f"scene needs at least 25 cells, got {rows * cols}")
    if not 0.0 <= change_rate <= 1.0:
        raise ConfigError(f"change_rate must lie in [0, 1], got {change_rate}")
    if not 0.0 <= shift_lo <= shift_hi:
        raise ConfigError(f"need 0 <= shift_lo <= shift_hi, got {shift_lo}, {shift_hi}")
    if noise < 0 or d < 1:
        raise ConfigError("noise must be nonnegative and d positive")
    rng = np.random.default_rng(seed)
    n = rows * cols
    ref_field = _smooth_field(rng, rows, cols, d)
    alt_field = _smooth_field(rng, rows, cols, d)
    changed = _grow_blobs(rng, rows, cols, int(round(change_rate * n))).ravel()

    mags = rng.uniform(shift_lo, shift_hi, size=(2, n))
    signs = rng.choice([-1.0, 1.0], size=(2, n))
    shifts = mags * signs
    r, c = np.divmod(np.arange(n), cols)
    pos_r = r + shifts[0]
    pos_c = c + shifts[1]

    features_r = ref_field.reshape(d, n)
    # the test image carries the independent field inside the change blobs; sampling it at
    # displaced positions mixes content across blob borders the way misregistration does
    test_image = np.where(changed.reshape(rows, cols)[None], alt_field, ref_field)
    features_t = _sample_bilinear(test_image, pos_r, pos_c)
    features_t = features_t + noise * rng.standard_normal(features_t.shape)

    labels = np.where(changed, int(Label.CHANGE), int(Label.NO_CHANGE)).astype(np.int64)
    params = dict(rows=rows, cols=cols, d=d, change_rate=change_rate, shift_lo=shift_lo,
                  shift_hi=shift_hi, noise=noise, seed=seed)
    return PatchScene(rows, cols, features_r, features_t, labels, shifts, change_rate, params)


def neighbor_correlation_gap(scene: PatchScene, seed: int = 0) -> tuple[float, float]:
    """Mean feature correlation of horizontally adjacent reference cells vs. random cell pairs."""
    x = scene.features_r - scene.features_r.mean(axis=0, keepdims=True)
    x = x / np.maximum(np.linalg.norm(x, axis=0, keepdims=True), 1e-300)
    r, c = np.divmod(np.arange(scene.n), scene.cols)
    left = np.flatnonzero(c < scene.cols - 1)
    adjacent = float(np.mean(np.einsum("ij,ij->j", x[:, left], x[:, left + 1])))
    rng = np.random.default_rng(seed)
    a = rng.integers(scene.n, size=2000)
    b = rng.integers(scene.n, size=2000)
    random_pairs = float(np.mean(np.einsum("ij,ij->j", x[:, a], x[:, b])))
    return adjacent, random_pairs


def save_feature_csv(path, matrix: ArrayLike) -> None:
    """Write samples (one per row) with a ``f0,f1,...`` header and 17 significant digits."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ParseError(f"expected a 2-D matrix, got shape {m.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(m.shape[1])])
        for row in m:
            w.writerow([format(x, ".17g") for x in row])


def load_feature_csv(path) -> NDArray[np.float64]:
    """Read a feature CSV written by :func:`save_feature_csv`; returns samples x features."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                col = next(j for j, x in enumerate(row) if not _is_float(x))
                raise ParseError(f"{path}: row {lineno}, column {col + 1}: not a number: {row[col]!r}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def save_scene(directory, scene: PatchScene) -> Path:
    """Write a scene bundle: features_r.csv, features_t.csv, labels.csv, coords.csv, meta.json."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_csv(out / "features_r.csv", scene.features_r.T)
    save_feature_csv(out / "features_t.csv", scene.features_t.T)
    _save_columns(out / "labels.csv", ["label"], scene.labels[:, None])
    _save_columns(out / "coords.csv", ["row", "col"], scene.coords().T.astype(np.int64))
    meta = {"kind": "patch-scene", **scene.params}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def save_toy(directory, toy: ArcToy, params: dict) -> Path:
    """Write an arc toy bundle in the same layout as scenes."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_csv(out / "features_r.csv", toy.colors_r.T)
    save_feature_csv(out / "features_t.csv", toy.colors_t.T)
    _save_columns(out / "labels.csv", ["truth_pairing"], toy.truth_pairing[:, None])
    with open(out / "coords.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_r", "y_r", "x_t", "y_t"])
        for row in np.vstack([toy.coords_r, toy.coords_t]).T:
            w.writerow([format(x, ".17g") for x in row])
    meta = {"kind": "arc-toy", "seed": toy.seed, "clipped": toy.clipped, **params}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def _save_columns(path, header, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(np.asarray(values).tolist())


def load_labels_csv(path) -> NDArray[np.int64]:
    """Per-sample labels as integers (+1 no-change, -1 change, 0 unlabeled); names are accepted too."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: empty file")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(int(Label.parse(row[0])))
            except ValueError:
                raise ParseError(f"{path}: row {lineno}, column 1: not a label: {row[0]!r}") from None
    return np.array(out, dtype=np.int64)
