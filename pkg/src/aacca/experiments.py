"""Reproducible experiment drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .cca import AaCcaConfig, CcaModel, FitTrace, fit_aa_cca, fit_standard_cca
from .context import ContextSystem, build_grid_typed_8, build_isotropic_knn
from .datasets import ArcToy, PatchScene, generate_arc_toy, generate_patch_scene
from .errors import ConfigError
from .evaluation import ScoredSet, change_score, compute_eer, predicted_matches, toy_features
from .linalg import FeatureMatrix, center_columns
from .pairing import (
    Label,
    PairingMatrix,
    build_dense_crosssim_D,
    build_relaxed_D,
    build_strict_D,
    build_strict_semisup_D,
    rbf_scale_from_quantile,
)

log = logging.getLogger(__name__)

CONFIG_NAMES = (
    "standard",
    "sup+ca",
    "semisup",
    "semisup+ca",
    "res",
    "res+sup+ca",
    "res+semisup",
    "res+semisup+ca",
)

DISPLAY_NAMES = {
    "standard": "Standard CCA",
    "sup+ca": "Sup+CA CCA",
    "semisup": "SemiSup CCA",
    "semisup+ca": "SemiSup+CA CCA",
    "res": "Res CCA",
    "res+sup+ca": "Res+Sup+CA CCA",
    "res+semisup": "Res+SemiSup CCA",
    "res+semisup+ca": "Res+SemiSup+CA CCA",
}

REGIMES = {
    "residual": (0.0, 0.15),
    "strong": (0.5, 1.0),
}

SPLITS = ("train", "dev", "unlabeled")


@dataclass(frozen=True)
class CcaVariant:
    """One row of the configuration table: pairing x learning x context."""

    name: str
    relaxed: bool
    semisup: bool
    context: bool


def parse_variant(name: str) -> CcaVariant:
    key = name.strip().lower()
    if key not in CONFIG_NAMES:
        raise ConfigError(f"unknown configuration {name!r}; valid names: {', '.join(CONFIG_NAMES)}")
    return CcaVariant(key, key.startswith("res"), "semisup" in key, key.endswith("+ca"))


def parse_config_list(text: str) -> list[CcaVariant]:
    names = [t for t in (s.strip() for s in text.split(",")) if t]
    if not names:
        raise ConfigError(f"no configuration given; valid names: {', '.join(CONFIG_NAMES)}")
    return [parse_variant(n) for n in names]


@dataclass(frozen=True)
class SynthSettings:
    rows: int = 20
    cols: int = 20
    d: int = 64
    change_rate: float = 0.3
    noise: float = 0.3
    labeled_fraction: float = 0.5
    dev_fraction: float = 0.25
    window: int = 1
    quantile: float = 0.1
    max_unlabeled_pairs: int = 20_000
    beta: float = 0.01
    k: int | None = 10
    tol: float = 1e-6
    max_iter: int = 50
    eps_rel: float = 1e-6


@dataclass(frozen=True)
class SceneSplit:
    train: NDArray[np.int64]
    dev: NDArray[np.int64]
    unlabeled: NDArray[np.int64]

    def indices(self, split: str) -> NDArray[np.int64]:
        return getattr(self, split)


def split_cells(n: int, labeled_fraction: float, dev_fraction: float, seed: int) -> SceneSplit:
    """Seeded random partition of cell indices into labeled train/dev and unlabeled sets."""
    if not 0.0 < labeled_fraction < 1.0 or not 0.0 < dev_fraction < 1.0:
        raise ConfigError("labeled_fraction and dev_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_lab = int(round(labeled_fraction * n))
    n_dev = int(round(dev_fraction * n_lab))
    return SceneSplit(
        train=np.sort(perm[n_dev:n_lab]),
        dev=np.sort(perm[:n_dev]),
        unlabeled=np.sort(perm[n_lab:]),
    )


def window_pairs(rows: int, cols: int, cells: NDArray, radius: int) -> list[tuple[int, int]]:
    """All (i, j) with both cells in ``cells`` and j within a (2r+1)^2 window around i."""
    member = np.zeros(rows * cols, dtype=bool)
    member[cells] = True
    out = []
    for i in np.sort(cells):
        r, c = divmod(int(i), cols)
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and member[rr * cols + cc]:
                    out.append((int(i), rr * cols + cc))
    return out


def build_pairing(
    variant: CcaVariant,
    scene: PatchScene,
    u: FeatureMatrix,
    v: FeatureMatrix,
    split: SceneSplit,
    settings: SynthSettings,
    seed: int,
) -> PairingMatrix:
    """Pairing matrix of one configuration over all cells of the scene."""
    labels = scene.labels
    if not variant.relaxed:
        strict = np.zeros(scene.n, dtype=np.int64)
        strict[split.train] = labels[split.train]
        if not variant.semisup:
            return build_strict_D(strict)
        # unlabeled cells keep their co-located pair, weighted by similarity
        return build_strict_semisup_D(strict, u, v, _labeled_kernel(u, v, split, settings, seed))

    kernel = _labeled_kernel(u, v, split, settings, seed)
    pairs = window_pairs(scene.rows, scene.cols, split.train, settings.window)
    labeled = [
        (i, j, Label.NO_CHANGE if labels[i] == Label.NO_CHANGE and labels[j] == Label.NO_CHANGE else Label.CHANGE)
        for i, j in pairs
    ]
    unl: list[tuple[int, int]] = []
    if variant.semisup:
        unl = window_pairs(scene.rows, scene.cols, split.unlabeled, settings.window)
        if len(unl) > settings.max_unlabeled_pairs:
            keep = np.sort(np.random.default_rng(seed).choice(len(unl), settings.max_unlabeled_pairs, replace=False))
            unl = [unl[t] for t in keep]
    return build_relaxed_D(u, v, labeled, kernel, semisup=variant.semisup, unlabeled_pairs=unl)


def _labeled_kernel(u, v, split, settings, seed):
    lab_u = FeatureMatrix(u.data[:, split.train], u.col_means)
    lab_v = FeatureMatrix(v.data[:, split.train], v.col_means)
    return rbf_scale_from_quantile(lab_u, lab_v, settings.quantile, seed=seed)


@dataclass
class RunResult:
    variant: CcaVariant
    eers: dict[str, float]
    thresholds: dict[str, float]
    model: CcaModel
    trace: FitTrace


def run_variant(
    variant: CcaVariant,
    scene: PatchScene,
    split: SceneSplit,
    settings: SynthSettings,
    seed: int,
    beta: float | None = None,
    contexts: tuple[ContextSystem, ContextSystem] | None = None,
) -> RunResult:
    """Fit one configuration on a scene and score every split with co-located pairs."""
    u = center_columns(scene.features_r)
    v = center_columns(scene.features_t)
    d = build_pairing(variant, scene, u, v, split, settings, seed)
    if beta is None:
        beta = settings.beta if variant.context else 0.0
    if contexts is None:
        grid = build_grid_typed_8(scene.rows, scene.cols)
        contexts = (grid, grid)
    config = AaCcaConfig(beta=beta, k=settings.k, tol=settings.tol, max_iter=settings.max_iter,
                         eps_rel=settings.eps_rel)
    model, trace = fit_aa_cca(u, v, d, contexts[0], contexts[1], config)
    eers, thresholds = {}, {}
    for name in SPLITS:
        idx = split.indices(name)
        scores = change_score(model, scene.features_r[:, idx], scene.features_t[:, idx])
        eers[name], thresholds[name] = compute_eer(ScoredSet(scores, scene.labels[idx]))
    return RunResult(variant, eers, thresholds, model, trace)


def synth_scene(regime: str, seed: int, settings: SynthSettings) -> PatchScene:
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; valid: {', '.join(REGIMES)}")
    lo, hi = REGIMES[regime]
    return generate_patch_scene(settings.rows, settings.cols, settings.d, settings.change_rate,
                                lo, hi, settings.noise, seed)


def run_synth(regime: str, variants, seed: int, settings: SynthSettings = SynthSettings()) -> list[RunResult]:
    scene = synth_scene(regime, seed, settings)
    split = split_cells(scene.n, settings.labeled_fraction, settings.dev_fraction, seed)
    grid = build_grid_typed_8(scene.rows, scene.cols)
    return [run_variant(v, scene, split, settings, seed, contexts=(grid, grid)) for v in variants]


def run_beta_sweep(regime: str, variant: CcaVariant, betas, seed: int,
                   settings: SynthSettings = SynthSettings()) -> list[RunResult]:
    if len(betas) == 0:
        raise ConfigError("beta grid is empty")
    scene = synth_scene(regime, seed, settings)
    split = split_cells(scene.n, settings.labeled_fraction, settings.dev_fraction, seed)
    grid = build_grid_typed_8(scene.rows, scene.cols)
    return [run_variant(variant, scene, split, settings, seed, beta=float(b), contexts=(grid, grid)) for b in betas]


@dataclass(frozen=True)
class ToySettings:
    n: int = 100
    rotation_deg: float = 180.0
    coord_noise: float = 0.05
    color_noise: float = 0.05
    beta: float = 0.01
    knn: int = 10
    quantile: float = 0.1
    k: int | None = None
    tol: float = 1e-6
    max_iter: int = 50


@dataclass
class ToyResult:
    toy: ArcToy
    baseline: CcaModel
    aa_model: CcaModel
    aa_trace: FitTrace
    baseline_accuracy: float
    aa_accuracy: float
    baseline_matches: NDArray[np.int64]
    aa_matches: NDArray[np.int64]


def nearest_color_pairing(toy: ArcToy) -> NDArray[np.int64]:
    """Index of the test sample with the closest color for every reference sample."""
    x_r, x_t = toy_features(toy)
    return np.argmin(cdist(x_r.T, x_t.T), axis=1)


def run_toy(seed: int, settings: ToySettings = ToySettings()) -> ToyResult:
    """Baseline (standard CCA on nearest-color pairs) vs. AA-CCA (dense color affinity + kNN context)."""
    toy = generate_arc_toy(settings.n, settings.rotation_deg, settings.coord_noise, settings.color_noise, seed)
    x_r, x_t = toy_features(toy)
    u = center_columns(x_r)
    v = center_columns(x_t)
    nn = nearest_color_pairing(toy)
    baseline = fit_standard_cca(u, center_columns(x_t[:, nn]), settings.k)

    kernel = rbf_scale_from_quantile(u, v, settings.quantile, seed=seed)
    d = build_dense_crosssim_D(u, v, kernel)
    ctx_u = build_isotropic_knn(toy.coords_r.T, settings.knn)
    ctx_v = build_isotropic_knn(toy.coords_t.T, settings.knn)
    config = AaCcaConfig(beta=settings.beta, k=settings.k, tol=settings.tol, max_iter=settings.max_iter)
    model, trace = fit_aa_cca(u, v, d, ctx_u, ctx_v, config)
    base_matches = predicted_matches(baseline, toy)
    aa_matches = predicted_matches(model, toy)
    return ToyResult(
        toy, baseline, model, trace,
        float(np.mean(base_matches == toy.truth_pairing)),
        float(np.mean(aa_matches == toy.truth_pairing)),
        base_matches, aa_matches,
    )
