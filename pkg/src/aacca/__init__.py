"""Alignment-agnostic canonical correlation analysis.

Two-view projections learned from imperfectly paired samples: a soft
cross-affinity matrix replaces one-to-one pairing, and an optional
context term ties each pair's latent correlation to that of its typed
spatial neighbors. The regularized problem is solved by fixed-point
iteration on the cross-covariance surrogate ``K_tr``.
"""

__version__ = "0.1.0"

from .cca import (
    AaCcaConfig,
    CcaModel,
    FitTrace,
    compute_K_tr,
    fit_aa_cca,
    fit_standard_cca,
    latent_correlation,
    lipschitz_bound,
    load_model,
    save_model,
    transform,
)
from .context import ContextSystem, build_grid_typed_8, build_isotropic_knn
from .errors import AaccaError, ConfigError, DataError, NumericalError
from .evaluation import ScoredSet, change_score, compute_eer, fit_ridge_classifier, realignment_accuracy
from .linalg import FeatureMatrix, center_columns, covariance, ridge_regularize, solve_gen_sym_eig
from .pairing import (
    Label,
    PairingMatrix,
    RbfKernel,
    build_dense_crosssim_D,
    build_relaxed_D,
    build_strict_D,
    rbf_scale_from_quantile,
)

__all__ = [
    "AaCcaConfig",
    "AaccaError",
    "CcaModel",
    "ConfigError",
    "ContextSystem",
    "DataError",
    "FeatureMatrix",
    "FitTrace",
    "Label",
    "NumericalError",
    "PairingMatrix",
    "RbfKernel",
    "ScoredSet",
    "build_dense_crosssim_D",
    "build_grid_typed_8",
    "build_isotropic_knn",
    "build_relaxed_D",
    "build_strict_D",
    "center_columns",
    "change_score",
    "compute_K_tr",
    "compute_eer",
    "covariance",
    "fit_aa_cca",
    "fit_ridge_classifier",
    "fit_standard_cca",
    "latent_correlation",
    "lipschitz_bound",
    "load_model",
    "rbf_scale_from_quantile",
    "realignment_accuracy",
    "ridge_regularize",
    "save_model",
    "solve_gen_sym_eig",
    "transform",
]
