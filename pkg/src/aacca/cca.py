"""Standard and alignment-agnostic CCA solvers.

All covariance-like quantities use the 1/n normalization. The solver works
on data matrices divided by sqrt(n) so that ``X X'`` is a covariance and
the cross term ``V D' U'`` reduces to ``C_tr`` for identity pairing; this
keeps the context terms and the covariances on the same scale.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray

from .context import ContextSystem
from .errors import (
    ConfigError,
    DegenerateCorrelationError,
    NotPositiveDefiniteError,
    PairingError,
    ParseError,
    ShapeError,
)
from .linalg import (
    DEFAULT_EPS_REL,
    FeatureMatrix,
    covariance,
    entrywise_l1,
    ridge_regularize,
    solve_gen_sym_eig,
    spd_inverse,
)
from .pairing import PairingMatrix

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class AaCcaConfig:
    beta: float = 0.01
    k: int | None = None
    tol: float = 1e-6
    max_iter: int = 50
    eps_rel: float = DEFAULT_EPS_REL
    gamma_floor: float = 1e-8

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.tol <= 0 or self.max_iter < 1 or self.eps_rel < 0 or self.gamma_floor <= 0:
            raise ConfigError("tol, max_iter and gamma_floor must be positive, eps_rel nonnegative")


@dataclass(frozen=True)
class CcaModel:
    """Fitted projections; columns are paired canonical directions.

    ``p_r`` is d_u x k, ``p_t`` is d_v x k and ``gammas`` holds the k
    canonical correlations in descending order.
    """

    p_r: NDArray[np.float64]
    p_t: NDArray[np.float64]
    gammas: NDArray[np.float64]
    col_means_r: NDArray[np.float64]
    col_means_t: NDArray[np.float64]
    beta: float = 0.0
    ridge_used: float = 0.0

    @property
    def k(self) -> int:
        return self.gammas.size

    def transform(self, x: ArrayLike, side: Literal["reference", "test"]) -> NDArray[np.float64]:
        return transform(self, x, side)


@dataclass
class IterationRecord:
    k_residual_l1: float
    k_norm_l1: float
    gamma_min: float
    contraction_ratio: float | None


@dataclass
class FitTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    lipschitz_L: float | None = None
    beta_max: float | None = None
    bound_violated: bool = False
    k_tr: NDArray[np.float64] | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def residuals(self) -> list[float]:
        return [r.k_residual_l1 for r in self.records]

    def to_rows(self) -> list[dict]:
        return [
            {"iteration": i + 1, "k_residual_l1": r.k_residual_l1, "k_norm_l1": r.k_norm_l1,
             "gamma_min": r.gamma_min, "contraction_ratio": r.contraction_ratio}
            for i, r in enumerate(self.records)
        ]


@dataclass(frozen=True)
class _Problem:
    """Scaled data, ridged covariances and the P-independent context Gram matrices."""

    us: NDArray[np.float64]
    vs: NDArray[np.float64]
    c_rr: NDArray[np.float64]
    c_tt: NDArray[np.float64]
    c_tt_inv: NDArray[np.float64]
    ridge: float
    grams_u: tuple[NDArray[np.float64], ...] = ()
    grams_v: tuple[NDArray[np.float64], ...] = ()


def _ridged_covariances(u: FeatureMatrix, v: FeatureMatrix, eps_rel: float):
    c_rr, eps_r = ridge_regularize(covariance(u), eps_rel)
    c_tt, eps_t = ridge_regularize(covariance(v), eps_rel)
    return c_rr, c_tt, max(eps_r, eps_t)


def context_grams(x: NDArray[np.float64], ctx: ContextSystem) -> tuple[NDArray[np.float64], ...]:
    """``X W^c X'`` for every neighbor type."""
    if ctx.n != x.shape[1]:
        raise ShapeError(f"context built for {ctx.n} samples, data has {x.shape[1]}")
    return tuple(np.asarray(x @ (w @ x.T)) for w in ctx.w_list)


def _k_tr_from_grams(
    base: NDArray[np.float64],
    grams_u: Sequence[NDArray[np.float64]],
    grams_v: Sequence[NDArray[np.float64]],
    p_r: NDArray[np.float64],
    p_t: NDArray[np.float64],
    beta: float,
) -> NDArray[np.float64]:
    if beta == 0.0 or not grams_u:
        return base.copy()
    m = p_t @ p_r.T
    ctx = np.zeros_like(base)
    for a_c, b_c in zip(grams_v, grams_u):
        ctx += a_c @ m @ b_c.T + a_c.T @ m @ b_c
    return base + beta * ctx


def _cross_term(us: NDArray, vs: NDArray, d: PairingMatrix) -> NDArray[np.float64]:
    if d.shape != (us.shape[1], vs.shape[1]):
        raise ShapeError(f"pairing is {d.shape}, data has {us.shape[1]} x {vs.shape[1]} samples")
    return vs @ d.right_apply(us).T


def compute_K_tr(
    u: NDArray | FeatureMatrix,
    v: NDArray | FeatureMatrix,
    d: PairingMatrix,
    ctx_u: ContextSystem,
    ctx_v: ContextSystem,
    p_r: NDArray,
    p_t: NDArray,
    beta: float,
) -> NDArray[np.float64]:
    """Cross matrix ``K_tr`` (d_v x d_u) for fixed projections.

    ``V D' U' + beta sum_c V W_v^c V' P_t P_r' U W_u^c' U'
    + beta sum_c V W_v^c' V' P_t P_r' U W_u^c U'``, evaluated on the
    matrices exactly as given (``FeatureMatrix`` inputs contribute their
    centered data).
    """
    us = u.data if isinstance(u, FeatureMatrix) else np.asarray(u, dtype=np.float64)
    vs = v.data if isinstance(v, FeatureMatrix) else np.asarray(v, dtype=np.float64)
    if ctx_u.c_count != ctx_v.c_count:
        raise ShapeError(f"context type counts differ: {ctx_u.c_count} vs {ctx_v.c_count}")
    p_r = np.asarray(p_r, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    if p_r.shape[0] != us.shape[0] or p_t.shape[0] != vs.shape[0] or p_r.shape[1] != p_t.shape[1]:
        raise ShapeError(f"projection shapes {p_r.shape}, {p_t.shape} do not fit data dims {us.shape[0]}, {vs.shape[0]}")
    base = _cross_term(us, vs, d)
    return _k_tr_from_grams(base, context_grams(us, ctx_u), context_grams(vs, ctx_v), p_r, p_t, beta)


def _solve_projections(k_tr, c_rr, c_tt, k, gamma_floor):
    """Solve ``K_rt C_tt^-1 K_tr p = g^2 C_rr p`` and derive ``p_t = C_tt^-1 K_tr p / g`` per column.

    Everything on the test side goes through ``C_tt = L L'`` so that
    ``p_t' C_tt p_t = 1`` holds even along ridge-dominated directions.
    """
    try:
        chol = np.linalg.cholesky(c_tt)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("test covariance is not positive definite; increase the ridge") from exc
    wk = sla.solve_triangular(chol, k_tr, lower=True)
    a = wk.T @ wk
    sol = solve_gen_sym_eig(0.5 * (a + a.T), c_rr, k)
    w = wk @ sol.eigenvectors
    gammas = np.linalg.norm(w, axis=0)
    keep = gammas > gamma_floor
    if not np.any(keep):
        raise DegenerateCorrelationError(f"no canonical correlation above {gamma_floor:g}")
    gammas = gammas[keep]
    p_r = sol.eigenvectors[:, keep]
    p_t = sla.solve_triangular(chol.T, w[:, keep], lower=False) / gammas
    return p_r, p_t, gammas


def _default_k(u: FeatureMatrix, v: FeatureMatrix, k: int | None) -> int:
    kmax = min(u.dim, v.dim)
    return kmax if k is None else min(int(k), kmax)


def fit_standard_cca(
    u: FeatureMatrix,
    v: FeatureMatrix,
    k: int | None = None,
    eps_rel: float = DEFAULT_EPS_REL,
    gamma_floor: float = 1e-8,
) -> CcaModel:
    """Classical CCA on strictly paired samples (column i of ``u`` with column i of ``v``).

    Components whose canonical correlation falls below ``gamma_floor`` are
    dropped, so the returned model may hold fewer than ``k`` columns.
    """
    if u.count != v.count:
        raise PairingError(f"standard CCA needs paired samples, got {u.count} and {v.count}")
    c_rr, c_tt, ridge = _ridged_covariances(u, v, eps_rel)
    c_tr = covariance(v, u)
    p_r, p_t, gammas = _solve_projections(c_tr, c_rr, c_tt, _default_k(u, v, k), gamma_floor)
    return CcaModel(p_r, p_t, gammas, u.col_means, v.col_means, 0.0, ridge)


def _gamma_min(gammas, floor):
    return max(float(gammas.min()), floor)


def _bound_scale(prob: _Problem) -> float:
    c_rr_inv = spd_inverse(prob.c_rr)
    return _bound_sum(prob.grams_u, prob.grams_v, c_rr_inv, prob.c_tt_inv)


def _bound_sum(grams_u, grams_v, c_rr_inv, c_tt_inv) -> float:
    # ||E 1_vu F'||_1 = ||(E 1_v)(F 1_u)'||_1 = ||E 1_v||_1 * ||F 1_u||_1
    total = 0.0
    for a_c, b_c in zip(grams_v, grams_u):
        e1 = (a_c @ c_tt_inv).sum(axis=1)
        f1 = (b_c @ c_rr_inv).sum(axis=1)
        g1 = (a_c.T @ c_tt_inv).sum(axis=1)
        h1 = (b_c.T @ c_rr_inv).sum(axis=1)
        total += np.abs(e1).sum() * np.abs(f1).sum() + np.abs(g1).sum() * np.abs(h1).sum()
    return float(total)


def lipschitz_bound(
    u: NDArray | FeatureMatrix,
    v: NDArray | FeatureMatrix,
    ctx_u: ContextSystem,
    ctx_v: ContextSystem,
    c_rr: ArrayLike,
    c_tt: ArrayLike,
    gamma_min: float,
) -> tuple[float, Callable[[float], float]]:
    """Largest admissible regularization weight and the contraction constant as a function of it.

    With ``E_c = V W_v^c V' C_tt^-1``, ``F_c = U W_u^c U' C_rr^-1`` and
    ``G_c``, ``H_c`` the same with transposed adjacencies,
    ``S = sum_c |E_c 1 F_c'|_1 + sum_c |G_c 1 H_c'|_1`` and
    ``L(beta) = beta S / gamma_min``; the admissible bound is
    ``gamma_min / S`` (infinite when every adjacency is empty).

    The data must be on the same scale as the covariances; pass
    ``FeatureMatrix.scaled()`` outputs together with 1/n covariances.
    """
    if gamma_min <= 0:
        raise ConfigError("gamma_min must be positive")
    us = u.data if isinstance(u, FeatureMatrix) else np.asarray(u, dtype=np.float64)
    vs = v.data if isinstance(v, FeatureMatrix) else np.asarray(v, dtype=np.float64)
    s = _bound_sum(
        context_grams(us, ctx_u), context_grams(vs, ctx_v),
        spd_inverse(c_rr), spd_inverse(c_tt),
    )
    if s == 0.0:
        return float("inf"), lambda beta: 0.0
    return gamma_min / s, lambda beta: beta * s / gamma_min


def _prepare(u, v, ctx_u, ctx_v, eps_rel, with_context) -> _Problem:
    c_rr, c_tt, ridge = _ridged_covariances(u, v, eps_rel)
    us, vs = u.scaled(), v.scaled()
    grams_u = grams_v = ()
    if with_context:
        if ctx_u.c_count != ctx_v.c_count:
            raise ShapeError(f"context type counts differ: {ctx_u.c_count} vs {ctx_v.c_count}")
        grams_u, grams_v = context_grams(us, ctx_u), context_grams(vs, ctx_v)
    return _Problem(us, vs, c_rr, c_tt, spd_inverse(c_tt), ridge, grams_u, grams_v)


def fit_aa_cca(
    u: FeatureMatrix,
    v: FeatureMatrix,
    d: PairingMatrix,
    ctx_u: ContextSystem | None,
    ctx_v: ContextSystem | None,
    config: AaCcaConfig = AaCcaConfig(),
) -> tuple[CcaModel, FitTrace]:
    """Alignment-agnostic CCA by fixed-point iteration on ``K_tr``.

    Starting from the beta = 0 solution, each iteration rebuilds ``K_tr``
    from the current projections and re-solves the generalized
    eigenproblem. The loop stops once the relative L1 change of ``K_tr``
    drops below ``config.tol``; reaching ``max_iter`` first returns the
    last iterate with ``trace.converged = False``. The returned
    projections are solved from the final ``K_tr`` (kept in
    ``trace.k_tr``).
    """
    if d.shape != (u.count, v.count):
        raise ShapeError(f"pairing is {d.shape}, data has {u.count} x {v.count} samples")
    use_ctx = config.beta > 0 and ctx_u is not None and ctx_v is not None
    prob = _prepare(u, v, ctx_u, ctx_v, config.eps_rel, use_ctx)
    k = _default_k(u, v, config.k)
    floor = config.gamma_floor

    def solve(k_tr):
        return _solve_projections(k_tr, prob.c_rr, prob.c_tt, k, floor)

    def k_of(p_r, p_t):
        return _k_tr_from_grams(base, prob.grams_u, prob.grams_v, p_r, p_t, config.beta)

    base = _cross_term(prob.us, prob.vs, d)
    p_r, p_t, gammas = solve(base)
    k_prev = k_of(p_r, p_t)
    trace = FitTrace()
    gamma_low = _gamma_min(gammas, floor)
    for _ in range(config.max_iter):
        p_r, p_t, gammas = solve(k_prev)
        k_new = k_of(p_r, p_t)
        resid = entrywise_l1(k_new - k_prev)
        norm = entrywise_l1(k_prev)
        prev = trace.records[-1].k_residual_l1 if trace.records else None
        ratio = resid / prev if prev else None
        g = _gamma_min(gammas, floor)
        gamma_low = min(gamma_low, g)
        trace.records.append(IterationRecord(resid, norm, g, ratio))
        k_prev = k_new
        if resid / max(norm, np.finfo(float).tiny) < config.tol:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("fixed point not reached after %d iterations", config.max_iter)
    p_r, p_t, gammas = solve(k_prev)
    trace.k_tr = k_prev

    if use_ctx:
        s = _bound_scale(prob)
        if s > 0:
            trace.beta_max = gamma_low / s
            trace.lipschitz_L = config.beta * s / gamma_low
        else:
            trace.beta_max, trace.lipschitz_L = float("inf"), 0.0
        trace.bound_violated = trace.lipschitz_L >= 1.0
        if trace.bound_violated:
            log.warning("beta exceeds contraction bound (beta=%g, bound=%g)", config.beta, trace.beta_max)
    model = CcaModel(p_r, p_t, gammas, u.col_means, v.col_means, float(config.beta), prob.ridge)
    return model, trace


def _side_parts(model: CcaModel, side: str):
    if side in ("reference", "r", "ref"):
        return model.p_r, model.col_means_r
    if side in ("test", "t"):
        return model.p_t, model.col_means_t
    raise ConfigError(f"side must be 'reference' or 'test', got {side!r}")


def transform(model: CcaModel, x: ArrayLike, side: Literal["reference", "test"]) -> NDArray[np.float64]:
    """Latent codes (k x n) of raw samples stored one per column."""
    p, means = _side_parts(model, side)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != p.shape[0]:
        raise ShapeError(f"{side} features must have dimension {p.shape[0]}, got {x.shape[0]}")
    return p.T @ (x - means[:, None])


def latent_correlation(model: CcaModel, u: ArrayLike, v: ArrayLike) -> float:
    """Inner product of the latent codes of a reference and a test sample."""
    zr = transform(model, np.asarray(u, dtype=np.float64).ravel(), "reference")
    zt = transform(model, np.asarray(v, dtype=np.float64).ravel(), "test")
    return float(zr[:, 0] @ zt[:, 0])


def constraint_residuals(model: CcaModel, u: FeatureMatrix, v: FeatureMatrix, eps_rel: float = DEFAULT_EPS_REL):
    """Frobenius distances of ``P_r' C_rr P_r`` and ``P_t' C_tt P_t`` from the identity."""
    c_rr, c_tt, _ = _ridged_covariances(u, v, eps_rel)
    eye = np.eye(model.k)
    return (
        float(np.linalg.norm(model.p_r.T @ c_rr @ model.p_r - eye)),
        float(np.linalg.norm(model.p_t.T @ c_tt @ model.p_t - eye)),
    )


def fixed_point_identity_residual(
    model: CcaModel,
    k_tr: NDArray,
    u: FeatureMatrix,
    v: FeatureMatrix,
    eps_rel: float = DEFAULT_EPS_REL,
    include_sum: bool = False,
) -> float:
    """Largest relative violation of ``gamma_i p_t,i p_r,i' = C_tt^-1 K_tr p_r,i p_r,i'`` over components.

    With ``include_sum`` and every nonzero correlation retained, the summed
    form ``P_t diag(gamma) P_r' = C_tt^-1 K_tr C_rr^-1`` is checked too. That
    form multiplies roundoff by both inverse covariances, so it is only
    meaningful on well-conditioned data.
    """
    c_rr, c_tt, _ = _ridged_covariances(u, v, eps_rel)
    ck = spd_inverse(c_tt) @ k_tr
    worst = 0.0
    for i in range(model.k):
        pr = model.p_r[:, i]
        lhs = model.gammas[i] * np.outer(model.p_t[:, i], pr)
        rhs = np.outer(ck @ pr, pr)
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300)))
    if include_sum and model.k >= np.linalg.matrix_rank(k_tr):
        lhs = model.p_t @ np.diag(model.gammas) @ model.p_r.T
        rhs = ck @ spd_inverse(c_rr)
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300)))
    return worst


def _encode(a: NDArray) -> dict:
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes(order="F")).decode("ascii")}


def _decode(obj: dict) -> NDArray[np.float64]:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"], order="F").astype(np.float64)


def model_to_dict(model: CcaModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "beta": model.beta,
        "ridge_used": model.ridge_used,
        "p_r": _encode(model.p_r),
        "p_t": _encode(model.p_t),
        "gammas": _encode(model.gammas),
        "col_means_r": _encode(model.col_means_r),
        "col_means_t": _encode(model.col_means_t),
    }


def model_from_dict(obj: dict) -> CcaModel:
    if obj.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported model format_version {obj.get('format_version')!r}")
    model = CcaModel(
        p_r=_decode(obj["p_r"]),
        p_t=_decode(obj["p_t"]),
        gammas=_decode(obj["gammas"]),
        col_means_r=_decode(obj["col_means_r"]),
        col_means_t=_decode(obj["col_means_t"]),
        beta=float(obj["beta"]),
        ridge_used=float(obj["ridge_used"]),
    )
    if model.k != int(obj["k"]):
        raise ShapeError(f"model declares k={obj['k']} but stores {model.k} components")
    return model


def save_model(path, model: CcaModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> CcaModel:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not a model file ({exc})") from exc
    try:
        return model_from_dict(obj)
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        if isinstance(exc, (ParseError, ShapeError)):
            raise
        raise ParseError(f"{path}: malformed model ({exc!r})") from exc
