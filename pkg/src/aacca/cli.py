"""Command-line entry point: ``aacca {toy,synth,beta-sweep,fit,transform}``.

Every command writes plain CSV/JSON into ``--out`` (created if missing).
Scores treat "no-change" as the positive class and compare co-located
reference/test pairs. Exit codes: 0 success, 1 configuration or usage
error, 2 data or shape error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cca import (
    AaCcaConfig,
    CcaModel,
    FitTrace,
    constraint_residuals,
    fit_aa_cca,
    load_model,
    save_model,
    transform,
)
from .context import build_grid_typed_8, build_isotropic_knn
from .datasets import load_feature_csv, load_labels_csv, save_feature_csv
from .errors import AaccaError, ConfigError, ShapeError
from .evaluation import toy_features
from .experiments import (
    DISPLAY_NAMES,
    SynthSettings,
    ToySettings,
    parse_config_list,
    parse_variant,
    run_beta_sweep,
    run_toy,
    run_variant,
    split_cells,
    synth_scene,
)
from .linalg import center_columns, covariance, ridge_regularize
from .pairing import build_dense_crosssim_D, build_strict_D, rbf_scale_from_quantile

log = logging.getLogger("aacca")

DEFAULT_BETA_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0)
BOUND_WARNING = "beta exceeds contraction bound"
NOTES = {
    "positive_class": "no-change",
    "scoring": "cosine similarity of co-located (i, i) latent codes",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _threads() -> int:
    raw = os.environ.get("AACCA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AACCA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"AACCA_THREADS must be a positive integer, got {raw!r}")
    return n


def _parallel_map(fn, items):
    """Map in input order, over at most AACCA_THREADS worker threads."""
    items = list(items)
    workers = min(_threads(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path: Path, payload: dict, args) -> None:
    body = dict(payload)
    if not args.no_timestamp:
        body["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if x is None else (repr(float(x)) if isinstance(x, float) else x) for x in row])


def _write_trace(path: Path, trace: FitTrace) -> None:
    rows = trace.to_rows()
    header = ["iteration", "k_residual_l1", "k_norm_l1", "gamma_min", "contraction_ratio"]
    _write_rows(path, header, ([r[h] for h in header] for r in rows))


def _trace_summary(trace: FitTrace) -> dict:
    return {
        "iterations": trace.iterations,
        "converged": trace.converged,
        "lipschitz_L": trace.lipschitz_L,
        "beta_max": trace.beta_max,
        "bound_violated": trace.bound_violated,
    }


def _warn_bound(trace: FitTrace) -> None:
    if trace.bound_violated:
        print(f"warning: {BOUND_WARNING} (L={trace.lipschitz_L:.6g}, beta_max={trace.beta_max:.6g})",
              file=sys.stderr)


def _config_overrides(args, allowed: set[str]) -> dict:
    """Values from ``--config``; flags given explicitly win over the file."""
    if not args.config:
        return {}
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in allowed:
            raise ConfigError(f"unknown config key {key!r}; allowed: {', '.join(sorted(allowed))}")
        if getattr(args, name, None) is None:
            out[name] = value
    return out


def _merge(args, base, mapping: dict[str, str]):
    """Apply config-file then flag values onto a settings dataclass."""
    allowed = set(mapping) | {"seed", "regime", "configs", "betas"}
    from_file = _config_overrides(args, allowed)
    for key, value in from_file.items():
        setattr(args, key, value)
    updates = {}
    for flag, attr in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[attr] = value
    try:
        return replace(base, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _solver_config(settings) -> AaCcaConfig:
    return AaCcaConfig(beta=settings.beta, k=settings.k, tol=settings.tol, max_iter=settings.max_iter)


# ---------------------------------------------------------------- commands


def cmd_toy(args) -> int:
    settings = _merge(args, ToySettings(), {
        "n": "n", "beta": "beta", "knn": "knn", "k": "k", "tol": "tol", "max_iter": "max_iter",
        "coord_noise": "coord_noise", "color_noise": "color_noise", "rotation": "rotation_deg",
    })
    if args.noise is not None:
        settings = replace(settings, coord_noise=args.noise, color_noise=args.noise)
    _solver_config(settings)  # validates solver knobs before any work
    seed = 0 if args.seed is None else int(args.seed)
    out = _out_dir(args)
    res = run_toy(seed, settings)
    _warn_bound(res.aa_trace)

    toy = res.toy
    _write_rows(out / "matches.csv", ["reference", "truth", "baseline_match", "aa_match"],
                zip(range(toy.n), toy.truth_pairing.tolist(), res.baseline_matches.tolist(),
                    res.aa_matches.tolist()))
    x_r, x_t = toy_features(toy)
    for side, x, tag in (("reference", x_r, "r"), ("test", x_t, "t")):
        z = transform(res.aa_model, x, side)
        save_feature_csv(out / f"latent_{tag}.csv", z.T)
    _write_trace(out / "trace_aa.csv", res.aa_trace)
    save_model(out / "model_baseline.json", res.baseline)
    save_model(out / "model_aa.json", res.aa_model)
    report = {
        "command": "toy",
        "seed": seed,
        "settings": asdict(settings),
        "baseline_accuracy": res.baseline_accuracy,
        "aa_accuracy": res.aa_accuracy,
        "clipped_samples": toy.clipped,
        "aa_trace": _trace_summary(res.aa_trace),
        "version": __version__,
    }
    _write_json(out / "report.json", report, args)
    print(f"baseline accuracy {res.baseline_accuracy:.4f}  AA-CCA accuracy {res.aa_accuracy:.4f}")
    return 0


_SYNTH_FLAGS = {
    "beta": "beta", "k": "k", "tol": "tol", "max_iter": "max_iter", "noise": "noise",
    "rows": "rows", "cols": "cols", "d": "d", "change_rate": "change_rate",
    "labeled_fraction": "labeled_fraction", "window": "window",
}


def _evaluation_record(res, split, settings, seed: int) -> dict:
    return {
        "config_name": res.variant.name,
        "display_name": DISPLAY_NAMES[res.variant.name],
        "eer": res.eers["unlabeled"],
        "threshold": res.thresholds["unlabeled"],
        "eers": dict(res.eers),
        "n_labeled": int(split.train.size + split.dev.size),
        "n_unlabeled": int(split.unlabeled.size),
        "iterations": res.trace.iterations,
        "converged": res.trace.converged,
        "beta": res.model.beta,
        "seed": seed,
        "lipschitz_L": res.trace.lipschitz_L,
    }


def cmd_synth(args) -> int:
    settings = _merge(args, SynthSettings(), _SYNTH_FLAGS)
    variants = parse_config_list(args.configs if args.configs is not None else ",".join(DISPLAY_NAMES))
    regime = args.regime or "residual"
    seed = 0 if args.seed is None else int(args.seed)
    _solver_config(settings)
    out = _out_dir(args)

    scene = synth_scene(regime, seed, settings)
    split = split_cells(scene.n, settings.labeled_fraction, settings.dev_fraction, seed)
    grid = build_grid_typed_8(scene.rows, scene.cols)
    results = _parallel_map(
        lambda v: run_variant(v, scene, split, settings, seed, contexts=(grid, grid)), variants
    )

    rows = []
    for res in results:
        _warn_bound(res.trace)
        _write_trace(out / f"trace_{res.variant.name}.csv", res.trace)
        save_model(out / f"model_{res.variant.name}.json", res.model)
        rows.append([res.variant.name, res.eers["train"], res.eers["dev"], res.eers["unlabeled"]])
    _write_rows(out / "eer_table.csv", ["config", "eer_train", "eer_dev", "eer_unlabeled"], rows)
    report = {
        "command": "synth",
        "regime": regime,
        "seed": seed,
        "settings": asdict(settings),
        "notes": NOTES,
        "runs": [_evaluation_record(r, split, settings, seed) for r in results],
        "version": __version__,
    }
    _write_json(out / "report.json", report, args)
    for r in rows:
        print(f"{r[0]:<16} train {r[1]:.4f}  dev {r[2]:.4f}  unlabeled {r[3]:.4f}")
    return 0


def _parse_betas(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        values = list(text)
    else:
        values = [t for t in (s.strip() for s in str(text).split(",")) if t]
    try:
        betas = [float(b) for b in values]
    except ValueError:
        raise ConfigError(f"beta grid must be a comma list of numbers, got {text!r}") from None
    if not betas:
        raise ConfigError("beta grid is empty")
    if any(b < 0 or not np.isfinite(b) for b in betas):
        raise ConfigError("beta values must be finite and nonnegative")
    return betas


def cmd_beta_sweep(args) -> int:
    settings = _merge(args, SynthSettings(), _SYNTH_FLAGS)
    betas = _parse_betas(args.betas) if args.betas is not None else list(DEFAULT_BETA_GRID)
    # defaults follow the reference sweep: Sup+CA under strong misalignment
    variant = parse_variant(args.configs if args.configs is not None else "sup+ca")
    regime = args.regime or "strong"
    seed = 0 if args.seed is None else int(args.seed)
    _solver_config(settings)
    out = _out_dir(args)

    results = _parallel_map(lambda b: run_beta_sweep(regime, variant, [b], seed, settings)[0], betas)
    rows = []
    for beta, res in zip(betas, results):
        _warn_bound(res.trace)
        rows.append([beta, res.eers["train"], res.eers["dev"], res.eers["unlabeled"],
                     res.trace.iterations, res.trace.lipschitz_L])
    _write_rows(out / "beta_sweep.csv", ["beta", "eer_train", "eer_dev", "eer_unlabeled", "iterations", "L"], rows)
    best = min(range(len(betas)), key=lambda i: (rows[i][2], i))
    report = {
        "command": "beta-sweep",
        "config_name": variant.name,
        "regime": regime,
        "seed": seed,
        "settings": asdict(settings),
        "notes": NOTES,
        "betas": betas,
        "best_dev_beta": betas[best],
        "rows": [dict(zip(["beta", "eer_train", "eer_dev", "eer_unlabeled", "iterations", "L"], r)) for r in rows],
        "version": __version__,
    }
    _write_json(out / "report.json", report, args)
    for r in rows:
        print(f"beta {r[0]:<8g} dev EER {r[2]:.4f}  iterations {r[4]}")
    return 0


def _read_view(path) -> np.ndarray:
    # files hold one sample per row; the library works feature-major
    return load_feature_csv(path).T


def _read_coords(path) -> np.ndarray:
    return load_feature_csv(path)


def cmd_fit(args) -> int:
    x_r = _read_view(args.ref)
    x_t = _read_view(args.test)
    config = AaCcaConfig(
        beta=0.0 if args.beta is None else args.beta,
        k=args.k, tol=1e-6 if args.tol is None else args.tol,
        max_iter=50 if args.max_iter is None else args.max_iter,
    )
    u, v = center_columns(x_r), center_columns(x_t)
    if args.pairing == "strict":
        if not args.labels:
            raise ConfigError("strict pairing needs --labels")
        labels = load_labels_csv(args.labels)
        if u.count != v.count or labels.size != u.count:
            raise ShapeError(f"strict pairing needs equal counts: {u.count} reference, "
                             f"{v.count} test, {labels.size} labels")
        d = build_strict_D(labels)
    else:
        seed = 0 if args.seed is None else int(args.seed)
        d = build_dense_crosssim_D(u, v, rbf_scale_from_quantile(u, v, args.quantile, seed=seed))

    ctx_u = ctx_v = None
    if args.grid:
        rows, cols = args.grid
        ctx_u = ctx_v = build_grid_typed_8(rows, cols)
        if ctx_u.n != u.count or ctx_v.n != v.count:
            raise ShapeError(f"grid has {ctx_u.n} cells, data has {u.count} and {v.count} samples")
    elif args.coords_ref or args.coords_test:
        if not (args.coords_ref and args.coords_test):
            raise ConfigError("--coords-ref and --coords-test go together")
        ctx_u = build_isotropic_knn(_read_coords(args.coords_ref), args.knn)
        ctx_v = build_isotropic_knn(_read_coords(args.coords_test), args.knn)
        if ctx_u.n != u.count or ctx_v.n != v.count:
            raise ShapeError(f"coordinates cover {ctx_u.n} and {ctx_v.n} samples, "
                             f"data has {u.count} and {v.count}")
    elif config.beta > 0:
        raise ConfigError("beta > 0 needs a context: --grid ROWS COLS or --coords-ref/--coords-test")

    out = _out_dir(args)
    model, trace = fit_aa_cca(u, v, d, ctx_u, ctx_v, config)
    _warn_bound(trace)
    save_model(out / f"model_{args.pairing}.json", model)
    _write_trace(out / f"trace_{args.pairing}.csv", trace)
    report = {
        "command": "fit",
        "pairing": args.pairing,
        "k": model.k,
        "beta": model.beta,
        "gammas": model.gammas.tolist(),
        "ridge_used": model.ridge_used,
        "trace": _trace_summary(trace),
        "version": __version__,
    }
    if args.verify:
        report["verify"] = _verify(model, u, v)
    _write_json(out / "report.json", report, args)
    print(f"fitted k={model.k} in {trace.iterations} iteration(s); model written to {out}")
    if args.verify and not report["verify"]["ok"]:
        print("verification failed: latent codes are not whitened", file=sys.stderr)
        return 3
    return 0


def _verify(model: CcaModel, u, v, tol: float = 1e-6) -> dict:
    res_r, res_t = constraint_residuals(model, u, v)
    return {"constraint_residual_reference": res_r, "constraint_residual_test": res_t,
            "tolerance": tol, "ok": bool(res_r <= tol and res_t <= tol)}


def cmd_transform(args) -> int:
    model = load_model(args.model)
    x = _read_view(args.features)
    z = transform(model, x, args.side)
    out = _out_dir(args)
    save_feature_csv(out / "latent.csv", z.T)
    if args.verify:
        # only meaningful on the features the model was fitted on
        p = model.p_r if args.side == "reference" else model.p_t
        c, _ = ridge_regularize(covariance(center_columns(x)))
        gap = float(np.linalg.norm(p.T @ c @ p - np.eye(model.k)))
        print(f"whitening residual {gap:.3e}")
        if gap > 1e-6:
            print("verification failed: latent codes are not whitened", file=sys.stderr)
            return 3
    print(f"wrote {z.shape[1]} latent codes of dimension {z.shape[0]} to {out / 'latent.csv'}")
    return 0


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, solver: bool = True) -> None:
    p.add_argument("--config", help="JSON file with option values (flags win)")
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from report.json")
    if solver:
        p.add_argument("--beta", type=float)
        p.add_argument("--k", type=int, help="number of canonical components")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aacca", description="Alignment-agnostic CCA experiments and tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toy", help="arc realignment toy")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--knn", type=int)
    p.add_argument("--noise", type=float, help="coordinate and color noise at once")
    p.add_argument("--coord-noise", type=float)
    p.add_argument("--color-noise", type=float)
    p.add_argument("--rotation", type=float, help="rotation in degrees")
    p.set_defaults(func=cmd_toy)

    for name, func, help_ in (("synth", cmd_synth, "change detection on a synthetic scene"),
                              ("beta-sweep", cmd_beta_sweep, "EER across a grid of beta values")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--regime", choices=("residual", "strong"))
        p.add_argument("--configs", help="comma list of configuration names" if name == "synth"
                       else "configuration to sweep (default sup+ca)")
        p.add_argument("--noise", type=float)
        p.add_argument("--rows", type=int)
        p.add_argument("--cols", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--change-rate", type=float)
        p.add_argument("--labeled-fraction", type=float)
        p.add_argument("--window", type=int)
        if name == "beta-sweep":
            p.add_argument("--betas", help="comma list of beta values")
        p.set_defaults(func=func)

    p = sub.add_parser("fit", help="fit a model on feature CSV files")
    _common(p)
    p.add_argument("--ref", required=True, help="reference features CSV (one sample per row)")
    p.add_argument("--test", required=True, help="test features CSV")
    p.add_argument("--pairing", choices=("strict", "dense-crosssim"), default="strict")
    p.add_argument("--labels", help="labels CSV for strict pairing")
    p.add_argument("--quantile", type=float, default=0.1)
    p.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--coords-ref")
    p.add_argument("--coords-test")
    p.add_argument("--knn", type=int, default=10)
    p.add_argument("--verify", action="store_true", help="check the whitening constraints")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="map features into the latent space")
    _common(p, solver=False)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--side", choices=("reference", "test"), default="reference")
    p.add_argument("--verify", action="store_true", help="check that the codes are whitened")
    p.set_defaults(func=cmd_transform)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except AaccaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
