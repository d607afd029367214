"""Command-line front end.

Subcommands ``train``, ``gradient-check``, ``sample`` and ``evaluate``.
Exit status 0 on success, 1 on a runtime failure and 2 on a configuration
or validation error.  ``ALWS_THREADS`` caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import _svg, autodiff as ad, krr, metrics, oracles, trainer
from .config import ConfigError, RunConfig, load
from .models import SimulationError, datasets, make_model
from .trainer import fmt

logger = logging.getLogger("alws")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class RuntimeFailure(RuntimeError):
    """A command ran but could not produce a trustworthy result."""


# --------------------------------------------------------------------------- #
# data and snapshots

def make_dataset(cfg: RunConfig, model):
    """Observations for a run and an optional ground-truth record."""
    opts = dict(cfg.data)
    source = opts.pop("source")
    seed = opts.pop("seed", 0)
    rng = np.random.default_rng(seed)
    if source == "csv":
        if "path" not in opts:
            raise ConfigError("data.path is required when data.source = 'csv'")
        try:
            return datasets.load_csv(opts["path"]), None
        except (OSError, ValueError) as exc:
            raise ConfigError(f"data.path: {exc}") from None
    if source == "model":
        truth = model.init_params(rng)
        X = model.sample(truth, rng, int(opts.get("n", 100)))[1]
        return X, {"theta": truth.to_json()}
    if source == "pinwheel":
        return datasets.pinwheel(rng, **opts), None
    if source == "ica":
        X, W = datasets.ica(opts.get("n", 20000), model.dim_x, model.dim_z, model.sigma, rng)
        return X, {"W": W.tolist()}
    if source == "oscillator":
        traj = datasets.oscillator(rng=rng, **opts)
        return traj.observations.reshape(1, -1), {"latents": traj.latents.tolist()}
    raise ConfigError(f"data.source: unknown source {source!r}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def snapshot(cfg: RunConfig, theta, hp):
    return {"model": cfg.model_name, "model_kwargs": cfg.model_kwargs, "theta": theta.to_json(),
            "hyperparams": None if hp is None else hp.to_json()}


def load_snapshot(path):
    """Model and parameters from a ``theta_final.json`` file."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
        model = make_model(obj["model"], **obj.get("model_kwargs", {}))
        theta = ad.ParamVector.from_json(obj["theta"])
        model.check_params(theta)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load parameters from {path}: {exc}") from None
    return model, theta


def _output_dir(cfg):
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"run.output_dir: {exc}") from None
    return out


# --------------------------------------------------------------------------- #
# commands

def cmd_train(cfg: RunConfig):
    model = make_model(cfg.model_name, **cfg.model_kwargs)
    out = _output_dir(cfg)
    cfg.write_resolved(out / "config.resolved")
    X, truth = make_dataset(cfg, model)
    _write_rows(out / "data.csv", [f"x{i}" for i in range(X.shape[1])], X)
    if truth is not None:
        _dump_json(out / "truth.json", truth)
    config = cfg.train
    if X.shape[0] < config.batch_size:
        raise ConfigError(f"train.batch_size: {config.batch_size} exceeds the "
                          f"{X.shape[0]} data rows")
    try:
        theta, log = trainer.train(model, X, config)
    except (trainer.TrainingError, SimulationError, np.linalg.LinAlgError) as exc:
        raise RuntimeFailure(f"training failed: {exc}") from exc
    log.write_csv(out / "train_log.csv")
    log.write_timing(out / "timing.csv")
    _dump_json(out / "theta_final.json", snapshot(cfg, theta, log.hp_final))
    if len(log):
        _svg.lines(out / "loss.svg", {"jbar": (log.column("iteration"), log.column("jbar"))},
                   title=f"{cfg.model_name} wake objective", xlabel="iteration",
                   ylabel="Jbar")
    logger.info("trained %s for %d iterations; outputs in %s", cfg.model_name, len(log), out)


def gradient_grid(cfg: RunConfig, model, X):
    """Per-grid-point rows of amortised and importance-sampling gradients in ``b``."""
    gc = {"grid_lo": 0.25, "grid_hi": 2.0, "grid_n": 5, "n_sleep": 5000, "lam": 0.01,
          "n_proposals": 50000, "ess_min": 10.0, **cfg.gradient_check}
    theta0 = model.init_params(np.random.default_rng(cfg.train.seed))
    if "b" not in theta0.names() or theta0["b"].size != 2:
        raise ConfigError(f"gradient_check: model {cfg.model_name!r} has no two-entry 'b' "
                          "parameter to scan")
    grid = np.linspace(float(gc["grid_lo"]), float(gc["grid_hi"]), int(gc["grid_n"]))
    seeds = np.random.SeedSequence(cfg.train.seed).spawn(grid.size ** 2)
    rows = []
    for k, (b1, b2) in enumerate((u, v) for u in grid for v in grid):
        theta = theta0.replace(b=np.array([b1, b2]))
        r_fit, r_is = (np.random.default_rng(s) for s in seeds[k].spawn(2))
        est = trainer.estimate_gradient(model, theta, X, int(gc["n_sleep"]), float(gc["lam"]),
                                        r_fit, cfg.train.exp_fam_mode)["b"]
        ref, ess = oracles.is_gradient_mean(model, theta, X, int(gc["n_proposals"]), r_is)
        ref = ref["b"]
        cos = metrics.cosine(est, ref) if np.any(est) and np.any(ref) else float("nan")
        rel = float(np.linalg.norm(est - ref) / max(np.linalg.norm(ref), 1e-300))
        med = float(np.median(ess))
        rows.append([b1, b2, est[0], est[1], ref[0], ref[1], cos, rel, float(ess.min()), med,
                     int(med < float(gc["ess_min"]))])
    return rows


GRADIENT_COLUMNS = ("b1", "b2", "alws_1", "alws_2", "oracle_1", "oracle_2", "cosine",
                    "rel_error", "ess_min", "ess_median", "flagged")


def cmd_gradient_check(cfg: RunConfig):
    model = make_model(cfg.model_name, **cfg.model_kwargs)
    out = _output_dir(cfg)
    cfg.write_resolved(out / "config.resolved")
    path = cfg.gradient_check.get("data_path")
    X = datasets.load_csv(path) if path else make_dataset(cfg, model)[0]
    rows = gradient_grid(cfg, model, X)
    _write_rows(out / "gradient_check.csv", GRADIENT_COLUMNS, rows)
    R = np.array([r[:6] for r in rows], dtype=float)
    _svg.quiver(out / "gradient_check.svg", R[:, :2], {"ALWS": R[:, 2:4], "IS oracle": R[:, 4:6]},
                title="log-likelihood gradient in b", xlabel="b1", ylabel="b2")
    flagged = sum(r[-1] for r in rows)
    if flagged > 0.1 * len(rows):
        raise RuntimeFailure(f"{flagged} of {len(rows)} grid points have oracle ESS below "
                             f"{cfg.gradient_check.get('ess_min', 10.0)}")


def cmd_sample(model, theta, n, seed, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    header = [f"x{i}" for i in range(model.dim_x)]
    X = model.sample(theta, np.random.default_rng(seed), n)[1] if n > 0 else np.empty((0, model.dim_x))
    _write_rows(out / "samples.csv", header, X)
    if model.dynamical and n > 0:
        t = np.arange(model.dim_x)
        series = {f"sample {i}": (t, X[i, :model.dim_x]) for i in range(min(n, 5))}
        _svg.lines(out / "samples.svg", series, title=f"{model.name} samples", xlabel="t",
                   ylabel="x")


def cmd_evaluate(cfg: RunConfig, model, theta, seed):
    out = _output_dir(cfg)
    X, _ = make_dataset(cfg, model)
    wanted = cfg.eval.get("metrics", ["mmd"])
    if isinstance(wanted, str):
        wanted = [wanted]
    n = int(cfg.eval.get("n_samples", 1000))
    rng = np.random.default_rng(seed)
    result = {"model": model.name, "seed": seed}
    for name in wanted:
        if name == "mmd":
            S = model.sample(theta, rng, n)[1]
            D = X if X.shape[0] <= n else X[rng.choice(X.shape[0], n, replace=False)]
            r = metrics.mmd2_unbiased(S, D)
            result["mmd"] = {"mmd2": r.mmd2, "n_x": r.n_x, "n_y": r.n_y,
                             "bandwidth": r.kernel.bandwidth}
        elif name == "basis_match":
            path = Path(cfg.eval.get("truth", Path(cfg.output_dir) / "truth.json"))
            if not path.exists():
                raise ConfigError(f"eval.truth: ground-truth file {path} not found")
            with open(path) as fh:
                W_true = np.asarray(json.load(fh)["W"])
            score, perm, signs = metrics.basis_match(W_true, theta["W"])
            result["basis_match"] = {"mean_abs_corr": score, "permutation": perm.tolist(),
                                     "signs": signs.tolist()}
        elif name == "traj_mse":
            if not model.dynamical:
                raise ConfigError(f"eval.metrics: traj_mse needs a dynamical model")
            ref = X[0]
            errs = [metrics.traj_mse(model.sample(theta, rng, 1)[1][0], ref) for _ in range(n)]
            result["traj_mse"] = float(np.mean(errs))
        elif name == "one_step_mse":
            if not hasattr(model, "one_step_predictions"):
                raise ConfigError("eval.metrics: one_step_mse needs the oscillator model")
            result["one_step_mse"] = metrics.one_step_ahead_mse(model, theta, X[0])
        else:
            raise ConfigError(f"eval.metrics: unknown metric {name!r}")
    _dump_json(out / "eval.json", result)
    return result


# --------------------------------------------------------------------------- #

def build_parser():
    parser = argparse.ArgumentParser(prog="alws", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="INI configuration file")
            p.add_argument("--preset", help="named preset used as the base configuration")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--output-dir", help="overrides run.output_dir")

    common(sub.add_parser("train", help="run wake-sleep training"))
    common(sub.add_parser("gradient-check", help="compare gradients with the IS oracle"))
    p = sub.add_parser("sample", help="draw observations from saved parameters")
    p.add_argument("--theta", required=True, help="theta_final.json from a training run")
    p.add_argument("--n", type=int, default=100)
    common(p, config=False)
    p = sub.add_parser("evaluate", help="compute metrics for saved parameters")
    p.add_argument("--theta", required=True)
    common(p)
    return parser


def _thread_limit():
    value = os.environ.get("ALWS_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"ALWS_THREADS must be a positive integer, got {value!r}") from None
    return threadpool_limits(limits=n)


def _run(args):
    with _thread_limit():
        if args.command == "sample":
            if args.n < 0:
                raise ConfigError("--n must be >= 0")
            model, theta = load_snapshot(args.theta)
            seed = 0 if args.seed is None else args.seed
            cmd_sample(model, theta, args.n, seed, args.output_dir or ".")
            return
        cfg = load(args.config, args.preset, args.seed, args.output_dir)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "gradient-check":
            cmd_gradient_check(cfg)
        else:
            model, theta = load_snapshot(args.theta)
            if model.name != cfg.model_name:
                raise ConfigError(f"model.name: parameters are for {model.name!r}, config "
                                  f"names {cfg.model_name!r}")
            cmd_evaluate(cfg, model, theta, cfg.train.seed)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, trainer.TrainingError, SimulationError, oracles.OracleError,
            krr.FitError, np.linalg.LinAlgError, ad.NonFiniteError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
