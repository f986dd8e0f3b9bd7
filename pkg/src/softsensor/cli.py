"""Command-line front end: ``softsensor {simulate,train,test,diagnose,metrics}``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, gainnet, metrics, training
from .config import (ExperimentConfig, PRESET_NAMES, format_flat, load_config_file, parse_value,
                     preset_values)
from .errors import (ConfigError, IntegrationDiverged, ObserverDiverged, SingularPointError,
                     TrainingFailed)
from .observer import run_observer
from .systems import read_trajectory_csv, simulate, write_trajectory_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("softsensor")


# --------------------------------------------------------------------------
# config assembly


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = parse_value(value)
    return out


def load_experiment(args):
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        values = preset_values(args.preset)
    elif args.config:
        values = load_config_file(args.config)
    else:
        raise ConfigError("need --preset NAME or --config FILE")
    values.update(_parse_set(args.set))
    if getattr(args, "seed", None) is not None:
        values["train.seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 1:
            raise ConfigError("--epochs must be >= 1")
        values["train.epochs"] = args.epochs
    return ExperimentConfig.from_flat(values)


def output_dir(args, cfg):
    if args.out:
        out = Path(args.out)
    elif os.environ.get("SOFTSENSOR_OUT"):
        out = Path(os.environ["SOFTSENSOR_OUT"])
    else:
        out = Path(cfg.out_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, command, cfg, extra=None):
    doc = {
        "tool": "softsensor",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_flat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "config.txt").write_text(format_flat(cfg.to_flat()))


def _numbered(out, stem, i, total, suffix=".csv"):
    return out / (f"{stem}{suffix}" if total == 1 else f"{stem}_{i:03d}{suffix}")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = load_experiment(args)
    out = output_dir(args, cfg)
    model = cfg.build_model()
    x0s, _ = cfg.training_pairs()
    paths = []
    for i, x0 in enumerate(x0s):
        traj = simulate(model, x0, cfg.dt, cfg.horizon, cfg.noise(cfg.noise_seed + i), cfg.projection_fn())
        paths.append(write_trajectory_csv(_numbered(out, "trajectory", i, len(x0s)), traj))
    write_manifest(out, "simulate", cfg, {"outputs": [p.name for p in paths]})
    print(f"wrote {len(paths)} trajectory file(s) to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_experiment(args)
    out = output_dir(args, cfg)
    model = cfg.build_model()
    x0s, xh0s = cfg.training_pairs()
    data = training.build_dataset(model, x0s, xh0s, cfg.dt, cfg.horizon, cfg.noise(), cfg.projection_fn())
    dims = gainnet.default_dims(model.n, model.m, model.p, tuple(cfg.hidden))
    init = gainnet.xavier_init(dims, model.n, model.m, seed=cfg.seed)
    ckpt = out / "checkpoint.json"
    every = max(1, cfg.epochs // 10)

    def progress(epoch, loss):
        if not args.quiet and (epoch % every == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch:6d}  loss {loss.total:.6e}  mse_d {loss.mse_d:.3e}  "
                  f"mse_y {loss.mse_y:.3e}  reg {loss.reg:.3e}")

    try:
        res = training.train(model, data, cfg.train_config(str(ckpt)), cfg.smc(), init,
                             nonnegative=cfg.projection, progress=progress)
    except TrainingFailed as exc:
        training.write_history_csv(out / "history.csv", exc.history)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    training.write_history_csv(out / "history.csv", res.history)
    write_manifest(out, "train", cfg, {
        "best_epoch": res.best_epoch,
        "best_loss": res.best_loss,
        "diverged_epochs": res.diverged_epochs,
        "stopped_early": res.stopped_early,
    })
    print(f"best loss {res.best_loss:.6e} at epoch {res.best_epoch}; checkpoint {ckpt}")
    return EXIT_OK


def evaluate(cfg, params, scaling, out=None):
    """Replay the observer on the configured test set; returns per-trajectory reports and pooled metrics."""
    model = cfg.build_model()
    if params.n != model.n or params.m != model.m or params.input_dim != gainnet.input_dim(model.p, model.m):
        raise ConfigError(
            f"checkpoint expects n={params.n}, m={params.m}, input {params.input_dim}; "
            f"model {model.name} has n={model.n}, m={model.m}, input {gainnet.input_dim(model.p, model.m)}")
    provider = gainnet.gain_provider(params, scaling)
    x0s, xh0s = cfg.test_pairs()
    reports, pairs = [], []
    base_noise = cfg.test_noise()
    for i, (x0, xh0) in enumerate(zip(x0s, xh0s)):
        noise = cfg.noise(base_noise.seed + i) if base_noise.target != "none" else base_noise
        traj = simulate(model, x0, cfg.dt, cfg.test_T, noise, cfg.projection_fn())
        est = run_observer(model, traj, provider, xh0, cfg.smc(), cfg.projection_fn())
        rep = metrics.aggregate_metrics(traj, est, cfg.test_burn_in, cfg.threshold, cfg.dwell)
        reports.append(rep)
        pairs.append((traj, est))
        if out is not None:
            write_trajectory_csv(_numbered(out, "truth", i, len(x0s)), traj)
            write_trajectory_csv(_numbered(out, "estimate", i, len(x0s)), est, state_prefix="xhat")
    pooled = metrics.pooled_metrics(pairs, cfg.test_burn_in)
    return reports, pooled, pairs


def _print_metrics(reports, pooled):
    print(f"{'trajectory':>10} {'MSE':>13} {'RMSE':>13} {'MAE':>13} {'SMAPE%':>10} {'t_conv':>8}")
    for i, r in enumerate(reports):
        conv = "-" if r.convergence_time_s is None else f"{r.convergence_time_s:.2f}"
        print(f"{i:>10} {r.mse:13.6e} {r.rmse:13.6e} {r.mae:13.6e} {r.smape_percent:10.4f} {conv:>8}")
    if len(reports) > 1:
        m = metrics.set_mean(reports)
        print(f"{'set mean':>10} {m['mse']:13.6e} {m['rmse']:13.6e} {m['mae']:13.6e} {m['smape_percent']:10.4f}")
        print(f"{'pooled':>10} {pooled['mse']:13.6e} {pooled['rmse']:13.6e} {pooled['mae']:13.6e} "
              f"{pooled['smape_percent']:10.4f}")


def cmd_test(args):
    cfg = load_experiment(args)
    out = output_dir(args, cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    params, scaling, _ = gainnet.load_checkpoint(ckpt)
    reports, pooled, _ = evaluate(cfg, params, scaling, out)
    summary = reports[0] if len(reports) == 1 else pooled
    metrics.write_report_csv(out / "metrics.csv", summary)
    doc = {
        "burn_in_s": cfg.test_burn_in,
        "threshold": cfg.threshold,
        "dwell_s": cfg.dwell,
        "trajectories": [r.to_dict() for r in reports],
        "pooled": pooled,
        "set_mean": metrics.set_mean(reports),
    }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n")
    write_manifest(out, "test", cfg, {"checkpoint": str(ckpt)})
    _print_metrics(reports, pooled)
    return EXIT_OK


def cmd_diagnose(args):
    cfg = load_experiment(args)
    out = output_dir(args, cfg)
    model = cfg.build_model()
    N = args.horizon if args.horizon is not None else cfg.diag_horizon
    if args.point is not None:
        try:
            point = [float(v) for v in args.point.split(",")]
        except ValueError:
            raise ConfigError(f"--point expects comma-separated numbers, got {args.point!r}") from None
        segment, label = np.asarray(point), "point"
    elif cfg.diag_point is not None:
        segment, label = np.asarray(cfg.diag_point), "point"
    else:
        x0 = cfg.training_pairs()[0][0]
        traj = simulate(model, x0, cfg.dt, cfg.dt * max(N, 1))
        segment, label = traj.states, "true trajectory"
    if segment.ndim == 1 and segment.size != model.n:
        raise ConfigError(f"--point needs {model.n} coordinates")
    report = diagnostics.observability_matrix(model, segment, N, cfg.dt, label=label)
    report.write_json(out / "observability.json")
    write_manifest(out, "diagnose", cfg, {"horizon": N})
    print(report.table())
    return EXIT_OK


def _read_csv(path, prefix="x"):
    try:
        return read_trajectory_csv(path, state_prefix=prefix)
    except (ValueError, IndexError) as exc:
        raise OSError(f"cannot read trajectory file {path}: {exc}") from None


def cmd_metrics(args):
    truth = _read_csv(args.truth)
    est = _read_csv(args.estimate, args.estimate_prefix)
    report = metrics.aggregate_metrics(truth, est, args.burn_in, args.threshold, args.dwell)
    out = Path(args.out or os.environ.get("SOFTSENSOR_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report_json(out / "metrics.json", report)
    metrics.write_report_csv(out / "metrics.csv", report)
    _print_metrics([report], None)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _experiment_args(p, seed=False, epochs=False):
    p.add_argument("--preset", choices=PRESET_NAMES, help="built-in experiment")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory (default: $SOFTSENSOR_OUT or out.dir/<name>)")
    if seed:
        p.add_argument("--seed", type=int, help="network initialization seed")
    if epochs:
        p.add_argument("--epochs", type=int, help="training epochs (>= 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="softsensor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"softsensor {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the configured plant and write trajectory CSVs")
    _experiment_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the gain network; writes checkpoint.json and history.csv")
    _experiment_args(p, seed=True, epochs=True)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="replay the trained observer on the test set")
    _experiment_args(p, seed=True)
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.json)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("diagnose", help="observability rank and Gramian spectrum")
    _experiment_args(p)
    p.add_argument("--point", help="comma-separated state to linearize at")
    p.add_argument("--horizon", type=int, help="number of steps N")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("metrics", help="compare a true and an estimated trajectory CSV")
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--estimate-prefix", default="x", help="state column prefix in the estimate file")
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)
    p.add_argument("--dwell", type=float, default=metrics.DEFAULT_DWELL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IntegrationDiverged, ObserverDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SingularPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, csv.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
