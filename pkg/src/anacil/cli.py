"""Command-line entry point.

Settings resolve as: explicit flags, then ``--set section.key=value``, then
``$ANACIL_OUTPUT_DIR`` (output directory only), then the ``--config`` file,
then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .classifier import read_checkpoint_header
from .data import save_feature_matrix, synth_gaussian_arrays
from .errors import AnacilError, ConfigError
from .experiment import (load_config, parse_float, run_experiment, run_order_robustness,
                         run_tradeoff_sweep)

# flag dest -> config key
FLAG_KEYS = {
    "dataset": "dataset.name",
    "data_path": "dataset.path",
    "train_path": "dataset.train_path",
    "test_path": "dataset.test_path",
    "classes": "dataset.C",
    "tasks": "dataset.T",
    "gamma": "consolidation.gamma",
    "forget": "consolidation.forget",
    "capacity": "consolidation.capacity",
    "seeds": "run.seeds",
    "output_dir": "run.output_dir",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with [dataset], [features], [solver], "
                                                "[consolidation] and [run] sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--dataset", choices=("synthetic", "idx", "features"))
    p.add_argument("--data-path", help="directory holding the IDX files")
    p.add_argument("--train-path", help="training feature file")
    p.add_argument("--test-path", help="test feature file")
    p.add_argument("-C", "--classes", type=int, help="total number of classes")
    p.add_argument("-T", "--tasks", type=int, help="number of tasks")
    p.add_argument("--gamma", help="default trade-off weight, e.g. 1e4")
    p.add_argument("--forget", help="forget schedule, e.g. '4:oldest=1' or '4:tasks=1,2'")
    p.add_argument("--capacity", type=int, help="records kept in memory (0 = all)")
    p.add_argument("--seeds", help="comma-separated task-order seeds")
    p.add_argument("-o", "--output-dir")


def _resolve_config(args):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = str(value)
    return load_config(args.config, overrides)


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    res = run_experiment(cfg)
    s = res["summary"]
    print(f"avg_acc {s['avg_acc_mean']:.4f} +- {s['avg_acc_std']:.4f} over seeds {s['seeds']}")
    if s["bwt_mean"] is not None:
        print(f"bwt {s['bwt_mean']:.4f}")
    if s["fwt_mean"] is not None:
        print(f"fwt {s['fwt_mean']:.4f}")
    print(f"model_mb {s['model_mb']:.4f} exemplar_mb {s['exemplar_mb']:.1f}")
    print(f"reports written to {cfg.run.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    try:
        gammas = [parse_float(g) for g in args.gammas.split(",") if g.strip()]
    except ValueError as err:
        raise ConfigError(f"bad --gammas list {args.gammas!r}") from err
    rows = run_tradeoff_sweep(cfg, gammas)
    for row in rows:
        bwt = "n/a" if row["bwt"] is None else f"{row['bwt']:.4f}"
        final = row[f"avg_acc_{cfg.dataset.T}"]
        print(f"gamma {row['gamma']:g}: avg_acc {final:.4f} bwt {bwt}")
    print(f"table written to {Path(cfg.run.output_dir) / 'tradeoff.csv'}")
    return 0


def cmd_orders(args) -> int:
    cfg = _resolve_config(args)
    mean, std = run_order_robustness(cfg, args.n_orders)
    print(f"avg_acc {mean:.4f} +- {std:.4f} over {args.n_orders} orders")
    return 0


def cmd_gen_synthetic(args) -> int:
    if args.classes < 1 or args.dim < 1 or args.n_per_class < 2:
        raise ConfigError("classes and dim must be >= 1, n-per-class >= 2")
    Xtr, ytr, Xte, yte = synth_gaussian_arrays(args.classes, args.dim, args.n_per_class,
                                               args.separation, args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_matrix(out / "train.feat", Xtr, ytr)
    save_feature_matrix(out / "test.feat", Xte, yte)
    print(f"wrote {len(ytr)} train and {len(yte)} test rows to {out}")
    return 0


def cmd_inspect(args) -> int:
    header, offset = read_checkpoint_header(args.path)
    summary = {
        "header_bytes": offset,
        "solution_shape": header["solution"]["shape"],
        "trained_tasks": header["solution"]["trained_tasks"],
        "capacity": header["capacity"],
        "records": [{k: r[k] for k in ("task_id", "class_ids", "gamma", "n_samples", "shape")}
                    for r in header["records"]],
        "meta": header["meta"],
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anacil", description="Rehearsal-free class-incremental "
                                     "learning with analytic consolidation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train over the task sequence for every seed")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-gamma", help="one run per trade-off value")
    _add_config_args(p)
    p.add_argument("--gammas", default="1,1e2,1e4,1e6", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("order-robustness", help="spread of Avg Acc over shuffled task orders")
    _add_config_args(p)
    p.add_argument("--n-orders", type=int, default=5)
    p.set_defaults(func=cmd_orders)

    p = sub.add_parser("gen-synthetic", help="write Gaussian-blob train/test feature files")
    p.add_argument("-C", "--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output-dir", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AnacilError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
