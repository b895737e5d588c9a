"""Experiment configuration and orchestration.

A run walks the task sequence once per order seed, fills the accuracy matrix
row by row and writes a JSON report, the matrix as CSV and a checkpoint.
"""

from __future__ import annotations

import configparser
import copy
import dataclasses
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import metrics
from .classifier import save_checkpoint
from .data import load_feature_matrix, load_idx, split_classes, synth_gaussian_arrays
from .errors import ConfigError, DataError
from .features import ACTIVATIONS, CONNECTIONS, BaseMapping, FeatureExtractor, init_groups
from .metrics import AccuracyMatrix
from .pipeline import IncrementalLearner

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "ANACIL_OUTPUT_DIR"


@dataclass
class DatasetConfig:
    name: str = "synthetic"
    path: str = ""
    train_path: str = ""
    test_path: str = ""
    C: int = 10
    T: int = 5
    dim: int = 50
    n_per_class: int = 200
    separation: float = 5.0
    data_seed: int = 0


@dataclass
class FeatureConfig:
    base: str = "auto"
    h: int = 900
    n_groups: int = 30
    group_width: int = 30
    base_activation: str = "clipped-linear"
    group_activation: str = "clipped-linear"
    connection: str = "auto"
    refine_per_task: bool = False
    base_seed: int = 0
    group_seed: int = 1


@dataclass
class SolverConfig:
    alpha: float = 0.01
    rho_ridge: float = 2.0 ** -30
    rho_admm: float = 1.0
    admm_max_iter: int = 100
    admm_tol: float = 1e-6


@dataclass
class ConsolidationConfig:
    gamma: float = 1e4
    gamma_overrides: str = ""
    forget: str = ""
    capacity: int = 0
    update_columns: str = "all"
    use_fisher: bool = True
    use_anchor: bool = True


@dataclass
class RunConfig:
    seeds: str = "0"
    output_dir: str = "runs"
    compute_fwt: bool = True
    save_checkpoint: bool = True


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    consolidation: ConsolidationConfig = field(default_factory=ConsolidationConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # -- derived views -------------------------------------------------
    @property
    def seeds(self) -> list[int]:
        return parse_int_list(self.run.seeds, "run.seeds")

    @property
    def gamma_overrides(self) -> dict[int, float]:
        out = {}
        for item in _split(self.consolidation.gamma_overrides, ","):
            task, _, value = item.partition(":")
            try:
                out[int(task)] = parse_float(value)
            except ValueError as err:
                raise ConfigError(f"bad gamma override {item!r}") from err
        return out

    @property
    def forget_schedule(self) -> dict[int, object]:
        """``{before_task: victims}``, victims an int (oldest N) or a task-id list."""
        out = {}
        for item in _split(self.consolidation.forget, ";"):
            m = re.fullmatch(r"\s*(\d+)\s*:\s*(oldest|tasks)\s*=\s*([\d,\s]+)", item)
            if not m:
                raise ConfigError(f"bad forget entry {item!r}; use '4:oldest=1' or '4:tasks=1,2'")
            before, kind, value = int(m[1]), m[2], m[3]
            out[before] = int(value) if kind == "oldest" else parse_int_list(value, "forget")
        return out

    def validate(self) -> "ExperimentConfig":
        d, f, s, c = self.dataset, self.features, self.solver, self.consolidation
        if d.name not in ("synthetic", "idx", "features"):
            raise ConfigError(f"dataset.name must be synthetic, idx or features, got {d.name!r}")
        if d.C < 1 or d.T < 1 or d.C % d.T:
            raise ConfigError(f"dataset.T={d.T} must divide dataset.C={d.C}")
        if f.base not in ("auto", "identity", "frozen-affine"):
            raise ConfigError(f"features.base {f.base!r} unknown")
        for key in ("base_activation", "group_activation"):
            if getattr(f, key) not in ACTIVATIONS:
                raise ConfigError(f"features.{key} must be one of {ACTIVATIONS}")
        if f.connection != "auto" and f.connection not in CONNECTIONS:
            raise ConfigError(f"features.connection must be auto or one of {CONNECTIONS}")
        if f.h < 1 or f.n_groups < 0 or f.group_width < 1:
            raise ConfigError("features.h and group_width must be >= 1, n_groups >= 0")
        if f.connection in ("groups", "refined") and f.n_groups == 0:
            raise ConfigError(f"connection {f.connection!r} needs n_groups > 0")
        for name in ("rho_ridge", "rho_admm"):
            if not getattr(s, name) > 0:
                raise ConfigError(f"solver.{name} must be positive")
        if s.alpha < 0 or s.admm_tol < 0 or s.admm_max_iter < 1:
            raise ConfigError("solver.alpha and admm_tol must be >= 0, admm_max_iter >= 1")
        if not c.gamma > 0 or any(not g > 0 for g in self.gamma_overrides.values()):
            raise ConfigError("gamma values must be positive")
        if c.update_columns not in ("all", "new"):
            raise ConfigError("consolidation.update_columns must be 'all' or 'new'")
        if c.capacity < 0:
            raise ConfigError("consolidation.capacity must be >= 0 (0 = unbounded)")
        self.forget_schedule
        if not self.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Content hash over everything that affects results."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k != "output_dir"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section field updates, e.g. ``replace(consolidation={"gamma": 1})``."""
        cfg = copy.deepcopy(self)
        for section, values in sections.items():
            set_values(cfg, section, values)
        return cfg


def _split(text: str, sep: str) -> list[str]:
    return [p.strip() for p in str(text).split(sep) if p.strip()]


def parse_int_list(text, what: str) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in _split(str(text), ",")]
    except ValueError as err:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from err


_POW = re.compile(r"\s*([-+]?[\d.]+)\s*(?:\^|\*\*)\s*([-+]?[\d.]+)\s*")


def parse_float(text) -> float:
    """Float parser that also accepts powers such as ``2^-30``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _POW.fullmatch(str(text))
    if m:
        return float(m[1]) ** float(m[2])
    return float(text)


def _convert(value, kind):
    if kind is bool or kind == "bool":
        if isinstance(value, bool):
            return value
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return parse_float(value)
    return str(value).strip()


def set_values(cfg: ExperimentConfig, section: str, values: dict) -> None:
    try:
        target = getattr(cfg, section)
    except AttributeError:
        raise ConfigError(f"unknown config section [{section}]") from None
    # keys are case-insensitive (configparser lowercases them)
    fields = {f.name.lower(): f for f in dataclasses.fields(target)}
    for key, value in values.items():
        f = fields.get(key.strip().lower())
        if f is None:
            raise ConfigError(f"unknown key {section}.{key}")
        try:
            setattr(target, f.name, _convert(value, f.type))
        except ValueError as err:
            raise ConfigError(f"{section}.{key}: {err}") from err


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the INI file, then ``section.key`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        for section in parser.sections():
            set_values(cfg, section, dict(parser[section]))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must be section.key")
        set_values(cfg, section, {key: value})
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out and not (overrides and "run.output_dir" in overrides):
        cfg.run.output_dir = env_out
    return cfg.validate()


# -- data -----------------------------------------------------------------

def _idx_files(root: Path, prefix: str) -> tuple[Path, Path]:
    for ext in ("", ".gz"):
        img = root / f"{prefix}-images-idx3-ubyte{ext}"
        lab = root / f"{prefix}-labels-idx1-ubyte{ext}"
        if img.exists() and lab.exists():
            return img, lab
    raise DataError(f"no {prefix}-images-idx3-ubyte / {prefix}-labels-idx1-ubyte under {root}")


@lru_cache(maxsize=4)
def _load_arrays(name: str, path: str, train_path: str, test_path: str,
                 C: int, dim: int, n_per_class: int, separation: float, data_seed: int):
    if name == "synthetic":
        return synth_gaussian_arrays(C, dim, n_per_class, separation, data_seed)
    if name == "idx":
        root = Path(path)
        Xtr, ytr = load_idx(*_idx_files(root, "train"))
        Xte, yte = load_idx(*_idx_files(root, "t10k"))
        return Xtr, ytr, Xte, yte
    for p in (train_path, test_path):
        if not p or not Path(p).exists():
            raise DataError(f"feature file {p!r} not found")
    return (*load_feature_matrix(train_path), *load_feature_matrix(test_path))


def load_arrays(cfg: ExperimentConfig):
    d = cfg.dataset
    try:
        return _load_arrays(d.name, d.path, d.train_path, d.test_path, d.C, d.dim,
                            d.n_per_class, d.separation, d.data_seed)
    except FileNotFoundError as err:
        raise DataError(str(err)) from err


def load_tasks(cfg: ExperimentConfig, order_seed: int):
    Xtr, ytr, Xte, yte = load_arrays(cfg)
    return split_classes(Xtr, ytr, cfg.dataset.C, cfg.dataset.T, order_seed,
                         X_test=Xte, labels_test=yte, name=cfg.dataset.name)


# -- model ------------------------------------------------------------------

def build_extractor(cfg: ExperimentConfig, in_dim: int) -> FeatureExtractor:
    f, s = cfg.features, cfg.solver
    kind = f.base
    if kind == "auto":
        kind = "frozen-affine" if cfg.dataset.name == "idx" else "identity"
    if kind == "identity":
        base = BaseMapping.identity(in_dim)
    else:
        base = BaseMapping.frozen_affine(in_dim, f.h, f.base_seed, f.base_activation)
    connection = f.connection
    if connection == "auto":
        # bias-carrying groups wreck raw low-dimensional inputs; see README
        connection = "base" if kind == "identity" else "augmented"
    n = f.n_groups if connection != "base" else 0
    groups = init_groups(base.out_dim, n, f.group_width, f.group_seed, f.group_activation)
    return FeatureExtractor(base, groups, alpha=s.alpha, rho=s.rho_admm, max_iter=s.admm_max_iter,
                            tol=s.admm_tol, connection=connection,
                            refine_per_task=f.refine_per_task)


def build_learner(cfg: ExperimentConfig, in_dim: int) -> IncrementalLearner:
    c = cfg.consolidation
    return IncrementalLearner(
        build_extractor(cfg, in_dim), rho_ridge=cfg.solver.rho_ridge, gamma=c.gamma,
        gamma_overrides=cfg.gamma_overrides, capacity=c.capacity or None,
        update_columns=c.update_columns, use_fisher=c.use_fisher, use_anchor=c.use_anchor)


_IND_CACHE: dict[tuple, float] = {}


def independent_accuracy(cfg: ExperimentConfig, train, test) -> float:
    """Accuracy of a model trained on this task alone (fresh refinement and ridge fit).

    Predictions are restricted to the task's own classes.
    """
    key = (cfg.digest(), train.class_ids)
    if key in _IND_CACHE:
        return _IND_CACHE[key]
    learner = build_learner(cfg, train.X.shape[1])
    learner.learn(train)
    cols = list(train.columns)
    scores = learner.scores(test.X)[:, cols]
    acc = float(np.mean(np.asarray(cols)[np.argmax(scores, axis=1)] == test.targets))
    _IND_CACHE[key] = acc
    return acc


def run_single(cfg: ExperimentConfig, order_seed: int):
    """One pass over the task sequence; returns ``(report, learner)``."""
    seq = load_tasks(cfg, order_seed)
    learner = build_learner(cfg, seq.tasks[0][0].X.shape[1])
    schedule = cfg.forget_schedule
    R = AccuracyMatrix()
    sessions = []
    t_start = time.perf_counter()
    for train, _ in seq:
        dropped = learner.forget(schedule[train.task_id]) if train.task_id in schedule else []
        elapsed = learner.learn(train)
        row = [learner.accuracy(test) for _, test in seq.tasks[: train.task_id]]
        R.append_row(row)
        sessions.append({
            "task_id": train.task_id,
            "classes": list(train.class_ids),
            "columns": list(train.columns),
            "n_train": len(train),
            "gamma": learner.gamma_for(train.task_id),
            "forgotten_before": dropped,
            "train_time_s": round(elapsed, 3),
            "R_row": row,
            "avg_acc": metrics.avg_acc(R),
        })
    total = time.perf_counter() - t_start
    T = R.T
    r_ind = None
    fwt_val = None
    if cfg.run.compute_fwt and T >= 2:
        r_ind = [independent_accuracy(cfg, tr, te) for tr, te in seq]
        fwt_val = metrics.fwt(R, r_ind)
    model_mb, exemplar_mb = metrics.memory_budget(learner.statistic, learner.n_params)
    report = {
        "config_digest": cfg.digest(),
        "seeds": {"order_seed": order_seed, "base_seed": cfg.features.base_seed,
                  "group_seed": cfg.features.group_seed, "data_seed": cfg.dataset.data_seed},
        "dataset": {"name": cfg.dataset.name, "C": cfg.dataset.C, "T": cfg.dataset.T,
                    "class_order": list(seq.class_order)},
        "per_session": sessions,
        "R": R.rows,
        "R_ind": r_ind,
        "avg_acc": metrics.avg_acc(R),
        "bwt": metrics.bwt(R) if T >= 2 else None,
        "fwt": fwt_val,
        "model_mb": model_mb,
        "exemplar_mb": exemplar_mb,
        "model_params": learner.n_params,
        "record_bytes": {str(r.task_id): metrics.record_bytes(r) for r in learner.statistic.records},
        "retained_tasks": learner.statistic.task_ids,
        "forgotten_tasks": learner.forgotten,
        "total_time_s": round(total, 3),
    }
    return report, learner


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Run every order seed; returns ``{"runs": [...], "summary": {...}}``."""
    reports = []
    out = _output_dir(cfg) if write else None
    for seed in cfg.seeds:
        report, learner = run_single(cfg, seed)
        reports.append(report)
        if write:
            metrics.write_report(out / f"run_seed{seed}.json", report)
            metrics.atomic_write(out / f"accuracy_seed{seed}.csv", AccuracyMatrix(report["R"]).to_csv())
            if cfg.run.save_checkpoint:
                save_checkpoint(out / f"checkpoint_seed{seed}.ckpt", learner.solution, learner.statistic,
                                meta={"config_digest": cfg.digest(), "order_seed": seed,
                                      "class_order": report["dataset"]["class_order"],
                                      "base_seed": cfg.features.base_seed,
                                      "group_seed": cfg.features.group_seed})
    summary = summarize(cfg, reports)
    if write:
        metrics.write_report(out / "summary.json", summary)
    return {"runs": reports, "summary": summary}


def summarize(cfg: ExperimentConfig, reports: list[dict]) -> dict:
    accs = np.array([r["avg_acc"] for r in reports])

    def mean_of(key):
        vals = [r[key] for r in reports if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "config_digest": cfg.digest(),
        "seeds": cfg.seeds,
        "avg_acc_mean": float(accs.mean()),
        "avg_acc_std": float(accs.std()),
        "bwt_mean": mean_of("bwt"),
        "fwt_mean": mean_of("fwt"),
        "model_mb": reports[0]["model_mb"],
        "exemplar_mb": reports[0]["exemplar_mb"],
        "config": cfg.to_dict(),
    }


def run_tradeoff_sweep(cfg: ExperimentConfig, gammas, write: bool = True) -> list[dict]:
    """One experiment per gamma (seeds fixed); one CSV row per gamma."""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ConfigError("need at least one gamma value")
    T = cfg.dataset.T
    rows = []
    for g in gammas:
        sub = cfg.replace(consolidation={"gamma": g, "gamma_overrides": ""})
        res = run_experiment(sub, write=False)
        per_session = np.mean([[s["avg_acc"] for s in r["per_session"]] for r in res["runs"]], axis=0)
        row = {"gamma": g}
        row.update({f"avg_acc_{t}": float(v) for t, v in enumerate(per_session, start=1)})
        row["bwt"] = res["summary"]["bwt_mean"]
        row["fwt"] = res["summary"]["fwt_mean"]
        rows.append(row)
    if write:
        header = ["gamma"] + [f"avg_acc_{t}" for t in range(1, T + 1)] + ["bwt", "fwt"]
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join("" if row[h] is None else f"{row[h]:.6g}" for h in header))
        metrics.atomic_write(_output_dir(cfg) / "tradeoff.csv", "\n".join(lines) + "\n")
    return rows


def run_order_robustness(cfg: ExperimentConfig, n_orders: int, write: bool = True) -> tuple[float, float]:
    """Mean and population std of final Avg Acc over ``n_orders`` shuffled task orders."""
    if n_orders < 2:
        raise ConfigError("order robustness needs at least two orders")
    start = cfg.seeds[0]
    seeds = ",".join(str(start + i) for i in range(n_orders))
    res = run_experiment(cfg.replace(run={"seeds": seeds}), write=False)
    accs = np.array([r["avg_acc"] for r in res["runs"]])
    mean, std = float(accs.mean()), float(accs.std())
    if write:
        metrics.write_report(_output_dir(cfg) / "order_robustness.json", {
            "config_digest": cfg.digest(), "order_seeds": parse_int_list(seeds, "seeds"),
            "avg_acc": accs.tolist(), "mean": mean, "std": std})
    return mean, std
