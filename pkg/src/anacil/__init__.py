"""Rehearsal-free class-incremental learning with closed-form consolidation."""

from __future__ import annotations

__version__ = "0.1.0"

from .classifier import (ConsolidatedSolution, DeclarativeRecord, MemoryStatistic, compute_declarative,
                         compute_plasticity, consolidate, forget_tasks, load_checkpoint, predict,
                         save_checkpoint, stationarity_residual)
from .data import load_feature_matrix, load_idx, split_classes, synth_gaussian_tasks
from .errors import AnacilError, ConfigError, DataError, NumericalError
from .features import BaseMapping, FeatureExtractor, admm_lasso, init_groups
from .metrics import AccuracyMatrix, avg_acc, bwt, fwt, memory_budget
from .pipeline import IncrementalLearner

__all__ = [
    "AccuracyMatrix", "AnacilError", "BaseMapping", "ConfigError", "ConsolidatedSolution",
    "DataError", "DeclarativeRecord", "FeatureExtractor", "IncrementalLearner", "MemoryStatistic",
    "NumericalError", "admm_lasso", "avg_acc", "bwt", "compute_declarative", "compute_plasticity",
    "consolidate", "forget_tasks", "fwt", "init_groups", "load_checkpoint", "load_feature_matrix",
    "load_idx", "memory_budget", "predict", "save_checkpoint", "split_classes",
    "stationarity_residual", "synth_gaussian_tasks",
]
