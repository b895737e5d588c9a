"""Accuracy-matrix bookkeeping and continual-learning metrics.

Task indices are 1-based throughout, matching how runs are reported.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .errors import OutOfRange

BYTES_PER_VALUE = 4
MB = 2 ** 20


class AccuracyMatrix:
    """Lower-triangular table ``R[T][t]``: accuracy on task t after training task T."""

    def __init__(self, rows=None):
        self.rows: list[list[float]] = []
        for row in rows or []:
            self.append_row(row)

    @property
    def T(self) -> int:
        return len(self.rows)

    def append_row(self, row) -> None:
        row = [float(v) for v in row]
        if len(row) != self.T + 1:
            raise OutOfRange(f"row {self.T + 1} must have {self.T + 1} entries, got {len(row)}")
        if any(not 0.0 <= v <= 1.0 for v in row):
            raise OutOfRange(f"accuracies must lie in [0, 1]: {row}")
        self.rows.append(row)

    def __getitem__(self, idx) -> float:
        T, t = idx
        if not (1 <= t <= T <= self.T):
            raise OutOfRange(f"R[{T}][{t}] undefined for a {self.T}-task matrix")
        return self.rows[T - 1][t - 1]

    def to_array(self) -> np.ndarray:
        out = np.full((self.T, self.T), np.nan)
        for i, row in enumerate(self.rows):
            out[i, : len(row)] = row
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["after_task"] + [f"task_{t}" for t in range(1, self.T + 1)])
        for i, row in enumerate(self.rows, start=1):
            w.writerow([i] + [f"{v:.6f}" for v in row] + [""] * (self.T - i))
        return buf.getvalue()


def avg_acc(R: AccuracyMatrix, after_task: int | None = None) -> float:
    T = R.T if after_task is None else after_task
    if not 1 <= T <= R.T:
        raise OutOfRange(f"after_task={T} outside 1..{R.T}")
    return float(np.mean(R.rows[T - 1]))


def bwt(R: AccuracyMatrix) -> float:
    T = R.T
    if T < 2:
        raise OutOfRange("BWT needs at least two tasks")
    return float(np.mean([R[T, t] - R[t, t] for t in range(1, T)]))


def fwt(R: AccuracyMatrix, R_ind) -> float:
    T = R.T
    if T < 2:
        raise OutOfRange("FWT needs at least two tasks")
    if len(R_ind) != T:
        raise OutOfRange(f"need {T} independent accuracies, got {len(R_ind)}")
    return float(np.mean([R[t, t] - R_ind[t - 1] for t in range(2, T + 1)]))


def memory_budget(statistic, model_params: int = 0) -> tuple[float, float]:
    """(model MB, exemplar MB) at 32-bit floats; exemplars are always zero."""
    stored = sum(r.n_floats for r in statistic.records) if statistic is not None else 0
    return BYTES_PER_VALUE * (model_params + stored) / MB, 0.0


def record_bytes(record) -> int:
    return BYTES_PER_VALUE * record.n_floats


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_report(path, report: dict) -> None:
    atomic_write(path, json.dumps(report, indent=2, sort_keys=True) + "\n")


TIMING_FIELDS = ("train_time_s", "total_time_s", "wall_time_s")


def strip_timing(obj):
    """Copy of a report with every timing field removed (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
