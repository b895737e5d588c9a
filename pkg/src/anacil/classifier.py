"""Closed-form classifier consolidated across tasks.

Each task leaves a :class:`DeclarativeRecord` (its own ridge solution, the
diagonal empirical Fisher of that solution and a trade-off ``gamma``). A new
task is absorbed by solving, for every class column ``c``::

    (A^T A + sum_t gamma_t diag(F_t[:, c]) + I) w_c
        = A^T y_c + sum_t gamma_t F_t[:, c] * omega_t[:, c] + prev[:, c]

All per-task matrices live on the cumulative class axis and are zero outside
the columns the task owns.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyTask, HeaderMismatch, BadMagic, TruncatedFile, UnknownTask
from .linalg import SPDFactor, as_matrix, check_finite, gram, regularized_gram_solve


def _matrix(A) -> np.ndarray:
    return as_matrix(getattr(A, "matrix", A), "A")


def pad_columns(M: np.ndarray, width: int) -> np.ndarray:
    if M.shape[1] > width:
        raise DimensionMismatch(f"cannot pad {M.shape[1]} columns down to {width}")
    if M.shape[1] == width:
        return M
    out = np.zeros((M.shape[0], width))
    out[:, : M.shape[1]] = M
    return out


@dataclass
class DeclarativeRecord:
    task_id: int
    omega: np.ndarray
    plasticity: np.ndarray
    gamma: float
    class_ids: tuple[int, ...]
    n_samples: int

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.omega.shape != self.plasticity.shape:
            raise DimensionMismatch("omega and plasticity shapes differ")

    @property
    def feature_dim(self) -> int:
        return self.omega.shape[0]

    @property
    def n_floats(self) -> int:
        """Stored values: one ``d x C_t`` block each for omega and plasticity."""
        return 2 * self.feature_dim * len(self.class_ids)

    def omega_at(self, width: int) -> np.ndarray:
        return pad_columns(self.omega, width)

    def plasticity_at(self, width: int) -> np.ndarray:
        return pad_columns(self.plasticity, width)


@dataclass
class ConsolidatedSolution:
    omega: np.ndarray
    trained_tasks: list[int] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.omega.shape[0]

    @property
    def total_classes(self) -> int:
        return self.omega.shape[1]

    @classmethod
    def empty(cls, d: int) -> "ConsolidatedSolution":
        return cls(np.zeros((d, 0)), [])


@dataclass
class MemoryStatistic:
    records: list[DeclarativeRecord] = field(default_factory=list)
    capacity: int | None = None

    def add(self, record: DeclarativeRecord) -> list[DeclarativeRecord]:
        """Append ``record``; returns whatever FIFO eviction pushed out."""
        self.records.append(record)
        evicted = []
        while self.capacity is not None and len(self.records) > self.capacity:
            evicted.append(self.records.pop(0))
        return evicted

    @property
    def task_ids(self) -> list[int]:
        return [r.task_id for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def compute_declarative(A, Y, rho: float, class_ids=None) -> np.ndarray:
    """Per-task ridge solution ``(rho I + A^T A)^-1 A^T Y``."""
    A = _matrix(A)
    Y = as_matrix(Y, "Y")
    if A.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but Y has {Y.shape[0]}")
    if A.shape[0] == 0:
        raise EmptyTask("task has no samples")
    omega = regularized_gram_solve(A, Y, rho)
    if class_ids is not None:
        mask = np.ones(Y.shape[1], dtype=bool)
        mask[list(class_ids)] = False
        omega[:, mask] = 0.0
    return omega


def compute_plasticity(A, Y, omega) -> np.ndarray:
    """Diagonal empirical Fisher of the Gaussian log-likelihood at ``omega``.

    ``F[j, c] = mean_p (A[p, j] * (Y - A omega)[p, c])^2``.
    """
    A = _matrix(A)
    Y = as_matrix(Y, "Y")
    omega = as_matrix(omega, "omega")
    if A.shape[0] != Y.shape[0] or A.shape[1] != omega.shape[0] or Y.shape[1] != omega.shape[1]:
        raise DimensionMismatch(f"inconsistent shapes A{A.shape}, Y{Y.shape}, omega{omega.shape}")
    R = Y - A @ omega
    return (A * A).T @ (R * R) / A.shape[0]


def make_record(task_id: int, A, Y, class_ids, rho: float, gamma: float) -> DeclarativeRecord:
    omega = compute_declarative(A, Y, rho, class_ids)
    F = compute_plasticity(A, Y, omega)
    return DeclarativeRecord(task_id, omega, F, float(gamma), tuple(int(c) for c in class_ids),
                             int(np.asarray(Y).shape[0]))


def _penalties(records, d: int, width: int):
    """Stacked ``sum_t gamma_t F_t`` and ``sum_t gamma_t F_t * omega_t`` on ``width`` columns."""
    P = np.zeros((d, width))
    Q = np.zeros((d, width))
    for r in records:
        if r.feature_dim != d:
            raise DimensionMismatch(f"record {r.task_id} has feature dim {r.feature_dim}, expected {d}")
        F = r.plasticity_at(width)
        P += r.gamma * F
        Q += r.gamma * F * r.omega_at(width)
    return P, Q


def consolidate(A_T, Y_T, statistic: MemoryStatistic, prev: ConsolidatedSolution, *,
                task_id: int | None = None, update_columns: str = "all",
                use_fisher: bool = True, use_anchor: bool = True,
                rho_ridge: float = 2.0 ** -30) -> ConsolidatedSolution:
    """Fold a new task into the consolidated solution, one class column at a time.

    ``update_columns="new"`` keeps columns that ``prev`` already covers
    unchanged. ``use_fisher``/``use_anchor`` switch off the second and third
    objective terms; without the anchor the identity is replaced by
    ``rho_ridge * I`` so each system stays positive definite.
    """
    A = _matrix(A_T)
    Y = as_matrix(Y_T, "Y_T")
    if A.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but Y has {Y.shape[0]}")
    if A.shape[0] == 0:
        raise EmptyTask("task has no samples")
    d, width = A.shape[1], Y.shape[1]
    if prev.feature_dim != d:
        raise DimensionMismatch(f"previous solution has feature dim {prev.feature_dim}, expected {d}")
    if update_columns not in ("all", "new"):
        raise ValueError("update_columns must be 'all' or 'new'")

    prev_omega = pad_columns(prev.omega, width)
    G = gram(A)
    AtY = A.T @ Y
    if use_fisher:
        P, Q = _penalties(statistic.records, d, width)
    else:
        P = Q = np.zeros((d, width))
    anchor = 1.0 if use_anchor else rho_ridge
    rhs = AtY + Q + (prev_omega if use_anchor else 0.0)

    out = np.empty((d, width))
    cache: dict[bytes, SPDFactor] = {}
    for c in range(width):
        if update_columns == "new" and c < prev.total_classes:
            out[:, c] = prev_omega[:, c]
            continue
        key = P[:, c].tobytes()
        factor = cache.get(key)
        if factor is None:
            M = G.copy()
            M[np.diag_indices_from(M)] += P[:, c] + anchor
            factor = cache[key] = SPDFactor(M, rho=anchor)
        out[:, c] = factor.solve(rhs[:, c])
    check_finite(out, "consolidated solution")
    tasks = list(prev.trained_tasks) + ([task_id] if task_id is not None else [])
    return ConsolidatedSolution(out, tasks)


def stationarity_residual(solution, A_T, Y_T, statistic: MemoryStatistic, prev, *,
                          use_fisher: bool = True, use_anchor: bool = True,
                          rho_ridge: float = 2.0 ** -30) -> float:
    """Infinity norm of the objective's gradient at ``solution.omega``.

    Uses ``lambda_t = gamma_t / N_T``, i.e. the closed-form system's residual
    divided by the task size.
    """
    A = _matrix(A_T)
    Y = as_matrix(Y_T, "Y_T")
    omega = getattr(solution, "omega", solution)
    if omega.shape != (A.shape[1], Y.shape[1]):
        raise DimensionMismatch(f"solution shape {omega.shape} vs A{A.shape}, Y{Y.shape}")
    width = Y.shape[1]
    prev_omega = pad_columns(getattr(prev, "omega", prev), width)
    grad = A.T @ (A @ omega - Y)
    if use_fisher:
        for r in statistic.records:
            grad += r.gamma * r.plasticity_at(width) * (omega - r.omega_at(width))
    grad += (omega - prev_omega) if use_anchor else rho_ridge * omega
    return float(np.abs(grad).max(initial=0.0) / A.shape[0])


def predict(A, solution) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``A omega`` and the arg-max label per row (ties go to the lowest column)."""
    A = _matrix(A)
    omega = getattr(solution, "omega", solution)
    if A.shape[1] != omega.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[1]} columns, solution expects {omega.shape[0]}")
    scores = A @ omega
    return scores, np.argmax(scores, axis=1)


def forget_tasks(statistic: MemoryStatistic, victims) -> MemoryStatistic:
    """Drop records by task id, or the ``victims`` oldest ones when given an int."""
    if isinstance(victims, (int, np.integer)):
        if victims < 0 or victims > len(statistic):
            raise UnknownTask(f"cannot forget {victims} of {len(statistic)} records")
        kept = statistic.records[victims:]
    else:
        victims = set(victims)
        unknown = victims - set(statistic.task_ids)
        if unknown:
            raise UnknownTask(f"no record for task(s) {sorted(unknown)}")
        kept = [r for r in statistic.records if r.task_id not in victims]
    return MemoryStatistic(list(kept), statistic.capacity)


# Checkpoint archive: magic, u64 header length, JSON header, then '<f8' blocks
# in header order.
_MAGIC = b"ANACILCK"


def save_checkpoint(path, solution: ConsolidatedSolution, statistic: MemoryStatistic,
                    meta: dict | None = None) -> None:
    blocks = []
    records = []
    for r in statistic.records:
        records.append({
            "task_id": r.task_id,
            "gamma": r.gamma,
            "class_ids": list(r.class_ids),
            "n_samples": r.n_samples,
            "shape": list(r.omega.shape),
        })
        blocks += [r.omega, r.plasticity]
    header = {
        "version": 1,
        "solution": {"shape": list(solution.omega.shape), "trained_tasks": list(solution.trained_tasks)},
        "capacity": statistic.capacity,
        "records": records,
        "meta": meta or {},
    }
    blocks.insert(0, solution.omega)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blocks:
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    tmp.replace(path)


def read_checkpoint_header(path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise BadMagic(f"{path}: not a checkpoint archive")
        size = f.read(8)
        if len(size) < 8:
            raise TruncatedFile(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", size)
        raw = f.read(n)
        if len(raw) < n:
            raise TruncatedFile(f"{path}: truncated header")
    return json.loads(raw), 16 + n


def load_checkpoint(path) -> tuple[ConsolidatedSolution, MemoryStatistic, dict]:
    header, offset = read_checkpoint_header(path)
    payload = Path(path).read_bytes()[offset:]
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) * 8
        if pos + n > len(payload):
            raise TruncatedFile(f"{path}: payload shorter than header declares")
        arr = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += n
        return arr

    sol = ConsolidatedSolution(take(header["solution"]["shape"]), list(header["solution"]["trained_tasks"]))
    records = []
    for r in header["records"]:
        omega = take(r["shape"])
        F = take(r["shape"])
        records.append(DeclarativeRecord(r["task_id"], omega, F, r["gamma"], tuple(r["class_ids"]),
                                         r["n_samples"]))
    if pos != len(payload):
        raise HeaderMismatch(f"{path}: {len(payload) - pos} trailing bytes")
    return sol, MemoryStatistic(records, header.get("capacity")), header.get("meta", {})
