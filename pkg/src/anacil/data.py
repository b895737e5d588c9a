"""Dataset ingestion and class-incremental task construction.

Two on-disk formats are read:

* IDX (big-endian, unsigned-byte payload), as used by MNIST-style datasets.
  Images are scaled to [0, 1] and flattened row-major.
* The feature-matrix format: one line of JSON ``{"rows", "cols",
  "label_count"}`` terminated by ``\\n``, then ``rows*cols`` little-endian
  float32 values in row-major order, then ``label_count`` little-endian int32
  labels. Plain CSV with the label in the last column is accepted as well.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadLabel, BadMagic, CountMismatch, HeaderMismatch, IndivisibleSplit,
                     MissingClass, NonFinite, TruncatedFile)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: shorter than an IDX magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFile(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = int(np.prod(dims))
    if len(raw) - head < n:
        raise TruncatedFile(f"{path}: expected {n} payload bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return X, labels.astype(np.int64)


def save_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images (N x rows x cols) and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(">3I", *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _check_labels(labels: np.ndarray, path) -> np.ndarray:
    if labels.size and (labels.min() < 0):
        raise BadLabel(f"{path}: negative label {labels.min()}")
    return labels.astype(np.int64)


def save_feature_matrix(path, X, labels) -> None:
    X = np.asarray(X, dtype="<f4")
    labels = np.asarray(labels, dtype="<i4")
    if X.ndim != 2 or labels.shape != (X.shape[0],):
        raise HeaderMismatch(f"need a 2-D matrix and one label per row, got {X.shape} / {labels.shape}")
    header = json.dumps({"rows": X.shape[0], "cols": X.shape[1], "label_count": len(labels)})
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(X.tobytes())
        f.write(labels.tobytes())


def load_feature_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"{"):
        return _load_csv(path, raw)
    nl = raw.find(b"\n")
    if nl < 0:
        raise HeaderMismatch(f"{path}: header line not terminated")
    try:
        header = json.loads(raw[:nl])
        rows, cols, count = int(header["rows"]), int(header["cols"]), int(header["label_count"])
    except (ValueError, KeyError, TypeError) as err:
        raise HeaderMismatch(f"{path}: malformed header ({err})") from err
    if count != rows:
        raise HeaderMismatch(f"{path}: {rows} rows but {count} labels")
    body = raw[nl + 1:]
    expected = 4 * rows * cols + 4 * count
    if len(body) != expected:
        raise HeaderMismatch(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    X = np.frombuffer(body, dtype="<f4", count=rows * cols).reshape(rows, cols)
    labels = np.frombuffer(body, dtype="<i4", count=count, offset=4 * rows * cols)
    if not np.isfinite(X).all():
        raise NonFinite(f"{path}: non-finite feature values")
    return X.astype(np.float64), _check_labels(labels, path)


def _load_csv(path, raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(raw.decode("utf-8").splitlines(), delimiter=",", ndmin=2)
    except ValueError as err:
        raise HeaderMismatch(f"{path}: unreadable CSV ({err})") from err
    X, y = data[:, :-1], data[:, -1]
    if not np.isfinite(X).all():
        raise NonFinite(f"{path}: non-finite feature values")
    if not np.all(y == np.round(y)):
        raise BadLabel(f"{path}: non-integral labels")
    return X, _check_labels(y.astype(np.int64), path)


@dataclass(frozen=True)
class TaskBatch:
    task_id: int
    X: np.ndarray
    Y: np.ndarray
    class_ids: tuple[int, ...]
    columns: tuple[int, ...]
    split: str

    @property
    def targets(self) -> np.ndarray:
        """Global column index of each row's class."""
        return np.argmax(self.Y, axis=1)

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[tuple[TaskBatch, TaskBatch | None], ...]
    order_seed: int | None
    name: str
    C: int
    T: int
    class_order: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


def _batches(X, labels, groups, split) -> list[TaskBatch]:
    col_of = {c: i for i, c in enumerate(np.concatenate(groups))}
    out = []
    for t, cls in enumerate(groups, start=1):
        idx = np.flatnonzero(np.isin(labels, cls))
        width = t * len(cls)
        Y = np.zeros((len(idx), width))
        Y[np.arange(len(idx)), [col_of[c] for c in labels[idx]]] = 1.0
        out.append(TaskBatch(t, X[idx], Y, tuple(int(c) for c in cls),
                             tuple(col_of[c] for c in cls), split))
    return out


def split_classes(X, labels, C: int, T: int, order_seed: int | None = None, *,
                  X_test=None, labels_test=None, name: str = "") -> TaskSequence:
    """Shuffle the ``C`` classes with ``order_seed`` and deal them into ``T`` tasks."""
    if T < 1 or C % T:
        raise IndivisibleSplit(f"{T} tasks do not divide {C} classes")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise BadLabel(f"labels must lie in 0..{C - 1}")
    missing = sorted(set(range(C)) - set(np.unique(labels).tolist()))
    if missing:
        raise MissingClass(f"classes {missing} have no samples")
    order = np.arange(C) if order_seed is None else np.random.default_rng(order_seed).permutation(C)
    groups = order.reshape(T, C // T)
    train = _batches(X, labels, groups, "train")
    if X_test is not None:
        test = _batches(np.asarray(X_test, dtype=np.float64), np.asarray(labels_test), groups, "test")
    else:
        test = [None] * T
    return TaskSequence(tuple(zip(train, test)), order_seed, name, C, T, tuple(int(c) for c in order))


def synth_gaussian_arrays(C: int, dim: int, n_per_class: int, separation: float, seed: int):
    """Class-major Gaussian blobs with an 80/20 train/test split per class."""
    if min(C, dim, n_per_class) < 1 or separation < 0:
        raise ValueError("C, dim, n_per_class must be positive and separation nonnegative")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((C, dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    n_train = int(round(0.8 * n_per_class))
    Xtr, ytr, Xte, yte = [], [], [], []
    for c in range(C):
        S = separation * U[c] + rng.standard_normal((n_per_class, dim))
        Xtr.append(S[:n_train])
        Xte.append(S[n_train:])
        ytr += [c] * n_train
        yte += [c] * (n_per_class - n_train)
    return np.vstack(Xtr), np.asarray(ytr), np.vstack(Xte), np.asarray(yte)


def synth_gaussian_tasks(C: int, T: int, dim: int, n_per_class: int, separation: float,
                         seed: int, order_seed: int | None = None) -> TaskSequence:
    Xtr, ytr, Xte, yte = synth_gaussian_arrays(C, dim, n_per_class, separation, seed)
    return split_classes(Xtr, ytr, C, T, seed if order_seed is None else order_seed,
                         X_test=Xte, labels_test=yte, name="synthetic")
