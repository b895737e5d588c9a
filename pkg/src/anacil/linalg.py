"""Dense kernels shared by the feature extractor and the classifier.

Matrices are plain ``float64`` numpy arrays. Inputs are validated once at the
public entry points; everything downstream assumes finite 2-D data.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .errors import DimensionMismatch, NonFinite, SolveFailure


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array (1-D input becomes a column)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def check_finite(x: np.ndarray, name: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return x


class SPDFactor:
    """Cholesky factor of a symmetric positive-definite matrix, reusable across solves."""

    def __init__(self, M: np.ndarray, rho: float | None = None):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {M.shape}")
        c, info = lapack.dpotrf(M, lower=True, clean=True)
        if info > 0:
            raise SolveFailure(
                f"non-positive pivot at index {info - 1} (rho={rho!r})",
                rho=rho,
                pivot=info - 1,
            )
        if info < 0:
            raise SolveFailure(f"dpotrf argument {-info} invalid", rho=rho)
        self.factor = c
        self.rho = rho

    def solve(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=np.float64)
        x, info = lapack.dpotrs(self.factor, B, lower=True)
        if info != 0:
            raise SolveFailure(f"dpotrs failed with info={info}", rho=self.rho)
        return x


def gram(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return A.T @ A


def regularized_gram_solve(A, B, rho: float) -> np.ndarray:
    """Solve ``(rho*I + A^T A) X = A^T B`` by Cholesky.

    ``rho`` must be positive; it is what makes the system positive definite
    when ``A`` is rank deficient.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but B has {B.shape[0]}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    M = gram(A)
    M[np.diag_indices_from(M)] += rho
    X = SPDFactor(M, rho=rho).solve(A.T @ B)
    return check_finite(X, "solution")


def soft_threshold(a, b):
    """Soft-thresholding ``S_b(a)``; works element-wise on arrays."""
    if np.any(np.asarray(b) < 0):
        raise ValueError("threshold must be nonnegative")
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        a = float(a)
        if a > b:
            return a - b
        if a < -b:
            return a + b
        return 0.0
    a = np.asarray(a, dtype=np.float64)
    return np.sign(a) * np.maximum(np.abs(a) - b, 0.0)


def diag_embed(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    check_finite(v, "v")
    return np.diag(v)
