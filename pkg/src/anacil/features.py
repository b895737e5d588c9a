"""Augmented representations ``A = [Z, G*]`` from grouped random mappings.

``Z`` comes from a frozen base mapping (or is the input itself when the input
already is a feature matrix). ``n`` random groups ``G_i = Z W_i + beta_i`` are
refined by a lasso fit of ``G_i -> Z`` solved with ADMM; the refined forward
weights are the transposed lasso solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFinite
from .linalg import SPDFactor, as_matrix, gram, soft_threshold

ACTIVATIONS = ("none", "clipped-linear")
CONNECTIONS = ("augmented", "base", "groups", "refined")


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return x
    if kind == "clipped-linear":
        return np.clip(x, -1.0, 1.0)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class BaseMapping:
    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    activation: str = "none"
    seed: int | None = None

    @classmethod
    def identity(cls, width: int) -> "BaseMapping":
        return cls("identity-passthrough", bias=np.zeros(width))

    @classmethod
    def frozen_affine(cls, in_dim: int, h: int, seed: int, activation: str = "none") -> "BaseMapping":
        rng = np.random.default_rng(seed)
        W = rng.uniform(-1.0, 1.0, size=(in_dim, h))
        b = rng.uniform(-1.0, 1.0, size=h)
        W.setflags(write=False)
        b.setflags(write=False)
        return cls("frozen-affine", W, b, activation, seed)

    @property
    def out_dim(self) -> int:
        return len(self.bias)

    @property
    def n_params(self) -> int:
        if self.kind == "identity-passthrough":
            return 0
        return self.weights.size + self.bias.size


def base_forward(X, base: BaseMapping) -> np.ndarray:
    X = as_matrix(X, "X")
    if base.kind == "identity-passthrough":
        if X.shape[1] != base.out_dim:
            raise DimensionMismatch(f"expected {base.out_dim} columns, got {X.shape[1]}")
        return X
    if X.shape[1] != base.weights.shape[0]:
        raise DimensionMismatch(f"base expects {base.weights.shape[0]} inputs, got {X.shape[1]}")
    return activate(X @ base.weights + base.bias, base.activation)


@dataclass(frozen=True)
class GroupMapping:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int | None = None
    activation: str = "none"

    @property
    def n_groups(self) -> int:
        return len(self.weights)

    @property
    def group_width(self) -> int:
        return self.weights[0].shape[1] if self.weights else 0

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


def init_groups(h: int, n: int, k: int, seed: int, activation: str = "none") -> GroupMapping:
    """Draw ``n`` groups of ``k`` nodes, every entry uniform on [-1, 1].

    Draw order is W_1, beta_1, W_2, beta_2, ... from one seeded stream.
    """
    if h < 1 or n < 0 or k < 1:
        raise ValueError(f"need h >= 1, n >= 0, k >= 1 (got {h}, {n}, {k})")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for _ in range(n):
        W = rng.uniform(-1.0, 1.0, size=(h, k))
        b = rng.uniform(-1.0, 1.0, size=k)
        W.setflags(write=False)
        b.setflags(write=False)
        Ws.append(W)
        bs.append(b)
    return GroupMapping(tuple(Ws), tuple(bs), seed, activation)


def group_forward(Z, groups: GroupMapping) -> list[np.ndarray]:
    Z = as_matrix(Z, "Z")
    out = []
    for W, b in zip(groups.weights, groups.biases):
        if Z.shape[1] != W.shape[0]:
            raise DimensionMismatch(f"groups expect {W.shape[0]} columns, got {Z.shape[1]}")
        out.append(activate(Z @ W + b, groups.activation))
    return out


@dataclass
class AdmmState:
    theta_star: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    iteration: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list)


def lasso_objective(G: np.ndarray, Z: np.ndarray, theta: np.ndarray, alpha: float) -> float:
    r = G @ theta - Z
    return float(np.sum(r * r) + alpha * np.abs(theta).sum())


def admm_lasso(G, Z, alpha: float = 0.01, rho: float = 1.0, max_iter: int = 100,
               tol: float = 1e-6, track_objective: bool = False) -> AdmmState:
    """ADMM for ``min ||G theta - Z||^2 + alpha ||theta||_1``; returns the final state.

    The ``(rho I + G^T G)`` factorization is computed once. The threshold is
    ``alpha / (2 rho)`` because the quadratic term carries no 1/2.
    """
    G = as_matrix(G, "G")
    Z = as_matrix(Z, "Z")
    if G.shape[0] != Z.shape[0]:
        raise DimensionMismatch(f"G has {G.shape[0]} rows but Z has {Z.shape[0]}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")

    k, h = G.shape[1], Z.shape[1]
    M = gram(G)
    M[np.diag_indices_from(M)] += rho
    factor = SPDFactor(M, rho=rho)
    GtZ = G.T @ Z
    thresh = alpha / (2.0 * rho)

    st = AdmmState(np.zeros((k, h)), np.zeros((k, h)), np.zeros((k, h)))
    for it in range(1, max_iter + 1):
        theta_star = factor.solve(GtZ + rho * (st.theta - st.u))
        theta = soft_threshold(theta_star + st.u, thresh)
        u = st.u + theta_star - theta
        if not (np.isfinite(theta).all() and np.isfinite(u).all()):
            raise NonFinite(f"ADMM diverged at iteration {it}", iteration=it)
        gap = max(np.abs(theta_star - theta).max(initial=0.0),
                  np.abs(theta - st.theta).max(initial=0.0))
        st.theta_star, st.theta, st.u, st.iteration = theta_star, theta, u, it
        if track_objective:
            st.history.append(lasso_objective(G, Z, theta, alpha))
        if gap <= tol:
            st.converged = True
            break
    return st


def admm_refine(G_i, Z, alpha: float = 0.01, rho: float = 1.0, max_iter: int = 100,
                tol: float = 1e-6) -> np.ndarray:
    """Sparse ``k x h`` map reconstructing ``Z`` from one group's output."""
    return admm_lasso(G_i, Z, alpha, rho, max_iter, tol).theta


@dataclass(frozen=True)
class AugmentedFeatures:
    matrix: np.ndarray
    z_cols: int
    g_cols: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def refined_groups(groups: GroupMapping, refined) -> GroupMapping:
    if len(refined) != groups.n_groups:
        raise DimensionMismatch(f"{groups.n_groups} groups but {len(refined)} refined maps")
    Ws = []
    for W, theta in zip(groups.weights, refined):
        if theta.shape != W.T.shape:
            raise DimensionMismatch(f"refined map has shape {theta.shape}, expected {W.T.shape}")
        Ws.append(np.array(theta.T))
    return GroupMapping(tuple(Ws), groups.biases, groups.seed, groups.activation)


def augment(Z, groups: GroupMapping, refined) -> AugmentedFeatures:
    """``A = [Z, G_1*, ..., G_n*]`` with ``W_i* = theta_i^T`` and unchanged biases."""
    Z = as_matrix(Z, "Z")
    Gs = group_forward(Z, refined_groups(groups, refined))
    g_cols = sum(G.shape[1] for G in Gs)
    return AugmentedFeatures(np.hstack([Z, *Gs]), Z.shape[1], g_cols)


class FeatureExtractor:
    """Base mapping plus refined groups, fit once and reused across tasks.

    ``connection`` selects the ablation variant: ``augmented`` gives
    ``[Z, G*]``, ``base`` gives ``Z``, ``groups`` the unrefined ``G`` and
    ``refined`` ``G*`` alone.
    """

    def __init__(self, base: BaseMapping, groups: GroupMapping, *, alpha=0.01, rho=1.0,
                 max_iter=100, tol=1e-6, connection="augmented", refine_per_task=False):
        if connection not in CONNECTIONS:
            raise ValueError(f"connection must be one of {CONNECTIONS}")
        self.base = base
        self.groups = groups
        self.alpha, self.rho, self.max_iter, self.tol = alpha, rho, max_iter, tol
        self.connection = connection
        self.refine_per_task = refine_per_task
        self.refined: list[np.ndarray] | None = None

    @property
    def needs_refinement(self) -> bool:
        return self.connection in ("augmented", "refined") and self.groups.n_groups > 0

    def fit(self, X) -> "FeatureExtractor":
        if self.needs_refinement and (self.refined is None or self.refine_per_task):
            Z = base_forward(X, self.base)
            self.refined = [admm_refine(G, Z, self.alpha, self.rho, self.max_iter, self.tol)
                            for G in group_forward(Z, self.groups)]
        return self

    def transform(self, X) -> AugmentedFeatures:
        Z = base_forward(X, self.base)
        if self.connection == "base" or self.groups.n_groups == 0:
            return AugmentedFeatures(Z, Z.shape[1], 0)
        if self.connection == "groups":
            G = np.hstack(group_forward(Z, self.groups))
            return AugmentedFeatures(G, 0, G.shape[1])
        if self.refined is None:
            raise RuntimeError("transform called before fit")
        if self.connection == "refined":
            G = np.hstack(group_forward(Z, refined_groups(self.groups, self.refined)))
            return AugmentedFeatures(G, 0, G.shape[1])
        return augment(Z, self.groups, self.refined)

    @property
    def out_dim(self) -> int:
        h = self.base.out_dim
        g = self.groups.n_groups * self.groups.group_width
        return {"augmented": h + g, "base": h, "groups": g, "refined": g}[self.connection] if g else h

    @property
    def n_params(self) -> int:
        n = self.base.n_params
        if self.connection != "base":
            n += self.groups.n_params
        return n
