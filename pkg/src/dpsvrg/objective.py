"""Composite objectives ``F = f + h`` over a node-partitioned dataset."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .proximal import Regularizer

__all__ = [
    "LOSSES",
    "Dataset",
    "CompositeObjective",
    "AnalysisConstants",
    "equal_partition",
    "sample_grad",
    "sample_grads",
    "full_grad",
    "node_full_grads",
    "vr_grad",
    "smooth_value",
    "objective_value",
    "optimality_gap",
    "smoothness_L",
    "bound_constants",
    "analysis_constants",
    "per_sample_values",
]

LOSSES = ("logistic", "least_squares")


def equal_partition(n: int, m: int) -> tuple[np.ndarray, ...]:
    """Contiguous split of ``range(n)`` into ``m`` parts with sizes differing by <= 1."""
    if m < 1 or n < m:
        raise ValueError(f"cannot split {n} samples across {m} nodes")
    return tuple(np.array_split(np.arange(n), m))


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    parts: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"features {X.shape} and labels {y.shape} disagree")
        parts = tuple(np.asarray(p, dtype=np.intp) for p in self.parts)
        seen = np.concatenate(parts) if parts else np.array([], dtype=np.intp)
        if seen.size != X.shape[0] or not np.array_equal(np.sort(seen), np.arange(X.shape[0])):
            raise ValueError("partition must cover every sample exactly once")
        for a in (X, y, *parts):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "parts", parts)

    @classmethod
    def split(cls, features, labels, m: int) -> "Dataset":
        n = np.asarray(labels).reshape(-1).shape[0]
        return cls(features, labels, equal_partition(n, m))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return len(self.parts)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.size for p in self.parts])

    def repartition(self, m: int) -> "Dataset":
        return Dataset(self.features, self.labels, equal_partition(self.n, m))


@dataclass(frozen=True, eq=False)
class CompositeObjective:
    loss: str
    data: Dataset
    reg: Regularizer = field(default_factory=Regularizer)

    def __post_init__(self) -> None:
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")

    @property
    def d(self) -> int:
        return self.data.d

    def with_lambda(self, lam: float) -> "CompositeObjective":
        return CompositeObjective(self.loss, self.data, Regularizer(self.reg.kind, lam))


# -- per-sample losses ------------------------------------------------------


def _residual(obj: CompositeObjective, X: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Scalar factor r with per-sample gradient ``r * features``."""
    t = X @ x if x.ndim == 1 else np.einsum("ij,ij->i", X, x)
    if obj.loss == "logistic":
        return expit(t) - y
    return 2.0 * (t - y)


def sample_grad(obj: CompositeObjective, x: np.ndarray, sample: int) -> np.ndarray:
    """Gradient of the smooth loss of one sample at ``x``."""
    n = obj.data.n
    if not 0 <= sample < n:
        raise IndexError(f"sample {sample} out of range for n={n}")
    a = obj.data.features[sample]
    return _residual(obj, a[None, :], obj.data.labels[sample : sample + 1], np.asarray(x, float))[0] * a


def sample_grads(obj: CompositeObjective, x: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Row ``r`` is the gradient of sample ``samples[r]`` at ``x`` (or at ``x[r]`` if 2-d)."""
    X = obj.data.features[samples]
    r = _residual(obj, X, obj.data.labels[samples], np.asarray(x, float))
    return r[:, None] * X


def full_grad(obj: CompositeObjective, x: np.ndarray, node: int | None = None) -> np.ndarray:
    """Mean sample gradient over one node's samples, or all samples for ``node=None``."""
    if node is None:
        idx = slice(None)
        X, y = obj.data.features, obj.data.labels
    else:
        idx = obj.data.parts[node]
        if idx.size == 0:
            raise ValueError(f"node {node} holds no samples")
        X, y = obj.data.features[idx], obj.data.labels[idx]
    r = _residual(obj, X, y, np.asarray(x, float))
    return (r @ X) / X.shape[0]


def node_full_grads(obj: CompositeObjective, xs: np.ndarray) -> np.ndarray:
    """Stack of ``full_grad(obj, xs[i], i)`` over nodes."""
    return np.stack([full_grad(obj, xs[i], i) for i in range(obj.data.m)])


def vr_grad(
    obj: CompositeObjective,
    x: np.ndarray,
    x_snap: np.ndarray,
    snapshot_full: np.ndarray,
    sample: int,
) -> np.ndarray:
    """Variance-reduced estimator ``g_l(x) - g_l(x_snap) + snapshot_full``."""
    return sample_grad(obj, x, sample) - sample_grad(obj, x_snap, sample) + snapshot_full


def _loss_values(obj: CompositeObjective, X: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    t = X @ x
    if obj.loss == "logistic":
        return np.logaddexp(0.0, t) - y * t
    return (t - y) ** 2


def smooth_value(obj: CompositeObjective, x: np.ndarray, node: int | None = None) -> float:
    if node is None:
        X, y = obj.data.features, obj.data.labels
    else:
        idx = obj.data.parts[node]
        X, y = obj.data.features[idx], obj.data.labels[idx]
    return float(_loss_values(obj, X, y, np.asarray(x, float)).mean())


def objective_value(obj: CompositeObjective, x: np.ndarray) -> float:
    """``F(x)``: mean smooth loss over all samples plus ``h(x)``."""
    return smooth_value(obj, x) + obj.reg.value(x)


def optimality_gap(obj: CompositeObjective, x: np.ndarray, f_star: float) -> float:
    return objective_value(obj, x) - f_star


def smoothness_L(obj: CompositeObjective) -> float:
    """Per-sample gradient Lipschitz constant."""
    sq = np.einsum("ij,ij->i", obj.data.features, obj.data.features)
    top = float(sq.max()) if sq.size else 0.0
    # sigmoid' <= 1/4; squared loss (a^T x - b)^2 has Hessian 2 a a^T
    return top / 4.0 if obj.loss == "logistic" else 2.0 * top


def bound_constants(obj: CompositeObjective, R: float) -> tuple[float, float, float]:
    """``(G_f, G_h, M)`` valid on the ball ``||x|| <= R``.

    ``G_f`` bounds every per-sample gradient norm on the ball, ``G_h`` every
    subgradient of ``h``, and ``M = 2 G_f`` the deviation of the
    variance-reduced estimator from the full gradient.
    """
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    norms = np.linalg.norm(obj.data.features, axis=1)
    if obj.loss == "logistic":
        # |sigmoid(t) - b| <= sigmoid(|t|) for b in {0, 1}, |t| <= R ||a||
        per = norms * expit(R * norms)
    else:
        per = 2.0 * (norms * R + np.abs(obj.data.labels)) * norms
    G_f = float(per.max()) if per.size else 0.0
    G_h = obj.reg.G_h(obj.d)
    return G_f, G_h, 2.0 * G_f


@dataclass(frozen=True)
class AnalysisConstants:
    """Step-size and contraction constants of the linear-rate analysis."""

    L: float
    alpha: float
    delta: float
    beta: float
    n0: int
    M: float = math.nan

    @property
    def rho(self) -> float:
        return 8.0 * self.alpha * self.L / (1.0 - 4.0 * self.alpha * self.L)

    @property
    def theta(self) -> float:
        return 2.0 * self.alpha - 8.0 * self.alpha**2 * self.L

    @property
    def alpha_max(self) -> float:
        return self.delta / (self.L * (4.0 * self.delta + 8.0))

    @property
    def step_ok(self) -> bool:
        return self.alpha < self.alpha_max

    @property
    def growth_ok(self) -> bool:
        return self.rho * self.beta >= 2.0

    def rate_bound(self, s: int, gap0: float, dist0_sq: float) -> float:
        """Right-hand side of the linear-rate bound after ``s`` outer rounds with exact errors."""
        rho = self.rho
        return rho**s * ((rho / (2 * self.n0) + 1.0) * gap0 + dist0_sq / (self.n0 * self.theta))


def analysis_constants(
    L: float,
    alpha: float | None = None,
    *,
    delta: float = 0.9,
    beta: float = 2.0,
    n0: int = 4,
    M: float = math.nan,
    enforce: bool = False,
) -> AnalysisConstants:
    """Build analysis constants; with ``enforce`` pick ``alpha`` and ``beta`` satisfying the rate conditions.

    Enforcing takes ``alpha = 0.9 * delta / (L (4 delta + 8))`` (or the given
    alpha if smaller) and raises ``beta`` to ``2 / rho`` when needed, since
    shrinking alpha shrinks rho and can only make ``rho * beta >= 2`` harder.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if enforce:
        cap = 0.9 * delta / (L * (4.0 * delta + 8.0))
        alpha = cap if alpha is None else min(alpha, cap)
        c = AnalysisConstants(L, alpha, delta, beta, n0, M)
        if not c.growth_ok:
            b = 2.0 / c.rho
            while c.rho * b < 2.0:
                b = float(np.nextafter(b, np.inf))
            c = AnalysisConstants(L, alpha, delta, b, n0, M)
        return c
    if alpha is None:
        raise ValueError("alpha is required unless enforce=True")
    return AnalysisConstants(L, alpha, delta, beta, n0, M)


def per_sample_values(obj: CompositeObjective, x: np.ndarray, samples: Sequence[int] | None = None) -> np.ndarray:
    X, y = obj.data.features, obj.data.labels
    if samples is not None:
        X, y = X[samples], y[samples]
    return _loss_values(obj, X, y, np.asarray(x, float))
