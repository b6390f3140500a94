"""Exact and inexact proximal operators for the nonsmooth regularizer.

The prox objective throughout is ``||y - z||^2 / (2 alpha) + h(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Regularizer",
    "InexactProxResult",
    "ProxConvergenceError",
    "prox_l1",
    "prox_numeric",
    "prox_inexact",
    "prox_objective",
    "epsilon_of",
    "replay_epsilon",
    "min_subgradient",
]


class ProxConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Regularizer:
    """Separable convex regularizer: ``lam * ||x||_1`` or identically zero.

    Operations below only use ``value``, ``subgradient_box`` and ``prox``,
    so adding another separable ``h`` means filling in those three.
    """

    kind: str = "l1"
    lam: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("l1", "zero"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    @property
    def scale(self) -> float:
        return self.lam if self.kind == "l1" else 0.0

    def value(self, x: np.ndarray) -> float:
        if self.scale == 0.0:
            return 0.0
        return self.scale * float(np.abs(x).sum())

    def subgradient_box(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise ``(lo, hi)`` with ``dh(x) = [lo_1, hi_1] x ... x [lo_d, hi_d]``."""
        x = np.asarray(x, dtype=float)
        c = self.scale
        lo = np.where(x > 0, c, -c)
        hi = np.where(x < 0, -c, c)
        return lo, hi

    def prox(self, z: np.ndarray, alpha: float) -> np.ndarray:
        if self.scale == 0.0:
            return np.array(z, dtype=float)
        return prox_l1(z, alpha, self.scale)

    def G_h(self, d: int) -> float:
        """Bound on the norm of any subgradient."""
        return self.scale * math.sqrt(d)


@dataclass(frozen=True)
class InexactProxResult:
    point: np.ndarray
    achieved_eps: float


def prox_l1(z: np.ndarray, alpha: float, lam: float) -> np.ndarray:
    """Soft-threshold ``z`` by ``alpha * lam``."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = np.asarray(z, dtype=float)
    t = alpha * lam
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def prox_objective(h: Regularizer, y: np.ndarray, z: np.ndarray, alpha: float) -> float:
    diff = np.asarray(y, dtype=float) - z
    return float(diff @ diff) / (2.0 * alpha) + h.value(y)


def prox_numeric(
    h: Regularizer,
    z: np.ndarray,
    alpha: float,
    tol: float = 1e-12,
    *,
    x0: np.ndarray | None = None,
    max_sweeps: int = 50,
    radius: float | None = None,
) -> np.ndarray:
    """Reference prox by cyclic coordinate descent.

    Each coordinate subproblem is solved by bisection on the one-sided
    derivative ``(t - z_j) / alpha + dh_j(t)``, which needs only the
    subgradient box of ``h``. Sweeps stop once no coordinate moves by more
    than ``tol``. ``x0`` and ``radius`` set the starting point and the
    bisection bracket half-width.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = np.asarray(z, dtype=float)
    x = np.array(z if x0 is None else x0, dtype=float)
    d = z.size
    if radius is None:
        # every subgradient is bounded by G_h, so the minimizer is within alpha*G_h of z
        radius = alpha * h.G_h(max(d, 1)) + 1.0

    def right_deriv(j: int, t: float) -> float:
        xj = x.copy()
        xj[j] = t
        _, hi = h.subgradient_box(xj)
        return (t - z[j]) / alpha + hi[j]

    for _ in range(max_sweeps):
        moved = 0.0
        for j in range(d):
            lo_t, hi_t = z[j] - radius, z[j] + radius
            while hi_t - lo_t > tol * 0.25:
                mid = 0.5 * (lo_t + hi_t)
                if mid == lo_t or mid == hi_t:
                    break
                if right_deriv(j, mid) >= 0:
                    hi_t = mid
                else:
                    lo_t = mid
            t = 0.5 * (lo_t + hi_t)
            moved = max(moved, abs(t - x[j]))
            x[j] = t
        if moved <= tol:
            return x
    raise ProxConvergenceError(f"coordinate descent did not settle in {max_sweeps} sweeps")


def epsilon_of(
    h: Regularizer, candidate: np.ndarray, z: np.ndarray, alpha: float
) -> float:
    """Prox-objective gap of ``candidate`` above the exact minimum (>= 0)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    y = h.prox(z, alpha)
    gap = prox_objective(h, candidate, z, alpha) - prox_objective(h, y, z, alpha)
    return max(gap, 0.0)


def min_subgradient(h: Regularizer, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Member ``p`` of ``dh(x)`` minimizing ``<direction, p>``."""
    lo, hi = h.subgradient_box(x)
    return np.where(direction > 0, lo, hi)


def replay_epsilon(
    h: Regularizer,
    xbar: np.ndarray,
    qbar: np.ndarray,
    alpha: float,
    p: np.ndarray | None = None,
) -> float:
    """Proximal error certifying ``xbar`` as an inexact prox of ``qbar``.

    ``||xbar - y||^2 / (2 alpha) + <xbar - y, (y - qbar)/alpha + p>`` with
    ``y`` the exact prox of ``qbar`` and ``p`` a subgradient of ``h`` at
    ``xbar``. By convexity this upper-bounds ``epsilon_of(h, xbar, qbar,
    alpha)``; the default ``p`` is the subgradient making it smallest.
    """
    xbar = np.asarray(xbar, dtype=float)
    y = h.prox(qbar, alpha)
    diff = xbar - y
    if p is None:
        p = min_subgradient(h, xbar, diff)
    val = float(diff @ diff) / (2.0 * alpha) + float(diff @ ((y - qbar) / alpha + p))
    return max(val, 0.0)


def prox_inexact(
    h: Regularizer,
    z: np.ndarray,
    alpha: float,
    eps_target: float,
    rng: np.random.Generator | int | None = 0,
) -> InexactProxResult:
    """A point whose prox-objective gap is (at most, and close to) ``eps_target``.

    Starts from the exact prox ``y`` and moves along a random unit direction
    ``u`` by the step solving ``t^2/(2 alpha) + a t = eps`` where ``a`` is the
    one-sided directional derivative of the prox objective at ``y``. If a
    kink of ``h`` is crossed (or rounding pushes the gap past the target) the
    step is shrunk by ``sqrt(eps / gap)`` until it fits.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if eps_target < 0:
        raise ValueError(f"eps_target must be >= 0, got {eps_target}")
    z = np.asarray(z, dtype=float)
    y = h.prox(z, alpha)
    if eps_target == 0:
        return InexactProxResult(y, 0.0)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    u = rng.standard_normal(z.shape)
    u /= np.linalg.norm(u)

    lo, hi = h.subgradient_box(y)
    slope_h = np.where(u > 0, hi * u, lo * u).sum()
    a = max(float((y - z) @ u) / alpha + float(slope_h), 0.0)
    t = alpha * (math.sqrt(a * a + 2.0 * eps_target / alpha) - a)
    for _ in range(200):
        x = y + t * u
        gap = epsilon_of(h, x, z, alpha)
        if gap <= eps_target:
            return InexactProxResult(x, gap)
        t *= math.sqrt(eps_target / gap) * (1.0 - 1e-9)
    return InexactProxResult(y, 0.0)
