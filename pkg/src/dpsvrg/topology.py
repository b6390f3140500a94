"""Time-varying doubly stochastic mixing schedules.

A schedule is a periodic stream of m x m mixing matrices ``W^t``. Every
window of ``b`` consecutive matrices (starting at a multiple of ``b``) has a
connected union graph, and every matrix is symmetric, doubly stochastic and
has a strictly positive diagonal.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "FAMILIES",
    "MixingSchedule",
    "ScheduleError",
    "metropolis_weights",
    "is_doubly_stochastic",
    "is_connected",
    "make_schedule",
    "phi",
    "consensus_bound",
    "gossip_once",
    "multi_consensus",
    "dump_schedule",
    "load_schedule",
]

FAMILIES = ("ring-split", "random-matching", "static")

_STOCH_TOL = 1e-12


class ScheduleError(ValueError):
    """Invalid schedule parameters or a schedule violating its invariants."""


def metropolis_weights(adj: np.ndarray) -> np.ndarray:
    """Metropolis-Hastings mixing matrix for an undirected adjacency matrix.

    Off-diagonal weight on edge (i, j) is ``1 / (1 + max(deg_i, deg_j))``; the
    diagonal takes the remainder of the row.
    """
    adj = np.asarray(adj, dtype=bool)
    adj = adj | adj.T
    np.fill_diagonal(adj, False)
    deg = adj.sum(axis=1)
    m = adj.shape[0]
    w = np.zeros((m, m))
    ii, jj = np.nonzero(adj)
    w[ii, jj] = 1.0 / (1.0 + np.maximum(deg[ii], deg[jj]))
    w[np.arange(m), np.arange(m)] = 1.0 - w.sum(axis=1)
    return w


def is_doubly_stochastic(w: np.ndarray, tol: float = _STOCH_TOL) -> bool:
    w = np.asarray(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or np.any(w < 0):
        return False
    return bool(
        np.all(np.abs(w.sum(axis=0) - 1.0) <= tol)
        and np.all(np.abs(w.sum(axis=1) - 1.0) <= tol)
    )


def is_connected(adj: np.ndarray) -> bool:
    adj = np.asarray(adj, dtype=bool)
    if adj.shape[0] <= 1:
        return True
    n_comp, _ = connected_components(adj.astype(np.int8), directed=False)
    return n_comp == 1


def _support(w: np.ndarray) -> np.ndarray:
    adj = np.asarray(w) > 0
    np.fill_diagonal(adj, False)
    return adj


@dataclass(frozen=True, eq=False)
class MixingSchedule:
    """Periodic stream of mixing matrices with b-connectivity metadata.

    ``eta`` is the positive-weight floor used for the consensus constants. It
    must not exceed the smallest positive entry of any stored matrix.
    """

    m: int
    b: int
    eta: float
    family: str
    seed: int
    matrices: tuple[np.ndarray, ...]
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        mats = []
        for w in self.matrices:
            w = np.array(w, dtype=float)
            w.setflags(write=False)
            mats.append(w)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def period(self) -> int:
        return len(self.matrices)

    @property
    def b0(self) -> int:
        return (self.m - 1) * self.b

    @property
    def gamma(self) -> float:
        return 1.0 - self.eta**self.b0

    @property
    def Gamma(self) -> float:
        return 2.0 * (1.0 + self.eta ** (-self.b0))

    @property
    def min_positive_weight(self) -> float:
        return min(float(w[w > 0].min()) for w in self.matrices)

    def matrix(self, t: int) -> np.ndarray:
        """Mixing matrix used at global communication step ``t``."""
        if t < 0:
            raise ScheduleError(f"step must be nonnegative, got {t}")
        return self.matrices[t % self.period]

    def validate(self) -> None:
        """Raise ScheduleError unless every schedule invariant holds."""
        if self.m < 2:
            raise ScheduleError(f"m must be >= 2, got {self.m}")
        if self.period == 0 or self.period % self.b:
            raise ScheduleError(
                f"period {self.period} is not a positive multiple of b={self.b}"
            )
        for t, w in enumerate(self.matrices):
            if w.shape != (self.m, self.m):
                raise ScheduleError(f"matrix {t} has shape {w.shape}")
            if not is_doubly_stochastic(w):
                raise ScheduleError(f"matrix {t} is not doubly stochastic")
            if not np.array_equal(w > 0, (w > 0).T):
                raise ScheduleError(f"matrix {t} has an asymmetric zero pattern")
            if np.any(np.diag(w) <= 0):
                raise ScheduleError(f"matrix {t} has a zero diagonal entry")
        if not 0 < self.eta <= self.min_positive_weight:
            raise ScheduleError(
                f"eta={self.eta} exceeds the smallest positive weight "
                f"{self.min_positive_weight}"
            )
        for j in range(self.period // self.b):
            union = np.zeros((self.m, self.m), dtype=bool)
            for w in self.matrices[j * self.b : (j + 1) * self.b]:
                union |= _support(w)
            if not is_connected(union):
                raise ScheduleError(f"window {j} has a disconnected union graph")

    # -- products -----------------------------------------------------------

    def _range_product(self, o: int, k: int) -> np.ndarray:
        """W^{o+k-1} ... W^{o} for 0 <= o and o + k <= period."""
        key = ("r", o, k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if k == 0:
            out = np.eye(self.m)
        elif k == 1:
            out = self.matrices[o]
        else:
            out = self.matrices[o + k - 1] @ self._range_product(o, k - 1)
        self._cache[key] = out
        return out

    def _period_power(self, q: int) -> np.ndarray:
        powers = self._cache.setdefault("pow", [np.eye(self.m)])
        full = self._range_product(0, self.period)
        while len(powers) <= q:
            powers.append(full @ powers[-1])
        return powers[q]

    def product(self, t: int, k: int) -> np.ndarray:
        """Ordered product ``W^{t+k-1} ... W^{t}`` of the next ``k`` matrices."""
        if k < 0 or t < 0:
            raise ScheduleError(f"invalid product span t={t}, k={k}")
        p = self.period
        o = t % p
        with self._lock:
            if o + k <= p:
                return self._range_product(o, k)
            head = self._range_product(o, p - o)
            q, r = divmod(k - (p - o), p)
            return self._range_product(0, r) @ self._period_power(q) @ head


def make_schedule(
    m: int,
    b: int = 1,
    eta: float | None = None,
    family: str = "ring-split",
    seed: int = 0,
    *,
    windows: int = 4,
    graph: str = "ring",
) -> MixingSchedule:
    """Build a b-connected schedule of Metropolis mixing matrices.

    Parameters
    ----------
    m : int
        Number of nodes (>= 2).
    b : int
        Connectivity window length.
    eta : float, optional
        Requested positive-weight floor, ``0 < eta <= 1/m``. Metropolis
        weights never fall below ``1/m``, so the floor always holds; the
        returned schedule carries the realized minimum positive weight.
    family : {"ring-split", "random-matching", "static"}
        ``ring-split`` assigns ring edge ``e_i`` to slot ``i mod b``;
        ``random-matching`` draws one random matching per slot and patches
        each window to connectivity; ``static`` repeats one connected graph
        (``graph`` is "ring" or "complete") and requires ``b == 1``.
    seed : int
        Seed for the schedule's private generator.
    windows : int
        Number of distinct windows generated for ``random-matching``; the
        stream is periodic with period ``windows * b``.
    """
    if m < 2:
        raise ScheduleError(f"m must be >= 2, got {m}")
    if b < 1:
        raise ScheduleError(f"b must be >= 1, got {b}")
    if eta is None:
        eta = 1.0 / m
    if not eta > 0:
        raise ScheduleError(f"eta must be positive, got {eta}")
    if eta * m > 1.0 + 1e-15:
        raise ScheduleError(
            f"eta={eta} with m={m}: a doubly stochastic matrix with full "
            "support cannot have every weight >= eta (eta * m > 1)"
        )
    if family not in FAMILIES:
        raise ScheduleError(f"unknown family {family!r}; expected one of {FAMILIES}")

    rng = np.random.default_rng(seed)
    if family == "static":
        if b != 1:
            raise ScheduleError("the static family requires b == 1")
        adj = np.zeros((m, m), dtype=bool)
        if graph == "ring":
            for i in range(m):
                adj[i, (i + 1) % m] = True
        elif graph == "complete":
            adj[:] = True
        else:
            raise ScheduleError(f"unknown static graph {graph!r}")
        adjs = [adj]
    elif family == "ring-split":
        edges = _ring_edges(m)
        adjs = [np.zeros((m, m), dtype=bool) for _ in range(b)]
        for i, (u, v) in enumerate(edges):
            adjs[i % b][u, v] = True
    else:
        adjs = []
        for _ in range(windows):
            adjs.extend(_matching_window(m, b, rng))

    mats = tuple(metropolis_weights(a) for a in adjs)
    floor = min(float(w[w > 0].min()) for w in mats)
    if floor < eta:
        raise ScheduleError(f"realized weight floor {floor} is below eta={eta}")
    sched = MixingSchedule(m=m, b=b, eta=floor, family=family, seed=seed, matrices=mats)
    sched.validate()
    return sched


def _ring_edges(m: int) -> list[tuple[int, int]]:
    if m == 2:
        return [(0, 1)]
    return [(i, (i + 1) % m) for i in range(m)]


def _matching_window(m: int, b: int, rng: np.random.Generator) -> list[np.ndarray]:
    slots = []
    for _ in range(b):
        perm = rng.permutation(m)
        adj = np.zeros((m, m), dtype=bool)
        for u, v in zip(perm[0::2], perm[1::2]):
            adj[u, v] = adj[v, u] = True
        slots.append(adj)
    union = np.zeros((m, m), dtype=bool)
    for a in slots:
        union |= a
    n_comp, labels = connected_components(union.astype(np.int8), directed=False)
    # link consecutive components through a random slot
    for c in range(1, n_comp):
        u = rng.choice(np.flatnonzero(labels == c - 1))
        v = rng.choice(np.flatnonzero(labels == c))
        a = slots[int(rng.integers(b))]
        a[u, v] = a[v, u] = True
    return slots


def phi(schedule: MixingSchedule, l: int, g: int) -> np.ndarray:
    """Aggregated matrix ``W^g W^{g-1} ... W^l``."""
    if l > g:
        raise ScheduleError(f"phi requires l <= g, got l={l}, g={g}")
    return schedule.product(l, g - l + 1)


def consensus_bound(schedule: MixingSchedule, span: int) -> float:
    """Geometric bound ``Gamma * gamma**span`` on ``|phi_ij - 1/m|``."""
    return schedule.Gamma * schedule.gamma**span


def gossip_once(params: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One gossip round: row ``i`` of the output is ``sum_j w_ij params_j``."""
    params = np.asarray(params, dtype=float)
    w = np.asarray(w, dtype=float)
    if params.ndim != 2 or w.shape != (params.shape[0], params.shape[0]):
        raise ValueError(
            f"expected (m, d) params and an m x m matrix, got {params.shape} "
            f"and {w.shape}"
        )
    return w @ params


def multi_consensus(
    params: np.ndarray, schedule: MixingSchedule, start_step: int, rounds: int
) -> tuple[np.ndarray, int]:
    """Apply the next ``rounds`` schedule matrices in order.

    Returns the mixed parameters and the next unused schedule step.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    return gossip_once(params, schedule.product(start_step, rounds)), start_step + rounds


# -- text serialization -----------------------------------------------------


def dump_schedule(schedule: MixingSchedule, fp: TextIO) -> None:
    """Write ``m b eta family seed`` then one blank-line separated block per matrix."""
    fp.write(
        f"{schedule.m} {schedule.b} {schedule.eta!r} {schedule.family} {schedule.seed}\n"
    )
    for w in schedule.matrices:
        fp.write("\n")
        for row in w:
            fp.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_schedule(fp: TextIO) -> MixingSchedule:
    lines = [ln.strip() for ln in fp.read().splitlines()]
    if not lines or not lines[0]:
        raise ScheduleError("empty schedule file")
    head = lines[0].split()
    if len(head) != 5:
        raise ScheduleError(f"bad header {lines[0]!r}; expected 'm b eta family seed'")
    m, b, eta, family, seed = int(head[0]), int(head[1]), float(head[2]), head[3], int(head[4])
    rows = [ln for ln in lines[1:] if ln]
    if len(rows) % m:
        raise ScheduleError(f"{len(rows)} matrix rows is not a multiple of m={m}")
    data = np.array([[float(v) for v in r.split()] for r in rows])
    if data.shape[1] != m:
        raise ScheduleError(f"matrix rows must have {m} entries")
    mats = tuple(data[i : i + m] for i in range(0, len(rows), m))
    sched = MixingSchedule(m=m, b=b, eta=eta, family=family, seed=seed, matrices=mats)
    sched.validate()
    return sched
