"""DPSVRG, its centralized inexact equivalent, the DSPG baseline and a reference solver."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .metrics import MetricsRecord, MetricsSink
from .objective import (
    CompositeObjective,
    _residual,
    full_grad,
    node_full_grads,
    objective_value,
    smooth_value,
)
from .proximal import Regularizer, epsilon_of, prox_inexact, prox_objective, replay_epsilon
from .topology import MixingSchedule

__all__ = [
    "CONSENSUS_POLICIES",
    "STEP_RULES",
    "ConfigError",
    "ReferenceSolverError",
    "RunConfig",
    "ErrorTrace",
    "RunHistory",
    "DPSVRGResult",
    "InexactResult",
    "DSPGResult",
    "node_rngs",
    "run_dpsvrg",
    "construct_errors",
    "run_inexact_prox_svrg",
    "run_dspg",
    "dspg_matched_iterations",
    "run_reference",
    "gradient_mapping_norm",
    "ErrorBounds",
]

CONSENSUS_POLICIES = ("multi", "single")
STEP_RULES = ("constant", "decay")


class ConfigError(ValueError):
    """A configuration value violates its contract; ``field`` names the offender."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class ReferenceSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    lam: float
    beta: float = 2.0
    n0: int = 4
    S: int = 4
    m: int = 4
    batch: int = 1
    consensus: str = "multi"
    seed: int = 0
    record_errors: bool = False
    dspg_step: str = "constant"
    dspg_iters: int = 0

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError("alpha", f"must be positive, got {self.alpha}")
        if self.lam < 0:
            raise ConfigError("lam", f"must be >= 0, got {self.lam}")
        if not self.beta > 1:
            raise ConfigError("beta", f"must exceed 1, got {self.beta}")
        if self.n0 < 1:
            raise ConfigError("n0", f"must be >= 1, got {self.n0}")
        if self.S < 1:
            raise ConfigError("S", f"must be >= 1, got {self.S}")
        if self.m < 1:
            raise ConfigError("m", f"must be >= 1, got {self.m}")
        if self.batch < 1:
            raise ConfigError("batch", f"must be >= 1, got {self.batch}")
        if self.consensus not in CONSENSUS_POLICIES:
            raise ConfigError("consensus", f"must be one of {CONSENSUS_POLICIES}")
        if self.dspg_step not in STEP_RULES:
            raise ConfigError("dspg_step", f"must be one of {STEP_RULES}")
        if self.dspg_iters < 0:
            raise ConfigError("dspg_iters", f"must be >= 0, got {self.dspg_iters}")

    def inner_counts(self) -> list[int]:
        """``K_s = ceil(beta**s * n0)`` for ``s = 1..S``."""
        return [math.ceil(self.beta**s * self.n0) for s in range(1, self.S + 1)]

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def node_rngs(seed: int, m: int) -> list[np.random.Generator]:
    """One independent sampling stream per node."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(m)]


def _draw(rngs, parts, batch: int) -> np.ndarray:
    return np.stack([p[rng.integers(p.size, size=batch)] for rng, p in zip(rngs, parts)])


def _node_sample_grads(obj: CompositeObjective, xs: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Row i: mean gradient over ``samples[i]`` evaluated at ``xs[i]``."""
    k, batch = samples.shape
    rows = samples.reshape(-1)
    X = obj.data.features[rows]
    pts = np.repeat(xs, batch, axis=0) if batch > 1 else xs
    r = _residual(obj, X, obj.data.labels[rows], pts)
    g = r[:, None] * X
    return g if batch == 1 else g.reshape(k, batch, -1).mean(axis=1)


def _bind(obj: CompositeObjective, cfg: RunConfig) -> CompositeObjective:
    if obj.reg.kind == "l1" and obj.reg.lam != cfg.lam:
        return obj.with_lambda(cfg.lam)
    return obj


class _Pool:
    """Runs a row-block function over node chunks; output rows never depend on chunking."""

    def __init__(self, m: int, workers: int) -> None:
        self.chunks = [c for c in np.array_split(np.arange(m), max(1, min(workers, m))) if c.size]
        self.ex = ThreadPoolExecutor(len(self.chunks)) if len(self.chunks) > 1 else None

    def map_rows(self, fn: Callable[[slice], np.ndarray], out: np.ndarray) -> np.ndarray:
        spans = [slice(int(c[0]), int(c[-1]) + 1) for c in self.chunks]
        if self.ex is None:
            out[:] = fn(spans[0])
        else:
            for sl, res in zip(spans, self.ex.map(fn, spans)):
                out[sl] = res
        return out

    def close(self) -> None:
        if self.ex is not None:
            self.ex.shutdown()


# -- error traces -----------------------------------------------------------


@dataclass
class ErrorTrace:
    """Per-(k, s) gradient errors ``e`` and proximal errors ``eps``.

    Lists are indexed by outer round; arrays inside by inner step. ``samples``
    and ``xbar`` (the realized node-average points) are needed to replay a
    decentralized run exactly. ``qbar``, ``q_norm_sum`` (sum of node
    ``||q_i||``) and ``x_dev`` (max node distance to the average) are
    diagnostics.
    """

    e: list[np.ndarray] = field(default_factory=list)
    eps: list[np.ndarray] = field(default_factory=list)
    samples: list[np.ndarray] | None = field(default_factory=list)
    xbar: list[np.ndarray] | None = field(default_factory=list)
    qbar: list[np.ndarray] = field(default_factory=list)
    q_norm_sum: list[np.ndarray] = field(default_factory=list)
    x_dev: list[np.ndarray] = field(default_factory=list)
    max_norm: float = 0.0

    @property
    def K(self) -> list[int]:
        return [len(a) for a in self.e]

    def sums_e(self) -> np.ndarray:
        return np.array([np.linalg.norm(a, axis=1).sum() for a in self.e])

    def sums_sqrt_eps(self) -> np.ndarray:
        return np.array([np.sqrt(a).sum() for a in self.eps])

    def zeroed(self) -> "ErrorTrace":
        """Same sampling and recorded points, with both error sequences set to zero."""
        return replace(
            self,
            e=[np.zeros_like(a) for a in self.e],
            eps=[np.zeros_like(a) for a in self.eps],
        )

    @classmethod
    def free(cls, K: list[int], d: int, eps: float | list[np.ndarray] = 0.0) -> "ErrorTrace":
        """Zero gradient errors and a user proximal-error schedule, with no replay data."""
        if not isinstance(eps, list):
            eps = [np.full(k, float(eps)) for k in K]
        return cls(
            e=[np.zeros((k, d)) for k in K],
            eps=eps,
            samples=None,
            xbar=None,
        )


@dataclass
class RunHistory:
    """Full per-node iterate history of a DPSVRG run (memory heavy; small runs only)."""

    xt_prev: list[np.ndarray] = field(default_factory=list)
    snap_full: list[np.ndarray] = field(default_factory=list)
    x_prev: list[np.ndarray] = field(default_factory=list)
    samples: list[np.ndarray] = field(default_factory=list)
    q: list[np.ndarray] = field(default_factory=list)
    qhat: list[np.ndarray] = field(default_factory=list)
    x_new: list[np.ndarray] = field(default_factory=list)


class _RoundErrors:
    """Round-constant pieces of the gradient error for snapshot ``xt`` (m x d)."""

    def __init__(self, obj: CompositeObjective, xt: np.ndarray, snap_full: np.ndarray) -> None:
        m = xt.shape[0]
        self.obj = obj
        self.xt = xt
        self.xt_bar = xt.mean(axis=0)
        self.xt_bar_rows = np.tile(self.xt_bar, (m, 1))
        at_bar = node_full_grads(obj, self.xt_bar_rows)
        # zero when nodes hold equally many samples
        imbalance = at_bar.mean(axis=0) - full_grad(obj, self.xt_bar)
        self.const = (snap_full - at_bar).mean(axis=0) + imbalance

    def step(
        self,
        x_prev: np.ndarray,
        samples: np.ndarray,
        q: np.ndarray,
        x_new: np.ndarray,
        alpha: float,
    ) -> tuple[np.ndarray, float, np.ndarray, np.ndarray]:
        obj = self.obj
        m = x_prev.shape[0]
        xbar_prev = np.tile(x_prev.mean(axis=0), (m, 1))
        g = (
            _node_sample_grads(obj, x_prev, samples)
            - _node_sample_grads(obj, xbar_prev, samples)
            + _node_sample_grads(obj, self.xt_bar_rows, samples)
            - _node_sample_grads(obj, self.xt, samples)
        )
        e = g.mean(axis=0) + self.const
        qbar = q.mean(axis=0)
        xbar = x_new.mean(axis=0)
        eps = replay_epsilon(obj.reg, xbar, qbar, alpha)
        return e, eps, qbar, xbar


def construct_errors(obj: CompositeObjective, cfg: RunConfig, history: RunHistory) -> ErrorTrace:
    """Gradient and proximal errors mapping a recorded DPSVRG run onto Inexact Prox-SVRG."""
    if not history.x_prev:
        raise ValueError("run history is empty; rerun with keep_history=True")
    obj = _bind(obj, cfg)
    trace = ErrorTrace()
    for s, (xt, sf) in enumerate(zip(history.xt_prev, history.snap_full)):
        rnd = _RoundErrors(obj, xt, sf)
        K = len(history.x_prev[s])
        e = np.empty((K, obj.d))
        eps = np.empty(K)
        qb = np.empty((K, obj.d))
        xb = np.empty((K, obj.d))
        for k in range(K):
            e[k], eps[k], qb[k], xb[k] = rnd.step(
                history.x_prev[s][k], history.samples[s][k], history.q[s][k],
                history.x_new[s][k], cfg.alpha,
            )
        trace.e.append(e)
        trace.eps.append(eps)
        trace.samples.append(history.samples[s].copy())
        trace.xbar.append(xb)
        trace.qbar.append(qb)
        qn = np.linalg.norm(history.q[s], axis=2).sum(axis=1)
        trace.q_norm_sum.append(qn)
        trace.x_dev.append(
            np.linalg.norm(history.x_new[s] - xb[:, None, :], axis=2).max(axis=1)
        )
    return trace


# -- DPSVRG -----------------------------------------------------------------


@dataclass
class DPSVRGResult:
    x_tilde: np.ndarray
    x: np.ndarray
    snapshot_losses: list[float]
    snapshot_gaps: list[float]
    comm_rounds: int
    epoch_passes: float
    trace: ErrorTrace | None = None
    history: RunHistory | None = None


def _emit(sink, f_star, obj, algo, s, k, passes, comm, pts, sum_e=0.0, sum_se=0.0) -> float:
    mean = pts.mean(axis=0)
    loss = objective_value(obj, mean)
    if sink is not None:
        gap = loss - f_star if f_star is not None else math.nan
        res = float(np.linalg.norm(pts - mean, axis=1).max())
        sink.emit(MetricsRecord(algo, s, k, passes, comm, gap, loss, res, sum_e, sum_se))
    return loss


def run_dpsvrg(
    obj: CompositeObjective,
    schedule: MixingSchedule | None,
    cfg: RunConfig,
    sink: MetricsSink | None = None,
    *,
    f_star: float | None = None,
    workers: int = 1,
    keep_history: bool = False,
    record_every: int = 1,
    x_init: np.ndarray | None = None,
    algo: str = "dpsvrg",
) -> DPSVRGResult:
    """Decentralized proximal SVRG with multi-consensus.

    Each node keeps a snapshot ``x_tilde_i`` and its local full gradient;
    every inner step takes one variance-reduced stochastic gradient step,
    mixes the results over ``k`` (or 1) schedule matrices, and applies the
    prox. The snapshot becomes the mean of the round's inner iterates and
    the last inner iterate warm-starts the next round.

    ``schedule`` may be ``None`` only when ``cfg.m == 1``. Metrics are
    computed at the node average; an extra ``<algo>-snapshot`` record per
    outer round reports the snapshot average.
    """
    cfg.validate()
    obj = _bind(obj, cfg)
    m = cfg.m
    if obj.data.m != m:
        raise ConfigError("m", f"dataset is split across {obj.data.m} nodes, config says {m}")
    if schedule is None:
        if m != 1:
            raise ConfigError("m", "a schedule is required when m > 1")
    elif schedule.m != m:
        raise ConfigError("m", f"schedule has {schedule.m} nodes, config says {m}")

    d, alpha, h, B = obj.d, cfg.alpha, obj.reg, cfg.batch
    x0 = np.zeros(d) if x_init is None else np.asarray(x_init, dtype=float)
    x = np.tile(x0, (m, 1))
    xt = x.copy()
    rngs = node_rngs(cfg.seed, m)
    parts = obj.data.parts
    n = obj.data.n
    pool = _Pool(m, workers)

    t = 0
    comm = 0
    passes = 0.0
    step_passes = 2.0 * m * B / n
    trace = ErrorTrace() if cfg.record_errors else None
    hist = RunHistory() if keep_history else None
    snap_losses: list[float] = []
    snap_gaps: list[float] = []
    max_norm = float(np.linalg.norm(x0))

    try:
        for s, K in enumerate(cfg.inner_counts(), start=1):
            snap_full = node_full_grads(obj, xt)
            passes += 1.0
            if trace is not None:
                rnd = _RoundErrors(obj, xt, snap_full)
                te, teps = np.empty((K, d)), np.empty(K)
                tsm, txb, tqb = np.empty((K, m, B), dtype=np.intp), np.empty((K, d)), np.empty((K, d))
                tqn, tdev = np.empty(K), np.empty(K)
                run_e = run_se = 0.0
            if hist is not None:
                hist.xt_prev.append(xt.copy())
                hist.snap_full.append(snap_full.copy())
                hx, hs = np.empty((K, m, d)), np.empty((K, m, B), dtype=np.intp)
                hq, hqh, hxn = np.empty((K, m, d)), np.empty((K, m, d)), np.empty((K, m, d))
            inner_sum = np.zeros((m, d))
            q = np.empty((m, d))

            for k in range(1, K + 1):
                samples = _draw(rngs, parts, B)

                def local(sl: slice, x=x, xt=xt, snap_full=snap_full, samples=samples):
                    v = (
                        _node_sample_grads(obj, x[sl], samples[sl])
                        - _node_sample_grads(obj, xt[sl], samples[sl])
                        + snap_full[sl]
                    )
                    return x[sl] - alpha * v

                pool.map_rows(local, q)
                if schedule is not None:
                    rounds = k if cfg.consensus == "multi" else 1
                    qhat = schedule.product(t, rounds) @ q
                    t += rounds
                    comm += rounds
                else:
                    qhat = q.copy()
                x_new = h.prox(qhat, alpha)
                passes += step_passes

                if trace is not None:
                    i = k - 1
                    te[i], teps[i], tqb[i], txb[i] = rnd.step(x, samples, q, x_new, alpha)
                    tsm[i] = samples
                    tqn[i] = np.linalg.norm(q, axis=1).sum()
                    tdev[i] = np.linalg.norm(x_new - txb[i], axis=1).max()
                    max_norm = max(max_norm, float(np.linalg.norm(x_new, axis=1).max()),
                                   float(np.linalg.norm(txb[i])))
                    run_e += float(np.linalg.norm(te[i]))
                    run_se += math.sqrt(teps[i])
                if hist is not None:
                    i = k - 1
                    hx[i], hs[i], hq[i], hqh[i], hxn[i] = x, samples, q, qhat, x_new

                x = x_new
                inner_sum += x
                if sink is not None and (k % record_every == 0 or k == K):
                    _emit(sink, f_star, obj, algo, s, k, passes, comm, x,
                          run_e if trace is not None else 0.0,
                          run_se if trace is not None else 0.0)

            xt = inner_sum / K
            loss = _emit(sink, f_star, obj, f"{algo}-snapshot", s, K, passes, comm, xt,
                         run_e if trace is not None else 0.0,
                         run_se if trace is not None else 0.0)
            snap_losses.append(loss)
            snap_gaps.append(loss - f_star if f_star is not None else math.nan)
            if trace is not None:
                trace.e.append(te)
                trace.eps.append(teps)
                trace.samples.append(tsm)
                trace.xbar.append(txb)
                trace.qbar.append(tqb)
                trace.q_norm_sum.append(tqn)
                trace.x_dev.append(tdev)
                max_norm = max(max_norm, float(np.linalg.norm(xt, axis=1).max()))
            if hist is not None:
                hist.x_prev.append(hx)
                hist.samples.append(hs)
                hist.q.append(hq)
                hist.qhat.append(hqh)
                hist.x_new.append(hxn)
    finally:
        pool.close()

    if trace is not None:
        trace.max_norm = max_norm
    return DPSVRGResult(xt, x, snap_losses, snap_gaps, comm, passes, trace, hist)


# -- Inexact Prox-SVRG --------------------------------------------------------


@dataclass
class InexactResult:
    x_tilde: np.ndarray
    xs: list[np.ndarray]
    qs: list[np.ndarray]
    accepted: int
    rejected: int


def _pooled_sample_grad(obj: CompositeObjective, x: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Gradient of ``(1/m) sum_i f_i^{l_i}`` at a single point ``x``."""
    m = samples.shape[0]
    return _node_sample_grads(obj, np.tile(x, (m, 1)), samples).mean(axis=0)


def _candidate_slack(h: Regularizer, cand: np.ndarray, q: np.ndarray, alpha: float) -> float:
    # rounding allowance on a difference of two prox-objective values
    return 1e-12 * (
        1.0 + prox_objective(h, cand, q, alpha)
        + float(np.linalg.norm(q) * np.linalg.norm(cand - q)) / alpha
    )


def run_inexact_prox_svrg(
    obj: CompositeObjective,
    cfg: RunConfig,
    errors: ErrorTrace | None = None,
    sink: MetricsSink | None = None,
    *,
    f_star: float | None = None,
    x_init: np.ndarray | None = None,
    algo: str = "inexact",
) -> InexactResult:
    """Centralized Prox-SVRG with injected gradient errors and inexact prox.

    Each step uses the pooled estimator over one sample per node (the same
    indices as the decentralized run when ``errors.samples`` is given),
    shifts it by ``e``, and takes an ``eps``-inexact prox. When ``errors``
    carries recorded points, the recorded point is returned whenever it
    satisfies the inexactness inequality for the current input; otherwise a
    fresh ``eps``-inexact point is drawn. ``errors=None`` runs exact
    Prox-SVRG.
    """
    cfg.validate()
    obj = _bind(obj, cfg)
    Ks = cfg.inner_counts()
    d, alpha, h, B = obj.d, cfg.alpha, obj.reg, cfg.batch
    if errors is None:
        errors = ErrorTrace.free(Ks, d)
    if errors.K != Ks:
        raise ValueError(f"error trace grid {errors.K} does not match K_s {Ks}")
    if errors.samples is None and obj.data.m != cfg.m:
        raise ConfigError("m", f"dataset is split across {obj.data.m} nodes, config says {cfg.m}")

    x = np.zeros(d) if x_init is None else np.asarray(x_init, dtype=float).copy()
    xt = x.copy()
    rngs = node_rngs(cfg.seed, cfg.m)
    prox_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.m + 1)[-1])
    n = obj.data.n
    passes = 0.0
    xs_out, qs_out = [], []
    accepted = rejected = 0

    for s, K in enumerate(Ks, start=1):
        full = full_grad(obj, xt)
        passes += 1.0
        inner_sum = np.zeros(d)
        xs_r, qs_r = np.empty((K, d)), np.empty((K, d))
        for k in range(K):
            if errors.samples is not None:
                samples = errors.samples[s - 1][k]
            else:
                samples = _draw(rngs, obj.data.parts, B)
            v = _pooled_sample_grad(obj, x, samples) - _pooled_sample_grad(obj, xt, samples) + full
            q = x - alpha * (v + errors.e[s - 1][k])
            eps = float(errors.eps[s - 1][k])
            cand = errors.xbar[s - 1][k] if errors.xbar is not None else None
            if cand is not None and epsilon_of(h, cand, q, alpha) <= eps + _candidate_slack(h, cand, q, alpha):
                x = cand.copy()
                accepted += 1
            else:
                if cand is not None:
                    rejected += 1
                x = prox_inexact(h, q, alpha, eps, prox_rng).point
            passes += 2.0 * samples.size / n
            xs_r[k], qs_r[k] = x, q
            inner_sum += x
            if sink is not None:
                loss = objective_value(obj, x)
                gap = loss - f_star if f_star is not None else math.nan
                sink.emit(MetricsRecord(algo, s, k + 1, passes, 0, gap, loss, 0.0))
        xt = inner_sum / K
        xs_out.append(xs_r)
        qs_out.append(qs_r)
    return InexactResult(xt, xs_out, qs_out, accepted, rejected)


# -- DSPG baseline ------------------------------------------------------------


@dataclass
class DSPGResult:
    x: np.ndarray
    iterations: int
    comm_rounds: int
    epoch_passes: float


def dspg_matched_iterations(cfg: RunConfig, n: int) -> int:
    """DSPG iteration count spending as many sample gradients as a DPSVRG run."""
    total_inner = sum(cfg.inner_counts())
    passes = cfg.S + 2.0 * cfg.m * cfg.batch * total_inner / n
    return math.ceil(passes * n / (cfg.m * cfg.batch))


def run_dspg(
    obj: CompositeObjective,
    schedule: MixingSchedule | None,
    cfg: RunConfig,
    sink: MetricsSink | None = None,
    *,
    f_star: float | None = None,
    iterations: int | None = None,
    step: str | None = None,
    workers: int = 1,
    record_every: int = 1,
    x_init: np.ndarray | None = None,
    algo: str = "dspg",
) -> DSPGResult:
    """Decentralized stochastic proximal gradient: SGD step, one gossip round, prox.

    The step is ``alpha`` (``constant``) or ``alpha / sqrt(t)`` (``decay``).
    Without an explicit ``iterations`` (or ``cfg.dspg_iters``), the run is
    sized to match the sample-gradient budget of DPSVRG under ``cfg``.
    """
    cfg.validate()
    obj = _bind(obj, cfg)
    m = cfg.m
    if obj.data.m != m:
        raise ConfigError("m", f"dataset is split across {obj.data.m} nodes, config says {m}")
    if schedule is None and m != 1:
        raise ConfigError("m", "a schedule is required when m > 1")
    if schedule is not None and schedule.m != m:
        raise ConfigError("m", f"schedule has {schedule.m} nodes, config says {m}")
    step = step or cfg.dspg_step
    if step not in STEP_RULES:
        raise ConfigError("dspg_step", f"must be one of {STEP_RULES}")
    T = iterations or cfg.dspg_iters or dspg_matched_iterations(cfg, obj.data.n)

    d, h, B = obj.d, obj.reg, cfg.batch
    x0 = np.zeros(d) if x_init is None else np.asarray(x_init, dtype=float)
    x = np.tile(x0, (m, 1))
    rngs = node_rngs(cfg.seed, m)
    parts = obj.data.parts
    pool = _Pool(m, workers)
    step_passes = m * B / obj.data.n
    passes = 0.0
    comm = 0
    q = np.empty((m, d))
    try:
        for it in range(1, T + 1):
            a = cfg.alpha if step == "constant" else cfg.alpha / math.sqrt(it)
            samples = _draw(rngs, parts, B)

            def local(sl: slice, x=x, samples=samples, a=a):
                return x[sl] - a * _node_sample_grads(obj, x[sl], samples[sl])

            pool.map_rows(local, q)
            if schedule is not None:
                q = schedule.matrix(it - 1) @ q
                comm += 1
            x = h.prox(q, a)
            q = np.empty((m, d))
            passes += step_passes
            if sink is not None and (it % record_every == 0 or it == T):
                _emit(sink, f_star, obj, algo, 0, it, passes, comm, x)
    finally:
        pool.close()
    return DSPGResult(x, T, comm, passes)


# -- reference solver -----------------------------------------------------------


def gradient_mapping_norm(obj: CompositeObjective, x: np.ndarray, step: float) -> float:
    x = np.asarray(x, dtype=float)
    nxt = obj.reg.prox(x - step * full_grad(obj, x), step)
    return float(np.linalg.norm(x - nxt)) / step


def run_reference(
    obj: CompositeObjective,
    tol: float = 1e-10,
    *,
    max_iter: int = 200_000,
    x_init: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Full-gradient proximal descent with backtracking, run to gradient-mapping norm ``tol``.

    Returns ``(x_star, F(x_star))``.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    X = obj.data.features
    n = obj.data.n
    curv = float(np.linalg.norm(X, 2) ** 2) / n if n else 0.0
    L_f = curv / 4.0 if obj.loss == "logistic" else 2.0 * curv
    step = 1.0 / L_f if L_f > 0 else 1.0
    h = obj.reg
    x = np.zeros(obj.d) if x_init is None else np.asarray(x_init, dtype=float).copy()
    fx = smooth_value(obj, x)
    g = full_grad(obj, x)
    for _ in range(max_iter):
        while True:
            nxt = h.prox(x - step * g, step)
            diff = nxt - x
            f_nxt = smooth_value(obj, nxt)
            model = fx + float(g @ diff) + float(diff @ diff) / (2.0 * step)
            if f_nxt <= model + 1e-14 * (1.0 + abs(fx)):
                break
            step *= 0.5
        if float(np.linalg.norm(diff)) / step <= tol:
            x_star = x if smooth_value(obj, x) + h.value(x) <= f_nxt + h.value(nxt) else nxt
            return x_star, objective_value(obj, x_star)
        x, fx = nxt, f_nxt
        g = full_grad(obj, x)
        step *= 1.1
    raise ReferenceSolverError(f"gradient mapping above {tol} after {max_iter} iterations")


# -- analytic error bounds ---------------------------------------------------------


@dataclass(frozen=True)
class ErrorBounds:
    """Analytic per-round bounds on the summed errors of a decentralized run.

    ``C0 = sum_i ||q_i^(1,1)||``, ``C1 = alpha m (G_f + G_h)`` and
    ``C2(s) = alpha m beta^s n0 (G_f + G_h)`` bound the node sum of
    ``||q_i^(k,s)||`` by ``C0 + C1 k + C2(s) s``. ``D0`` and ``D1`` are
    closed-form upper bounds of ``sum_k gamma^(k/2)`` and
    ``sum_k sqrt(k gamma^k)``.
    """

    L: float
    alpha: float
    m: int
    beta: float
    n0: int
    G_f: float
    G_h: float
    Gamma: float
    gamma: float
    C0: float

    @property
    def C1(self) -> float:
        return self.alpha * self.m * (self.G_f + self.G_h)

    def C2(self, s: int) -> float:
        return self.alpha * self.m * self.beta**s * self.n0 * (self.G_f + self.G_h)

    @property
    def D0(self) -> float:
        r = math.sqrt(self.gamma)
        return r / (1.0 - r) if r < 1 else math.inf

    @property
    def D1(self) -> float:
        # Cauchy-Schwarz: sum sqrt(k) r^k <= sqrt(sum k r^k * sum r^k) = r / (1 - r)^1.5
        r = math.sqrt(self.gamma)
        return r / (1.0 - r) ** 1.5 if r < 1 else math.inf

    def q_bound(self, k: int, s: int) -> float:
        return self.C0 + self.C1 * k + self.C2(s) * s

    def sum_e(self, s: int) -> float:
        D0s, D1s = self.D0**2, self.D1**2
        C1, C2 = self.C1, self.C2(s)
        return 2 * self.L * self.Gamma * (D0s * (self.C0 - C1 + C2 * s) + C1 * D1s) + (
            4 * self.L * self.Gamma * (D0s * (self.C0 + C2 * (s - 1)) + C1 * D1s)
        )

    def sum_sqrt_eps(self, s: int) -> float:
        C1, C2 = self.C1, self.C2(s)
        first = self.Gamma / (2 * self.alpha) * (self.D0**2 * (self.C0 + C2 * s) + C1 * self.D1**2)
        second = math.sqrt(2 * self.G_h * self.Gamma) * (
            self.D0 * math.sqrt(self.C0 + C2 * s) + math.sqrt(C1) * self.D1
        )
        return first + second

    def finite_sum_e(self, s: int, K: int) -> float:
        """The same bound summed over the ``K`` actual inner steps instead of to infinity."""
        k = np.arange(1, K + 1, dtype=float)
        gk = self.gamma**k
        C1, C2 = self.C1, self.C2(s)
        a = 2 * self.L * self.Gamma * np.sum(gk * (self.C0 + C1 * (k - 1) + C2 * s))
        b = 4 * self.L * self.Gamma * np.sum(gk * (self.C0 + C1 * k + C2 * (s - 1)))
        return float(a + b)

    def finite_sum_sqrt_eps(self, s: int, K: int) -> float:
        k = np.arange(1, K + 1, dtype=float)
        gk = self.gamma**k
        Q = self.C0 + self.C1 * k + self.C2(s) * s
        return float(np.sum(self.Gamma / (2 * self.alpha) * gk * Q + np.sqrt(2 * self.G_h * self.Gamma * gk * Q)))
