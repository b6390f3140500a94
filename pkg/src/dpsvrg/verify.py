"""Self-check battery: every analytic inequality the solvers rely on, evaluated numerically."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .algorithms import (
    ErrorBounds,
    RunConfig,
    run_dpsvrg,
    run_dspg,
    run_inexact_prox_svrg,
    run_reference,
)
from .data import synth_dataset
from .metrics import ListSink, fit_contraction
from .objective import (
    CompositeObjective,
    bound_constants,
    full_grad,
    objective_value,
    sample_grads,
    smoothness_L,
)
from .proximal import Regularizer, epsilon_of, prox_inexact, prox_l1
from .topology import consensus_bound, is_doubly_stochastic, make_schedule, phi

__all__ = ["CheckResult", "VerifyReport", "verify_suite", "LEVELS"]

LEVELS = ("fast", "full")
ProxFn = Callable[[np.ndarray, float, float], np.ndarray]


@dataclass
class CheckResult:
    """Outcome of one inequality family; ``lhs``/``rhs`` are the tightest observed instance."""

    name: str
    passed: bool
    trials: int
    lhs: float
    rhs: float
    relation: str = "<="
    detail: str = ""
    seconds: float = 0.0


@dataclass
class VerifyReport:
    level: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"level": self.level, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Worst:
    """Tracks the instance with the smallest margin ``rhs - lhs``."""

    def __init__(self) -> None:
        self.margin = math.inf
        self.lhs = self.rhs = math.nan
        self.where = ""
        self.trials = 0

    def add(self, lhs: float, rhs: float, where: str = "") -> None:
        self.trials += 1
        m = rhs - lhs
        if m < self.margin or math.isnan(m):
            self.margin, self.lhs, self.rhs, self.where = m, lhs, rhs, where

    def result(self, name: str, what: str, t0: float) -> CheckResult:
        ok = self.trials > 0 and self.margin >= 0
        det = f"{what}: {self.lhs:.6g} {'<=' if ok else '>'} {self.rhs:.6g}"
        if self.where:
            det += f" at {self.where}"
        return CheckResult(name, ok, self.trials, self.lhs, self.rhs, "<=", det, time.perf_counter() - t0)


def _l1_box(y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    return Regularizer("l1", lam).subgradient_box(y)


# -- topology -------------------------------------------------------------------


def _check_consensus(rng: np.random.Generator, n_sched: int, ms, bs, max_span: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    w = _Worst()
    ds = _Worst()
    for i in range(n_sched):
        m = int(rng.choice(ms))
        b = int(rng.choice(bs))
        fam = "ring-split" if i % 2 == 0 else "random-matching"
        sch = make_schedule(m, b, family=fam, seed=int(rng.integers(1 << 31)))
        start = int(rng.integers(0, 3 * sch.period + 1))
        P = np.eye(m)
        for span in range(max_span + 1):
            P = sch.matrix(start + span) @ P
            dev = float(np.abs(P - 1.0 / m).max())
            w.add(dev, consensus_bound(sch, span), f"{fam} m={m} b={b} span={span}")
        ds.add(0.0 if is_doubly_stochastic(P) else 1.0, 0.0, f"{fam} m={m} b={b}")
    return [
        w.result("consensus_product_bound", "max_ij |phi_ij - 1/m| vs Gamma*gamma^span", t0),
        ds.result("product_doubly_stochastic", "row/column sum violation flag", t0),
    ]


# -- proximal ----------------------------------------------------------------------


def _check_prox(rng: np.random.Generator, trials: int, prox: ProxFn) -> list[CheckResult]:
    out = []
    slack = 1e-10

    t0 = time.perf_counter()
    w = _Worst()
    for t in range(trials):
        d = int(rng.integers(1, 12))
        z = rng.standard_normal(d) * rng.choice([0.01, 1.0])
        alpha, lam = float(rng.uniform(0.001, 1.0)), float(rng.uniform(0.0, 1.0))
        y = prox(z, alpha, lam)
        g = (z - y) / alpha
        lo, hi = _l1_box(y, lam)
        viol = float(np.maximum(lo - g, g - hi).max())
        w.add(viol, slack, f"trial {t}")
    out.append(w.result("prox_optimality_membership", "distance of (z - y)/alpha outside dh(y)", t0))

    t0 = time.perf_counter()
    w = _Worst()
    for t in range(trials):
        d = int(rng.integers(1, 12))
        z, x = rng.standard_normal(d), rng.standard_normal(d) * 2
        alpha, lam = float(rng.uniform(0.001, 1.0)), float(rng.uniform(0.0, 1.0))
        h = Regularizer("l1", lam)
        y = prox(z, alpha, lam)
        w.add(float((z - y) @ (x - y)) / alpha, h.value(x) - h.value(y) + slack, f"trial {t}")
    out.append(w.result("prox_variational_inequality", "<z - y, x - y>/alpha vs h(x) - h(y)", t0))

    t0 = time.perf_counter()
    w = _Worst()
    for t in range(trials):
        d = int(rng.integers(1, 12))
        z1, z2 = rng.standard_normal(d), rng.standard_normal(d)
        alpha, lam = float(rng.uniform(0.001, 1.0)), float(rng.uniform(0.0, 1.0))
        lhs = float(np.linalg.norm(prox(z1, alpha, lam) - prox(z2, alpha, lam)))
        w.add(lhs, float(np.linalg.norm(z1 - z2)) + slack, f"trial {t}")
    out.append(w.result("prox_nonexpansive", "||prox(z1) - prox(z2)|| vs ||z1 - z2||", t0))

    t0 = time.perf_counter()
    w = _Worst()
    for t in range(trials):
        d = int(rng.integers(1, 12))
        z1, z2 = rng.standard_normal(d), rng.standard_normal(d)
        alpha, lam = float(rng.uniform(0.001, 1.0)), float(rng.uniform(0.0, 1.0))
        eps = float(10 ** rng.uniform(-8, 0))
        h = Regularizer("l1", lam)
        a = prox_inexact(h, z1, alpha, eps, rng).point
        b = prox_inexact(h, z2, alpha, eps, rng).point
        rhs = float(np.linalg.norm(z1 - z2)) + 3 * math.sqrt(2 * alpha * eps) + slack
        w.add(float(np.linalg.norm(a - b)), rhs, f"trial {t}")
    out.append(w.result("inexact_prox_nonexpansive", "||x1 - x2|| vs ||z1 - z2|| + 3 sqrt(2 alpha eps)", t0))

    t0 = time.perf_counter()
    w = _Worst()
    for t in range(trials):
        d = int(rng.integers(1, 12))
        z = rng.standard_normal(d)
        alpha, lam = float(rng.uniform(0.001, 1.0)), float(rng.uniform(0.0, 1.0))
        eps = float(10 ** rng.uniform(-8, 0))
        h = Regularizer("l1", lam)
        res = prox_inexact(h, z, alpha, eps, rng)
        w.add(epsilon_of(h, res.point, z, alpha), eps + slack, f"trial {t}")
    out.append(w.result("inexact_prox_gap", "prox-objective gap vs eps", t0))
    return out


# -- objective -------------------------------------------------------------------


def _check_estimator(obj: CompositeObjective, rng: np.random.Generator) -> CheckResult:
    t0 = time.perf_counter()
    w = _Worst()
    for node, idx in enumerate(obj.data.parts):
        x, xt = rng.standard_normal(obj.d), rng.standard_normal(obj.d)
        snap = full_grad(obj, xt, node)
        v = sample_grads(obj, x, idx) - sample_grads(obj, xt, idx) + snap
        err = float(np.abs(v.mean(axis=0) - full_grad(obj, x, node)).max())
        w.add(err, 1e-12, f"node {node}")
    return w.result("estimator_unbiased", "|mean_l v - grad f_i(x)|_inf", t0)


def _check_variance(seed: int) -> CheckResult:
    t0 = time.perf_counter()
    data, _ = synth_dataset(64, 5, 2, 0.1, seed, m=1)
    obj = CompositeObjective("logistic", data, Regularizer("l1", 0.01))
    _, f_star = run_reference(obj)
    L = smoothness_L(obj)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=4, m=1, seed=seed)
    hist = run_dpsvrg(obj, None, cfg, keep_history=True).history
    w = _Worst()
    all_idx = np.arange(data.n)
    for s, (xt_all, xs) in enumerate(zip(hist.xt_prev, hist.x_prev), start=1):
        xt = xt_all[0]
        gt = sample_grads(obj, xt, all_idx)
        ft = full_grad(obj, xt)
        Ft = objective_value(obj, xt) - f_star
        for k, x_all in enumerate(xs, start=1):
            x = x_all[0]
            v = sample_grads(obj, x, all_idx) - gt + ft
            var = float(np.mean(np.sum((v - full_grad(obj, x)) ** 2, axis=1)))
            rhs = 4 * L * (objective_value(obj, x) - f_star) + 4 * L * Ft + 1e-8
            w.add(var, rhs, f"s={s} k={k}")
    return w.result("estimator_variance_bound", "E||v - grad f(x)||^2 vs 4L(F(x)-F*) + 4L(F(xt)-F*)", t0)


# -- algorithms ------------------------------------------------------------------


def _equivalence_case(seed: int, n: int, d: int, S: int):
    data, _ = synth_dataset(n, d, min(3, d), 0.1, seed, m=4)
    obj = CompositeObjective("logistic", data, Regularizer("l1", 0.01))
    sch = make_schedule(4, b=2, family="ring-split", seed=seed)
    cfg = RunConfig(alpha=0.01, lam=0.01, S=S, m=4, seed=seed, record_errors=True)
    res = run_dpsvrg(obj, sch, cfg)
    return obj, sch, cfg, res


def _check_equivalence(obj, cfg, trace, zero_replay: bool) -> CheckResult:
    t0 = time.perf_counter()
    errs = trace.zeroed() if zero_replay else trace
    rep = run_inexact_prox_svrg(obj, cfg, errs)
    w = _Worst()
    for s in range(len(trace.K)):
        for k in range(trace.K[s]):
            xb, qb = trace.xbar[s][k], trace.qbar[s][k]
            dx = float(np.linalg.norm(rep.xs[s][k] - xb)) / (1 + float(np.linalg.norm(xb)))
            dq = float(np.linalg.norm(rep.qs[s][k] - qb)) / (1 + float(np.linalg.norm(qb)))
            w.add(max(dx, dq), 1e-8, f"s={s + 1} k={k + 1}")
    name = "replay_equivalence" + ("_zeroed_errors" if zero_replay else "")
    return w.result(name, "relative deviation of replay from node average", t0)


def _check_error_sums(obj, sch, cfg, trace) -> list[CheckResult]:
    t0 = time.perf_counter()
    L = smoothness_L(obj)
    G_f, G_h, _ = bound_constants(obj, max(trace.max_norm, 1e-12))
    eb = ErrorBounds(L, cfg.alpha, cfg.m, cfg.beta, cfg.n0, G_f, G_h, sch.Gamma, sch.gamma,
                     float(trace.q_norm_sum[0][0]))
    we, wp, wq, wd = _Worst(), _Worst(), _Worst(), _Worst()
    for s, (se, sp, K) in enumerate(zip(trace.sums_e(), trace.sums_sqrt_eps(), trace.K), start=1):
        we.add(float(se), eb.sum_e(s), f"s={s}")
        wp.add(float(sp), eb.sum_sqrt_eps(s), f"s={s}")
        for k in range(1, K + 1):
            qn = float(trace.q_norm_sum[s - 1][k - 1])
            wq.add(qn, eb.q_bound(k, s), f"s={s} k={k}")
            rhs = 2 * consensus_bound(sch, k) * qn
            wd.add(float(trace.x_dev[s - 1][k - 1]), rhs, f"s={s} k={k}")
    return [
        we.result("error_sum_e", "sum_k ||e|| vs analytic bound", t0),
        wp.result("error_sum_sqrt_eps", "sum_k sqrt(eps) vs analytic bound", t0),
        wq.result("q_norm_growth", "sum_i ||q_i|| vs C0 + C1 k + C2 s", t0),
        wd.result("consensus_error_decay", "max_i ||x_i - xbar|| vs 2 Gamma gamma^k sum_j ||q_j||", t0),
    ]


def _check_desk_scale(seed: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    data, _ = synth_dataset(1024, 20, 5, 0.1, seed, m=8)
    obj = CompositeObjective("logistic", data, Regularizer("l1", 0.01))
    _, f_star = run_reference(obj)
    sch = make_schedule(8, 1, family="static", seed=seed)
    cfg = RunConfig(alpha=0.01, lam=0.01, S=12, m=8, seed=seed)
    res = run_dpsvrg(obj, sch, cfg, f_star=f_star)
    rho_hat = fit_contraction(res.snapshot_gaps, start=2)
    rate = _Worst()
    rate.add(rho_hat, 1.0 - 1e-12, "outer rounds 3..S")
    sink = ListSink()
    run_dspg(obj, sch, cfg, sink, f_star=f_star, record_every=16)
    gaps = [r.gap for r in sink.records]
    plateau = min(gaps[int(0.75 * len(gaps)):])
    ratio = _Worst()
    ratio.add(10 * res.snapshot_gaps[-1], plateau, "last quarter of DSPG")
    return [
        rate.result("desk_linear_rate", "fitted per-round contraction vs 1", t0),
        ratio.result("desk_dspg_plateau", "10 x DPSVRG final gap vs DSPG late minimum gap", t0),
    ]


def verify_suite(
    level: str = "fast",
    *,
    prox: ProxFn | None = None,
    zero_replay: bool = False,
    seed: int = 0,
) -> VerifyReport:
    """Run the invariant battery.

    ``prox`` replaces the closed-form l1 prox in the prox checks and
    ``zero_replay`` drops the constructed errors from the equivalence
    replay; both exist to confirm that the checks can fail.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    prox = prox or prox_l1
    rng = np.random.default_rng(seed)
    full = level == "full"
    report = VerifyReport(level)

    report.checks += _check_consensus(rng, 20 if full else 6, range(3, 9) if full else (3, 4),
                                   (1, 3, 7) if full else (1, 2, 3), 100 if full else 40)
    report.checks += _check_prox(rng, 1000 if full else 200, prox)

    data, _ = synth_dataset(40, 6, 2, 0.1, seed, m=4)
    for loss in ("logistic", "least_squares"):
        c = _check_estimator(CompositeObjective(loss, data, Regularizer("l1", 0.01)), rng)
        c.name += f"_{loss}"
        report.checks.append(c)
    report.checks.append(_check_variance(seed))

    obj, sch, cfg, res = _equivalence_case(seed, 128 if full else 64, 10 if full else 6, 4 if full else 3)
    report.checks.append(_check_equivalence(obj, cfg, res.trace, zero_replay))
    report.checks += _check_error_sums(obj, sch, cfg, res.trace)

    if full:
        report.checks += _check_desk_scale(seed)
    return report
