"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one result line; pytest prints them in the terminal
summary, and running this file directly prints them as it goes.
"""

import io
import math
import time

import numpy as np
import pytest

from dpsvrg.algorithms import (
    ErrorBounds,
    RunConfig,
    run_dpsvrg,
    run_dspg,
    run_inexact_prox_svrg,
    run_reference,
)
from dpsvrg.data import synth_dataset
from dpsvrg.metrics import CsvSink, ListSink, fit_contraction
from dpsvrg.objective import (
    CompositeObjective,
    bound_constants,
    full_grad,
    objective_value,
    per_sample_values,
    sample_grad,
    sample_grads,
    smooth_value,
    smoothness_L,
)
from dpsvrg.proximal import Regularizer, prox_inexact, prox_l1, prox_numeric
from dpsvrg.topology import consensus_bound, make_schedule

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, line: str) -> None:
    RESULTS[n] = (bool(ok), line)
    if __name__ == "__main__":
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}", flush=True)
    assert ok, line


# -- shared desk-scale setup (criteria 6-9) -----------------------------------------

DESK = dict(n=1024, d=20, sparsity=5, noise=0.1, seed=1)
DESK_CFG = dict(alpha=0.01, lam=0.01, S=12, m=8, seed=0)


def _desk_objective():
    data, _ = synth_dataset(DESK["n"], DESK["d"], DESK["sparsity"], DESK["noise"], DESK["seed"], m=8)
    obj = CompositeObjective("logistic", data, Regularizer("l1", DESK_CFG["lam"]))
    _, f_star = run_reference(obj)
    return obj, f_star


def _desk_run(obj, f_star, schedule, workers=1, record_errors=False):
    cfg = RunConfig(**DESK_CFG, record_errors=record_errors)
    buf_a, buf_b = io.StringIO(), io.StringIO()
    sink_b = ListSink()
    res = run_dpsvrg(obj, schedule, cfg, CsvSink(buf_a), f_star=f_star, workers=workers)

    class Tee:
        def __init__(self):
            self.csv = CsvSink(buf_b)

        def emit(self, r):
            self.csv.emit(r)
            sink_b.emit(r)

    dspg = run_dspg(obj, schedule, cfg, Tee(), f_star=f_star, workers=workers)
    gaps = np.array([r.gap for r in sink_b.records])
    return res, dspg, gaps, buf_a.getvalue(), buf_b.getvalue()


_CACHE: dict = {}


def desk():
    if "desk" not in _CACHE:
        t0 = time.perf_counter()
        obj, f_star = _desk_objective()
        sch = make_schedule(8, 1, family="static", graph="ring", seed=0)
        run = _desk_run(obj, f_star, sch, workers=1, record_errors=True)
        _CACHE["desk"] = (obj, f_star, sch, run, time.perf_counter() - t0)
    return _CACHE["desk"]


# -- criteria -------------------------------------------------------------------------


def test_criterion_1_replay_equivalence():
    t0 = time.perf_counter()
    data, _ = synth_dataset(128, 10, 3, 0.1, seed=4, m=4)
    obj = CompositeObjective("logistic", data, Regularizer("l1", 0.01))
    sch = make_schedule(4, 2, family="ring-split", seed=4)
    cfg = RunConfig(alpha=0.01, lam=0.01, beta=2.0, n0=4, S=4, m=4, seed=4, record_errors=True)
    tr = run_dpsvrg(obj, sch, cfg).trace
    rep = run_inexact_prox_svrg(obj, cfg, tr)
    worst = 0.0
    for s in range(cfg.S):
        for k in range(tr.K[s]):
            xb, qb = tr.xbar[s][k], tr.qbar[s][k]
            worst = max(worst,
                        np.linalg.norm(rep.xs[s][k] - xb) / (1 + np.linalg.norm(xb)),
                        np.linalg.norm(rep.qs[s][k] - qb) / (1 + np.linalg.norm(qb)))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-8 and dt < 5 and rep.rejected == 0,
           f"max relative deviation {worst:.2e} (<= 1e-8) over {sum(tr.K)} steps, {dt:.2f}s (< 5s)")


def test_criterion_2_consensus_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    violations = checked = 0
    for i in range(20):
        m = int(rng.integers(3, 9))
        b = int(rng.choice([1, 3, 7]))
        fam = "ring-split" if i % 2 else "random-matching"
        sch = make_schedule(m, b, family=fam, seed=int(rng.integers(1 << 30)))
        for start in (0, int(rng.integers(1, 200))):
            P = np.eye(m)
            for span in range(101):
                P = sch.matrix(start + span) @ P
                checked += 1
                violations += np.abs(P - 1.0 / m).max() > consensus_bound(sch, span)
    dt = time.perf_counter() - t0
    record(2, violations == 0 and dt < 10,
           f"{violations} violations in {checked} (schedule, start, span) checks, {dt:.2f}s (< 10s)")


def test_criterion_3_prox_battery():
    rng = np.random.default_rng(3)
    slack = 1e-10
    fails = {"membership": 0, "variational_inequality": 0, "nonexpansive": 0, "inexact_nonexpansive": 0}

    def draw():
        d = int(rng.integers(1, 16))
        return d, float(rng.uniform(1e-3, 2.0)), float(rng.uniform(0.0, 2.0))

    for _ in range(1000):
        d, alpha, lam = draw()
        h = Regularizer("l1", lam)
        z = rng.standard_normal(d) * rng.choice([0.01, 1.0, 10.0])
        y = prox_l1(z, alpha, lam)
        lo, hi = h.subgradient_box(y)
        g = (z - y) / alpha
        fails["membership"] += not (np.all(g >= lo - slack) and np.all(g <= hi + slack))
    for _ in range(1000):
        d, alpha, lam = draw()
        h = Regularizer("l1", lam)
        z, x = rng.standard_normal(d) * 3, rng.standard_normal(d) * 3
        y = prox_l1(z, alpha, lam)
        fails["variational_inequality"] += bool(float((z - y) @ (x - y)) / alpha > h.value(x) - h.value(y) + slack)
    for _ in range(1000):
        d, alpha, lam = draw()
        z1, z2 = rng.standard_normal(d) * 3, rng.standard_normal(d) * 3
        lhs = np.linalg.norm(prox_l1(z1, alpha, lam) - prox_l1(z2, alpha, lam))
        fails["nonexpansive"] += int(lhs > np.linalg.norm(z1 - z2) + slack)
    for _ in range(1000):
        d, alpha, lam = draw()
        h = Regularizer("l1", lam)
        eps = float(10 ** rng.uniform(-10, 0))
        z1, z2 = rng.standard_normal(d) * 3, rng.standard_normal(d) * 3
        a = prox_inexact(h, z1, alpha, eps, rng).point
        b = prox_inexact(h, z2, alpha, eps, rng).point
        rhs = np.linalg.norm(z1 - z2) + 3 * math.sqrt(2 * alpha * eps) + slack
        fails["inexact_nonexpansive"] += int(np.linalg.norm(a - b) > rhs)
    worst = 0.0
    for _ in range(100):
        d, alpha, lam = draw()
        z = rng.standard_normal(d) * 3
        worst = max(worst, np.abs(prox_numeric(Regularizer("l1", lam), z, alpha, 1e-11) - prox_l1(z, alpha, lam)).max())
    ok = not any(fails.values()) and worst <= 1e-8
    record(3, ok, f"failures per 1000 trials {fails}; closed form vs numeric max diff {worst:.1e} (<= 1e-8)")


def test_criterion_4_variance_bound():
    data, _ = synth_dataset(64, 10, 3, 0.1, seed=5, m=1)
    obj = CompositeObjective("logistic", data, Regularizer("l1", 0.01))
    _, f_star = run_reference(obj)
    L = smoothness_L(obj)
    cfg = RunConfig(alpha=0.01, lam=0.01, S=5, m=1, seed=5)
    hist = run_dpsvrg(obj, None, cfg, keep_history=True).history
    idx = np.arange(data.n)
    violations = checked = 0
    worst_ratio = 0.0
    for xt_all, xs_prev, xs_new in zip(hist.xt_prev, hist.x_prev, hist.x_new):
        xt = xt_all[0]
        gt, ft = sample_grads(obj, xt, idx), full_grad(obj, xt)
        Ft = objective_value(obj, xt) - f_star
        for x in np.concatenate([xs_prev[:, 0], xs_new[-1:, 0]]):
            v = sample_grads(obj, x, idx) - gt + ft
            var = float(np.mean(np.sum((v - full_grad(obj, x)) ** 2, axis=1)))
            rhs = 4 * L * (objective_value(obj, x) - f_star) + 4 * L * Ft + 1e-8
            checked += 1
            violations += var > rhs
            worst_ratio = max(worst_ratio, var / rhs)
    record(4, violations == 0, f"{violations} violations over {checked} iterates; max lhs/rhs {worst_ratio:.3f}")


def test_criterion_5_estimator_and_gradients():
    rng = np.random.default_rng(5)
    data, _ = synth_dataset(60, 8, 3, 0.1, seed=6, m=4)
    X = rng.standard_normal((60, 8))
    lsq_y = X @ rng.standard_normal(8) + 0.1 * rng.standard_normal(60)
    from dpsvrg.objective import Dataset
    objs = {
        "logistic": CompositeObjective("logistic", data, Regularizer("l1", 0.01)),
        "least_squares": CompositeObjective("least_squares", Dataset.split(X, lsq_y, 4), Regularizer("l1", 0.01)),
    }
    unbiased = 0.0
    fd_worst = {}
    for name, obj in objs.items():
        for node, idx in enumerate(obj.data.parts):
            for _ in range(5):
                x, xt = rng.standard_normal(obj.d), rng.standard_normal(obj.d)
                snap = full_grad(obj, xt, node)
                v = sample_grads(obj, x, idx) - sample_grads(obj, xt, idx) + snap
                unbiased = max(unbiased, float(np.abs(v.mean(0) - full_grad(obj, x, node)).max()))
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(obj.d)
            j = int(rng.integers(obj.data.n))
            g = sample_grad(obj, x, j)
            fd = np.zeros(obj.d)
            for c in range(obj.d):
                e = np.zeros(obj.d)
                e[c] = 1e-5
                fd[c] = (per_sample_values(obj, x + e, [j])[0] - per_sample_values(obj, x - e, [j])[0]) / 2e-5
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
        fd_worst[name] = worst
    ok = unbiased <= 1e-12 and max(fd_worst.values()) <= 1e-6
    record(5, ok, f"exhaustive-mean error {unbiased:.1e} (<= 1e-12); finite-difference rel. error "
                  + ", ".join(f"{k} {v:.1e}" for k, v in fd_worst.items()) + " (<= 1e-6)")


def test_criterion_6_convergence_quality():
    obj, f_star, sch, (res, dspg, dspg_gaps, _, _), dt = desk()
    gaps = np.array(res.snapshot_gaps)
    rho_hat = fit_contraction(gaps, start=2)
    strict = bool(np.all(np.diff(gaps[1:]) < 0))
    tail = dspg_gaps[int(0.75 * len(dspg_gaps)):]
    ratio = tail.min() / gaps[-1]
    ok = rho_hat < 1 and strict and ratio >= 10 and dt < 60
    record(6, ok, f"(a) rho_hat {rho_hat:.3f} (< 1), strict decrease after round 2: {strict}; "
                  f"(b) DSPG late min gap {tail.min():.2e} vs DPSVRG final {gaps[-1]:.2e}, ratio {ratio:.1e} (>= 10); "
                  f"{dt:.1f}s (< 60s)")


def test_criterion_7_error_sums():
    obj, f_star, sch, (res, *_), _ = desk()
    tr = res.trace
    cfg = RunConfig(**DESK_CFG)
    G_f, G_h, _ = bound_constants(obj, tr.max_norm)
    eb = ErrorBounds(smoothness_L(obj), cfg.alpha, cfg.m, cfg.beta, cfg.n0, G_f, G_h,
                     sch.Gamma, sch.gamma, float(tr.q_norm_sum[0][0]))
    se, sp = tr.sums_e(), tr.sums_sqrt_eps()
    finite = bool(np.all(np.isfinite(se)) and np.all(np.isfinite(sp)))
    e_ok = all(se[s - 1] <= eb.sum_e(s) for s in range(1, cfg.S + 1))
    p_ok = all(sp[s - 1] <= eb.sum_sqrt_eps(s) for s in range(1, cfg.S + 1))
    q_viol = sum(int(np.sum(tr.q_norm_sum[s - 1] > [eb.q_bound(k, s) for k in range(1, K + 1)]))
                 for s, K in enumerate(tr.K, start=1))
    ok = finite and e_ok and p_ok and q_viol == 0
    record(7, ok, f"max sum||e|| {se.max():.2e} vs min bound {min(eb.sum_e(s) for s in range(1, 13)):.2e}; "
                  f"max sum sqrt(eps) {sp.max():.2e} vs min bound {min(eb.sum_sqrt_eps(s) for s in range(1, 13)):.2e}; "
                  f"q-norm bound violations {q_viol} over {sum(tr.K)} steps")


def test_criterion_8_b_sweep():
    obj, f_star = _desk_objective()
    finals, plateaus = {}, {}
    for b in (3, 7, 50):
        sch = make_schedule(8, b, family="ring-split", seed=0)
        res, _, dgaps, _, _ = _desk_run(obj, f_star, sch)
        finals[b] = res.snapshot_gaps[-1]
        plateaus[b] = float(dgaps[int(0.75 * len(dgaps)):].mean())
    spread = max(finals.values()) / min(finals.values())
    mono = plateaus[3] < plateaus[7] < plateaus[50]
    record(8, spread < 2 and mono,
           "DPSVRG final gaps " + ", ".join(f"b={b}: {g:.2e}" for b, g in finals.items())
           + f" spread {spread:.2f}x (< 2x); DSPG plateau "
           + ", ".join(f"b={b}: {g:.2e}" for b, g in plateaus.items()) + f" increasing: {mono}")


def test_criterion_9_determinism():
    obj, f_star, sch, (_, _, _, csv_a1, csv_b1), _ = desk()
    # the cached run recorded errors; rerun both thread counts on identical settings
    _, _, _, a1, b1 = _desk_run(obj, f_star, sch, workers=1)
    _, _, _, a4, b4 = _desk_run(obj, f_star, sch, workers=4)
    same = a1 == a4 and b1 == b4
    record(9, same and len(a1) > 0, f"DPSVRG CSV {len(a1)} bytes, DSPG CSV {len(b1)} bytes; "
                                    f"1 vs 4 workers byte-identical: {same}")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
