import math

import numpy as np
import pytest

from dpsvrg.algorithms import (
    ConfigError,
    ErrorBounds,
    ErrorTrace,
    ReferenceSolverError,
    RunConfig,
    construct_errors,
    dspg_matched_iterations,
    gradient_mapping_norm,
    node_rngs,
    run_dpsvrg,
    run_dspg,
    run_inexact_prox_svrg,
    run_reference,
)
from dpsvrg.data import synth_dataset
from dpsvrg.metrics import ListSink
from dpsvrg.objective import CompositeObjective, Dataset, full_grad, objective_value
from dpsvrg.proximal import Regularizer, epsilon_of
from dpsvrg.topology import consensus_bound, make_schedule


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def _logistic_grad(X, y, x, j):
    return (_sigmoid(X[j] @ x) - y[j]) * X[j]


def _obj(n=48, d=5, m=4, lam=0.01, seed=2, loss="logistic"):
    data, _ = synth_dataset(n, d, 2, 0.1, seed, m=m)
    return CompositeObjective(loss, data, Regularizer("l1", lam))


# -- oracles ---------------------------------------------------------------


def _svrg_oracle(X, y, alpha, Ks, seed):
    """Plain single-machine SVRG with a mean-of-inner-iterates snapshot."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    n, d = X.shape
    x = np.zeros(d)
    xt = np.zeros(d)
    path = []
    for K in Ks:
        mu = np.mean([_logistic_grad(X, y, xt, j) for j in range(n)], axis=0)
        acc = np.zeros(d)
        for _ in range(K):
            j = rng.integers(n)
            x = x - alpha * (_logistic_grad(X, y, x, j) - _logistic_grad(X, y, xt, j) + mu)
            path.append(x.copy())
            acc += x
        xt = acc / K
    return np.array(path)


def _sgd_oracle(X, y, alpha, T, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    x = np.zeros(X.shape[1])
    for _ in range(T):
        j = rng.integers(X.shape[0])
        x = x - alpha * _logistic_grad(X, y, x, j)
    return x


# -- DPSVRG / inexact -------------------------------------------------------


def test_svrg_oracle_match():
    obj = _obj(m=1, lam=0.0)
    cfg = RunConfig(alpha=0.05, lam=0.0, S=3, m=1, seed=5)
    ref = _svrg_oracle(obj.data.features, obj.data.labels, 0.05, cfg.inner_counts(), 5)
    hist = run_dpsvrg(obj, None, cfg, keep_history=True).history
    got = np.concatenate([h[:, 0, :] for h in hist.x_new])
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-14)
    rep = run_inexact_prox_svrg(obj, cfg)
    assert np.allclose(np.concatenate(rep.xs), ref, rtol=1e-12, atol=1e-14)


def test_single_sample_is_prox_gradient():
    X = np.array([[0.3, -1.2, 0.7]])
    obj = CompositeObjective("logistic", Dataset.split(X, [1.0], 1), Regularizer("l1", 0.05))
    cfg = RunConfig(alpha=0.1, lam=0.05, S=2, m=1)
    rep = run_inexact_prox_svrg(obj, cfg)
    x = np.zeros(3)
    for got in np.concatenate(rep.xs):
        z = x - 0.1 * full_grad(obj, x)
        x = np.sign(z) * np.maximum(np.abs(z) - 0.005, 0)
        assert np.allclose(got, x, atol=1e-15)


def test_single_node_has_no_errors():
    obj = _obj(m=1)
    cfg = RunConfig(alpha=0.05, lam=0.01, S=3, m=1, record_errors=True)
    res = run_dpsvrg(obj, None, cfg)
    assert all(np.all(e == 0) for e in res.trace.e)
    assert all(np.all(v == 0) for v in res.trace.eps)
    exact = run_inexact_prox_svrg(obj, cfg)
    assert np.array_equal(res.x_tilde[0], exact.x_tilde)
    assert res.comm_rounds == 0


def test_complete_graph_matches_zero_error_replay():
    obj = _obj(m=4)
    sch = make_schedule(4, 1, family="static", graph="complete")
    cfg = RunConfig(alpha=0.05, lam=0.01, S=3, m=4, record_errors=True)
    res = run_dpsvrg(obj, sch, cfg)
    tr = res.trace
    assert max(np.abs(e).max() for e in tr.e) <= 1e-15
    assert max(v.max() for v in tr.eps) <= 1e-15
    assert max(v.max() for v in tr.x_dev) == 0.0
    rep = run_inexact_prox_svrg(obj, cfg, tr.zeroed())
    for a, b in zip(rep.xs, tr.xbar):
        assert np.abs(a - b).max() <= 1e-10 * (1 + np.abs(b).max())


@pytest.mark.parametrize("family,b,batch,consensus", [
    ("ring-split", 2, 1, "multi"),
    ("random-matching", 3, 1, "multi"),
    ("ring-split", 3, 2, "multi"),
    ("ring-split", 2, 1, "single"),
])
def test_replay_tracks_node_average(family, b, batch, consensus):
    obj = _obj(n=64, d=6, m=4)
    sch = make_schedule(4, b, family=family, seed=7)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=4, batch=batch, consensus=consensus,
                    seed=3, record_errors=True)
    tr = run_dpsvrg(obj, sch, cfg).trace
    rep = run_inexact_prox_svrg(obj, cfg, tr)
    assert rep.rejected == 0 and rep.accepted == sum(tr.K)
    for s in range(cfg.S):
        for xs, qs, xb, qb in zip(rep.xs[s], rep.qs[s], tr.xbar[s], tr.qbar[s]):
            assert np.linalg.norm(xs - xb) <= 1e-8 * (1 + np.linalg.norm(xb))
            assert np.linalg.norm(qs - qb) <= 1e-8 * (1 + np.linalg.norm(qb))
            # the recorded point is a valid eps-inexact prox of the replay input
    for s in range(cfg.S):
        for k in range(tr.K[s]):
            gap = epsilon_of(obj.reg, tr.xbar[s][k], rep.qs[s][k], cfg.alpha)
            assert gap <= tr.eps[s][k] + 1e-12


def test_zeroed_replay_diverges():
    obj = _obj(n=64, d=6, m=4)
    sch = make_schedule(4, 2, family="ring-split", seed=7)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=4, record_errors=True)
    tr = run_dpsvrg(obj, sch, cfg).trace
    rep = run_inexact_prox_svrg(obj, cfg, tr.zeroed())
    dev = max(np.linalg.norm(a - b, axis=1).max() for a, b in zip(rep.xs, tr.xbar))
    assert dev > 1e-6


def test_construct_errors_matches_recorded_trace():
    obj = _obj(m=4)
    sch = make_schedule(4, 2, family="ring-split", seed=1)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=4, record_errors=True)
    res = run_dpsvrg(obj, sch, cfg, keep_history=True)
    built = construct_errors(obj, cfg, res.history)
    for name in ("e", "eps", "samples", "xbar", "qbar", "q_norm_sum", "x_dev"):
        for a, b in zip(getattr(built, name), getattr(res.trace, name)):
            assert np.array_equal(a, b), name
    with pytest.raises(ValueError):
        from dpsvrg.algorithms import RunHistory
        construct_errors(obj, cfg, RunHistory())


def test_run_structure_invariants():
    obj = _obj(m=4)
    sch = make_schedule(4, 2, family="ring-split", seed=1)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=4, record_errors=True)
    res = run_dpsvrg(obj, sch, cfg, keep_history=True)
    h = res.history
    for s in range(cfg.S):
        # averaging through the doubly stochastic product keeps the mean
        scale = np.abs(h.q[s]).max()
        assert np.abs(h.qhat[s].mean(1) - h.q[s].mean(1)).max() <= 1e-14 * (1 + scale)
        if s + 1 < cfg.S:
            assert np.array_equal(h.x_prev[s + 1][0], h.x_new[s][-1])
            assert np.abs(h.xt_prev[s + 1] - h.x_new[s].mean(0)).max() <= 1e-12
        for k in range(1, len(h.x_new[s])):
            assert np.array_equal(h.x_prev[s][k], h.x_new[s][k - 1])
        K = len(h.x_new[s])
        for k in range(K):
            bound = 2 * consensus_bound(sch, k + 1) * res.trace.q_norm_sum[s][k]
            assert res.trace.x_dev[s][k] <= bound
    assert np.abs(res.x_tilde - h.x_new[-1].mean(0)).max() <= 1e-12


def test_accounting_multi_and_single():
    obj = _obj(m=4)
    sch = make_schedule(4, 2, family="ring-split", seed=1)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=4)
    sink = ListSink()
    res = run_dpsvrg(obj, sch, cfg, sink)
    Ks = cfg.inner_counts()
    assert Ks == [8, 16, 32]
    assert res.comm_rounds == sum(K * (K + 1) // 2 for K in Ks)
    snaps = sink.where("dpsvrg-snapshot")
    assert [r.comm_rounds for r in snaps] == list(np.cumsum([K * (K + 1) // 2 for K in Ks]))
    inner = sink.where("dpsvrg")
    assert len(inner) == sum(Ks)
    assert all(a.epoch_passes <= b.epoch_passes and a.comm_rounds <= b.comm_rounds
               for a, b in zip(sink.records, sink.records[1:]))
    assert res.epoch_passes == pytest.approx(cfg.S + 2 * 4 * sum(Ks) / obj.data.n)
    single = run_dpsvrg(obj, sch, RunConfig(alpha=0.02, lam=0.01, S=3, m=4, consensus="single"))
    assert single.comm_rounds == sum(Ks)


def test_workers_do_not_change_results():
    obj = _obj(n=96, m=6)
    sch = make_schedule(6, 3, family="random-matching", seed=2)
    cfg = RunConfig(alpha=0.02, lam=0.01, S=3, m=6, batch=2)
    runs = [run_dpsvrg(obj, sch, cfg, workers=w) for w in (1, 2, 4)]
    for r in runs[1:]:
        assert np.array_equal(r.x_tilde, runs[0].x_tilde) and np.array_equal(r.x, runs[0].x)
    d = [run_dspg(obj, sch, cfg, workers=w, iterations=200).x for w in (1, 4)]
    assert np.array_equal(d[0], d[1])


def test_node_streams_independent_of_m():
    a = node_rngs(9, 4)
    b = node_rngs(9, 6)
    assert np.array_equal(a[2].integers(1000, size=5), b[2].integers(1000, size=5))


def test_config_errors():
    obj = _obj(m=4)
    sch = make_schedule(4, 2, family="ring-split")
    for kw, field in [(dict(alpha=0.0), "alpha"), (dict(beta=1.0), "beta"), (dict(n0=0), "n0"),
                      (dict(S=0), "S"), (dict(batch=0), "batch"), (dict(consensus="x"), "consensus"),
                      (dict(lam=-1.0), "lam"), (dict(dspg_step="x"), "dspg_step")]:
        cfg = RunConfig(**{"alpha": 0.01, "lam": 0.01, "m": 4, **kw})
        with pytest.raises(ConfigError) as exc:
            run_dpsvrg(obj, sch, cfg)
        assert exc.value.field == field
    with pytest.raises(ConfigError):
        run_dpsvrg(obj, None, RunConfig(alpha=0.01, lam=0.01, m=4))
    with pytest.raises(ConfigError):
        run_dpsvrg(obj, make_schedule(3), RunConfig(alpha=0.01, lam=0.01, m=4))
    with pytest.raises(ConfigError):
        run_dpsvrg(obj, sch, RunConfig(alpha=0.01, lam=0.01, m=2))
    with pytest.raises(ValueError):
        run_inexact_prox_svrg(obj, RunConfig(alpha=0.01, lam=0.01, m=4, S=2), ErrorTrace.free([8], obj.d))


def test_free_running_inexact_prox():
    obj = _obj(m=4)
    cfg = RunConfig(alpha=0.05, lam=0.01, S=4, m=4, seed=1)
    _, f_star = run_reference(obj)
    exact = run_inexact_prox_svrg(obj, cfg)
    noisy = run_inexact_prox_svrg(obj, cfg, ErrorTrace.free(cfg.inner_counts(), obj.d, 1e-6))
    again = run_inexact_prox_svrg(obj, cfg, ErrorTrace.free(cfg.inner_counts(), obj.d, 1e-6))
    assert np.array_equal(noisy.x_tilde, again.x_tilde)
    assert not np.array_equal(noisy.x_tilde, exact.x_tilde)
    # eps = 1e-6 moves each step by at most sqrt(2 alpha eps) ~ 3e-4
    gap_exact = objective_value(obj, exact.x_tilde) - f_star
    assert abs(objective_value(obj, noisy.x_tilde) - f_star - gap_exact) < 0.1 * gap_exact


# -- DSPG --------------------------------------------------------------------


def test_dspg_sgd_oracle():
    obj = _obj(m=1, lam=0.0)
    cfg = RunConfig(alpha=0.05, lam=0.0, m=1, seed=4)
    got = run_dspg(obj, None, cfg, iterations=300).x[0]
    assert np.allclose(got, _sgd_oracle(obj.data.features, obj.data.labels, 0.05, 300, 4), atol=1e-14)


def test_dspg_zero_variance_is_full_gradient_descent(rng):
    m, d = 4, 3
    rows = rng.standard_normal((m, d))
    X = np.repeat(rows, 5, axis=0)
    y = np.repeat([0.0, 1.0, 1.0, 0.0], 5)
    obj = CompositeObjective("logistic", Dataset.split(X, y, m), Regularizer("l1", 0.02))
    sch = make_schedule(m, 2, family="ring-split")
    cfg = RunConfig(alpha=0.1, lam=0.02, m=m)
    got = run_dspg(obj, sch, cfg, iterations=50).x
    x = np.zeros((m, d))
    for t in range(50):
        g = np.stack([full_grad(obj, x[i], i) for i in range(m)])
        z = sch.matrix(t) @ (x - 0.1 * g)
        x = np.sign(z) * np.maximum(np.abs(z) - 0.002, 0)
    assert np.allclose(got, x, atol=1e-13)


def test_dspg_accounting_and_decay():
    obj = _obj(m=4)
    sch = make_schedule(4, 2, family="ring-split")
    cfg = RunConfig(alpha=0.05, lam=0.01, S=3, m=4)
    sink = ListSink()
    res = run_dspg(obj, sch, cfg, sink)
    assert res.iterations == dspg_matched_iterations(cfg, obj.data.n)
    assert res.comm_rounds == res.iterations == sink.records[-1].comm_rounds
    assert all(r.s == 0 for r in sink.records)
    dpsvrg = run_dpsvrg(obj, sch, cfg)
    assert res.epoch_passes == pytest.approx(dpsvrg.epoch_passes, abs=4 / obj.data.n)
    dec = run_dspg(obj, sch, RunConfig(alpha=0.05, lam=0.01, S=3, m=4, dspg_step="decay"), iterations=100)
    const = run_dspg(obj, sch, cfg, iterations=100)
    assert not np.array_equal(dec.x, const.x)
    with pytest.raises(ConfigError):
        run_dspg(obj, sch, cfg, step="cosine")


# -- reference solver ------------------------------------------------------------


def test_reference_zero_when_lambda_large():
    obj = _obj(m=1)
    lam = float(np.abs(full_grad(obj, np.zeros(obj.d))).max()) * 1.01
    x, f = run_reference(obj.with_lambda(lam))
    assert np.array_equal(x, np.zeros(obj.d)) and f == pytest.approx(math.log(2))


def test_reference_least_squares_normal_equations(rng):
    X = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    obj = CompositeObjective("least_squares", Dataset.split(X, y, 1), Regularizer("l1", 0.0))
    x, _ = run_reference(obj, 1e-11)
    assert np.allclose(x, np.linalg.solve(X.T @ X, X.T @ y), atol=1e-9)


def test_reference_optimality(rng):
    obj = _obj(n=100, d=8, m=1)
    x, f = run_reference(obj)
    assert gradient_mapping_norm(obj, x, 0.1) <= 1e-9
    for _ in range(1000):
        assert objective_value(obj, x + rng.standard_normal(obj.d) * rng.choice([1e-4, 1e-2, 1])) >= f
    with pytest.raises(ReferenceSolverError):
        run_reference(obj, max_iter=1)
    with pytest.raises(ValueError):
        run_reference(obj, tol=0.0)


# -- analytic bounds --------------------------------------------------------------


def test_error_bound_constants():
    eb = ErrorBounds(L=1.0, alpha=0.01, m=4, beta=2.0, n0=4, G_f=1.0, G_h=0.1,
                     Gamma=10.0, gamma=0.99, C0=0.5)
    k = np.arange(1, 200_000, dtype=float)
    assert eb.D0 >= np.sum(np.sqrt(0.99**k)) * (1 - 1e-12)
    assert eb.D1 >= np.sum(np.sqrt(k * 0.99**k))
    assert eb.C1 == pytest.approx(0.01 * 4 * 1.1)
    assert eb.C2(3) == pytest.approx(0.01 * 4 * 8 * 4 * 1.1)
    for s in (1, 3):
        assert eb.sum_e(s) >= eb.finite_sum_e(s, 500)
        assert eb.sum_sqrt_eps(s) >= eb.finite_sum_sqrt_eps(s, 500)
    assert math.isinf(ErrorBounds(1, 0.01, 4, 2, 4, 1, 0.1, 10, 1.0, 0.5).D0)
