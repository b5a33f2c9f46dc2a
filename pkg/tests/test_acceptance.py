"""End-to-end reproduction checks, one test per acceptance criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import dense_gp, random_spec, record, simulate_ssm
from ihgp import grad, lik, ssm
from ihgp.apps.bench import run_bench
from ihgp.apps.gen import gen_sinc
from ihgp.exact import adf_filter, exact_infer, kalman_filter
from ihgp.horizon import ihgp_infer
from ihgp.lgcp import bin_events, fit_intensity
from ihgp.steady import build_grid, dare_residual, interp_steady, solve_pp_dare, stationary_gain

M32 = ssm.Matern(1.5, 1.0, 1.0)


def _model(spec, dt):
    return ssm.discretize(ssm.build(spec), dt)


# ---------------------------------------------------------------- 1


def test_criterion_1_exact_baseline_matches_dense_gp():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(5):
        spec = random_spec(rng, max_m=6)
        n = int(rng.integers(50, 301))
        dt = float(rng.uniform(0.02, 0.5))
        noise = float(rng.uniform(0.05, 0.5))
        y = rng.standard_normal(n)
        marg = exact_infer(_model(spec, dt), y, lik.gaussian(noise))
        mean, var, ll = dense_gp(spec, dt * np.arange(n), y, noise)
        rel = lambda a, b: np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
        worst = max(worst, rel(marg.mean, mean), rel(marg.var, var), abs(marg.log_lik - ll) / abs(ll))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    record(1, ok, f"max relative error {worst:.2e} (tol 1e-6), {elapsed:.2f} s (limit 10 s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_gaussian_sinc_reproduction():
    start = time.perf_counter()
    d = gen_sinc(1000, seed=0)
    dt = float(d.x[1] - d.x[0])

    def exact_nll(z):
        spec = ssm.Matern(1.5, math.exp(z[0]), math.exp(z[1]))
        return -kalman_filter(_model(spec, dt), d.y, math.exp(z[2]), store_predictive=False).log_lik

    ss = minimize(exact_nll, np.zeros(3) + [0, 0, math.log(0.1)], method="L-BFGS-B")
    ss_spec = ssm.Matern(1.5, math.exp(ss.x[0]), math.exp(ss.x[1]))
    ref = exact_infer(_model(ss_spec, dt), d.y, lik.gaussian(math.exp(ss.x[2])))

    fitted = grad.fit(M32, grad.HyperParams.from_model(M32, 0.1), d.y, dt)
    spec, noise = fitted.theta.apply(M32)
    model = _model(spec, dt)
    res = ihgp_infer(model, build_grid(model), d.y, lik.gaussian(noise))
    elapsed = time.perf_counter() - start

    mae_e = float(np.mean(np.abs(res.mean - ref.mean)))
    mae_v = float(np.mean(np.abs(res.var - ref.var)))
    nll_ss, nll_ih = ss.fun, -res.log_lik
    rel = abs(nll_ih - nll_ss) / abs(nll_ss)
    ok = mae_e <= 0.02 and mae_v <= 0.003 and rel <= 0.01 and elapsed < 60
    record(2, ok, f"MAE(E) {mae_e:.2e} (<=0.02), MAE(V) {mae_v:.2e} (<=0.003), "
                  f"NLL SS {nll_ss:.2f} vs IHGP {nll_ih:.2f} ({100 * rel:.2f}% <= 1%), {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 3

PUBLISHED_MAE = {"poisson": 0.0415, "logit": 0.0741, "probit": 0.0351}


def _fit_nonconj(kind, y, dt):
    L = lik.LikelihoodModel(kind)

    def mk(z):
        return _model(ssm.Matern(1.5, math.exp(z[0]), math.exp(z[1])), dt)

    def nss(z):
        try:
            return -adf_filter(mk(z), y, L)[2]
        except Exception:  # unstable corner of the search space
            return 1e10

    def nih(z):
        try:
            m = mk(z)
            return -ihgp_infer(m, build_grid(m), y, L).log_lik
        except Exception:
            return 1e10

    opts = dict(xatol=1e-3, fatol=1e-3, initial_simplex=[[0, 0], [0.7, 0], [0, 0.7]])
    a = minimize(nss, [0.0, 0.0], method="Nelder-Mead", options=opts)
    b = minimize(nih, [0.0, 0.0], method="Nelder-Mead", options=opts)
    ref = exact_infer(mk(a.x), y, L)
    m = mk(b.x)
    res = ihgp_infer(m, build_grid(m), y, L)
    return {"mae": float(np.mean(np.abs(res.mean - ref.mean))), "nll_ss": float(a.fun), "nll_ih": float(b.fun)}


@pytest.fixture(scope="module")
def nonconj_results():
    start = time.perf_counter()
    out = {}
    for kind, mode in (("poisson", "poisson"), ("logit", "classification"), ("probit", "classification")):
        d = gen_sinc(1000, seed=0, mode=mode)
        out[kind] = _fit_nonconj(kind, d.y, float(d.x[1] - d.x[0]))
    return out, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_3_non_gaussian_sinc_reproduction(nonconj_results):
    out, elapsed = nonconj_results
    ok = elapsed < 300
    parts = []
    for kind, r in out.items():
        rel = abs(r["nll_ih"] - r["nll_ss"]) / abs(r["nll_ss"])
        good = r["mae"] <= 2 * PUBLISHED_MAE[kind] and rel <= 0.02
        ok &= good
        parts.append(f"{kind}: MAE {r['mae']:.4f} (<= {2 * PUBLISHED_MAE[kind]:.4f}), "
                     f"NLL {r['nll_ss']:.1f}/{r['nll_ih']:.1f} ({100 * rel:.2f}%)")
    record(3, ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("kind,published", [("logit", 617.5), ("probit", 613.9)])
def test_classification_nll_magnitude_matches_published(nonconj_results, kind, published):
    assert nonconj_results[0][kind]["nll_ih"] == pytest.approx(published, rel=0.02)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="count generator of the original benchmark is unknown; "
                                       "rate exp(sinc) gives about half the published NLL")
def test_poisson_nll_magnitude_matches_published(nonconj_results):
    assert nonconj_results[0]["poisson"]["nll_ih"] == pytest.approx(2699.3, rel=0.02)


# ---------------------------------------------------------------- 4


def _airline():
    year = ssm.Product((ssm.Periodic(1.0, 365.25, 1.0, J=6), ssm.Matern(1.5, 1.0, 3650.0)))
    week = ssm.Product((ssm.Periodic(1.0, 7.0, 1.0, J=6), ssm.Matern(1.5, 1.0, 365.0)))
    return ssm.Sum((ssm.Matern(2.5, 1.0, 3650.0), year, week))


def test_criterion_4_dare_and_interpolation():
    models = {
        "matern32": (M32, 12.0 / 999),
        "sum": (ssm.Sum((ssm.Matern(1.5, 0.8, 0.6), ssm.Matern(0.5, 0.2, 3.0))), 0.05),
        "periodic_x_matern": (ssm.Product((ssm.Periodic(1.0, 2.0, 1.2, J=3), ssm.Matern(1.5, 1.0, 4.0))), 0.05),
        "airline59": (_airline(), 1.0),
    }
    rng = np.random.default_rng(4)
    worst_res, worst_interp, dims = 0.0, 0.0, []
    for spec, dt in models.values():
        model = _model(spec, dt)
        dims.append(model.m)
        grid = build_grid(model)
        for s in grid.table[:grid.K]:
            worst_res = max(worst_res, dare_residual(model, s.Pp, s.gamma) / np.linalg.norm(s.Pp))
        for g in np.exp(rng.uniform(math.log(grid.gmin), math.log(grid.gmax), 50)):
            direct = solve_pp_dare(model, g)
            err = np.linalg.norm(interp_steady(grid, g).Pp - direct) / np.linalg.norm(direct)
            worst_interp = max(worst_interp, err)
    ok = worst_res <= 1e-9 and worst_interp <= 5e-3 and max(dims) == 59
    record(4, ok, f"m={dims}: max relative DARE residual {worst_res:.1e} (<=1e-9), "
                  f"max interpolation error {worst_interp:.1e} (<=5e-3)")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_gradient_vs_finite_differences():
    d = gen_sinc(1000, seed=0)
    dt = float(d.x[1] - d.x[0])
    models = [M32, ssm.Sum((ssm.Matern(1.5, 0.8, 0.6), ssm.Matern(0.5, 0.2, 3.0))),
              ssm.Product((ssm.Periodic(1.0, 2.0, 1.2, J=2), ssm.Matern(0.5, 1.0, 4.0)))]
    worst, counts = 0.0, []
    for spec in models:
        theta = grad.HyperParams.from_model(spec, 0.1)
        _, g = grad.objective(spec, theta, d.y, dt)
        x0 = np.array(theta.theta)
        h = 1e-4
        for k in range(x0.size):
            e = np.zeros_like(x0)
            e[k] = h
            f = lambda x: grad.steady_nll(spec, theta.with_theta(x), d.y, dt)
            fd = (-f(x0 + 2 * e) + 8 * f(x0 + e) - 8 * f(x0 - e) + f(x0 - 2 * e)) / (12 * h)
            worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-8))
        counts.append(x0.size)
    ok = worst <= 1e-5 and min(counts) >= 3
    record(5, ok, f"parameters per model {counts}, max relative error {worst:.1e} (<=1e-5)")
    assert ok


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_scaling_benchmark():
    start = time.perf_counter()
    res = run_bench([20, 40, 60, 80, 100], n=10_000, repetitions=3, seed=0)
    elapsed = time.perf_counter() - start
    rmse = max(r["rmse_vs_exact"] for r in res.rows)
    se, si = res.slopes["exact"], res.slopes["ihgp"]
    ok = si <= 2.4 and se >= 2.6 and rmse < 1e-3 and elapsed < 900
    record(6, ok, f"slope exact {se:.2f} (>=2.6), IHGP {si:.2f} (<=2.4), max RMSE {rmse:.1e} (<1e-3), "
                  f"{elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_gain_stabilisation():
    d = gen_sinc(1000, seed=0)
    dt = float(d.x[1] - d.x[0])
    fitted = grad.fit(M32, grad.HyperParams.from_model(M32, 0.1), d.y, dt)
    spec, noise = fitted.theta.apply(M32)
    model = _model(spec, dt)
    gains = kalman_filter(model, d.y, noise).gains(model.h)
    k = stationary_gain(solve_pp_dare(model, noise), model.h, noise)
    tail = gains[int(0.8 * gains.shape[0]):]
    err = float(np.max(np.abs(tail - k)))
    ok = err <= 1e-6
    record(7, ok, f"max |k_i - k| over the last 20% of steps {err:.1e} (<=1e-6)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_online_regime_switch():
    rng = np.random.default_rng(0)
    dt, n, W, S = 0.05, 20_000, 400, 100
    f = np.concatenate([simulate_ssm(ssm.Matern(1.5, 0.5, 1.0), n // 2, dt, rng),
                        simulate_ssm(ssm.Matern(1.5, 3.0, 1.0), n // 2, dt, rng)])
    y = f + math.sqrt(0.1) * rng.standard_normal(n)
    spec = ssm.Matern(1.5, 0.5, 1.0)

    def run(eta):
        th = grad.HyperParams.from_model(spec, 0.1)
        out = []
        for start in range(0, n - W + 1, S):
            th, _ = grad.online_step(spec, th, y[start:start + W], dt, eta)
            out.append(np.exp(th.theta))
        return np.array(out)

    traj = run(1e-3)
    switch = (n // 2) // S
    first = switch - W // S + 1
    pre = traj[first - 50:first, 0]
    before, after = traj[first - 1, 0], traj[first + 49, 0]
    frozen = run(0.0)
    # moved toward 3.0: above every pre-switch value and closer to the new regime
    moved = after > pre.max() and abs(3.0 - after) < abs(3.0 - before)
    constant = bool(np.all(frozen == frozen[0]))
    ok = moved and constant
    record(8, ok, f"magnitude {before:.2f} -> {after:.2f} after 50 windows (pre-switch max {pre.max():.2f}, "
                  f"new regime 3.0); "
                  f"eta=0 trajectory constant: {constant}")
    assert ok


# ---------------------------------------------------------------- 9


def test_criterion_9_lgcp_pipeline():
    rng = np.random.default_rng(9)
    t1, rmax = 1000.0, 5.5
    rate = lambda t: 3.0 + 2.5 * np.sin(2 * np.pi * t / 200.0)
    cand = np.sort(rng.uniform(0, t1, rng.poisson(rmax * t1)))
    ts = cand[rng.uniform(0, rmax, cand.size) < rate(cand)]
    counts = bin_events(ts, 0.0, t1, 1.0)
    spec = ssm.Matern(1.5, 1.0, 10.0)
    a = fit_intensity(counts, spec, use_ihgp=True)
    b = fit_intensity(counts, spec, use_ihgp=False)
    inner = slice(50, -50)
    spread = float(b.median[inner].max() - b.median[inner].min())
    gap = float(np.max(np.abs(a.median[inner] - b.median[inner])))

    coal = np.sort(rng.uniform(1851.0, 1962.0, 191))
    cc = bin_events(coal, 1851.0, 1962.0, (1962.0 - 1851.0) / 200)
    conserved = cc.n == 200 and int(cc.y.sum()) == 191
    ok = gap <= 0.05 * spread and conserved
    record(9, ok, f"max median gap {gap:.3f} vs 5% of range {0.05 * spread:.3f}; coal-style 191 events in "
                  f"{cc.n} bins sum to {int(cc.y.sum())}")
    assert ok
