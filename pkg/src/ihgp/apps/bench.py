"""Runtime scaling of exact state-space smoothing versus infinite-horizon inference.

The state dimension is raised by summing ``m / 2`` Matern-3/2 components.
Their hyperparameters are derived from a single Matern-3/2 fitted to the
sinc data: the fitted magnitude is split evenly, and the length-scales
are spread geometrically within a factor 1.25 of the fitted one.  The IHGP
timings exclude the one-off grid construction, which is reported
separately as ``setup_ms``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import grad, ssm
from ..errors import ParameterDomainError
from ..exact import kalman_filter, rts_smoother
from ..horizon import ihgp_infer
from ..lik import gaussian
from ..steady import build_grid
from .gen import gen_sinc


@dataclass
class BenchResult:
    rows: list
    slopes: dict
    base: dict = field(default_factory=dict)


def summed_matern(m: int, sigma2: float, ell: float) -> ssm.KernelSpec:
    if m < 2 or m % 2:
        raise ParameterDomainError(f"state dimension must be a positive even number, got {m}")
    c = m // 2
    ratios = np.geomspace(0.8, 1.25, c) if c > 1 else np.ones(1)
    return ssm.Sum(tuple(ssm.Matern(1.5, sigma2 / c, float(ell * r)) for r in ratios))


def fit_base(x, y, noise0: float = 0.1):
    """Single Matern-3/2 fitted on the steady-state objective: ``(sigma2, ell, noise)``."""
    spec = ssm.Matern(1.5, 1.0, 1.0)
    theta0 = grad.HyperParams.from_model(spec, noise0)
    res = grad.fit(spec, theta0, y, float(x[1] - x[0]))
    nat = res.theta.natural
    return nat["matern0.sigma2"], nat["matern0.ell"], nat[grad.NOISE]


def _time(fn, reps):
    times, out = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append(1e3 * (time.perf_counter() - t0))
    return np.array(times), out


def loglog_slope(m, runtime_ms, m_min: int = 20) -> float:
    m = np.asarray(m, dtype=float)
    r = np.asarray(runtime_ms, dtype=float)
    sel = m >= m_min
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(m[sel]), np.log(r[sel]), 1)[0])


def run_bench(m_list, n: int = 10_000, repetitions: int = 3, seed: int = 0, noise_sigma2: float = 0.1,
              backend=None, progress=None) -> BenchResult:
    if repetitions < 1:
        raise ParameterDomainError("need at least one repetition")
    data = gen_sinc(n, seed=seed, noise_var=noise_sigma2)
    dt = float(data.x[1] - data.x[0])
    s2, ell, noise = fit_base(data.x, data.y, noise_sigma2)
    lik = gaussian(noise)
    rows = []
    for m in m_list:
        model = ssm.discretize(ssm.build(summed_matern(int(m), s2, ell)), dt)

        def run_exact():
            filt = kalman_filter(model, data.y, noise, store_predictive=False, backend=backend)
            return rts_smoother(filt, model, backend=backend).mean

        t_exact, mean_exact = _time(run_exact, repetitions)
        t0 = time.perf_counter()
        grid = build_grid(model, extras=(noise,))
        setup_ms = 1e3 * (time.perf_counter() - t0)
        t_ihgp, res = _time(lambda: ihgp_infer(model, grid, data.y, lik, backend=backend), repetitions)
        rmse = float(np.sqrt(np.mean((res.mean - mean_exact) ** 2)))
        for method, t, extra in (("exact", t_exact, {"rmse_vs_exact": 0.0, "setup_ms": 0.0}),
                                 ("ihgp", t_ihgp, {"rmse_vs_exact": rmse, "setup_ms": setup_ms})):
            row = {"m": int(m), "method": method, "runtime_ms": float(np.median(t)),
                   "runtime_sd_ms": float(np.std(t)), **extra}
            rows.append(row)
            if progress is not None:
                progress(row)
    slopes = {}
    for method in ("exact", "ihgp"):
        sel = [r for r in rows if r["method"] == method]
        slopes[method] = loglog_slope([r["m"] for r in sel], [r["runtime_ms"] for r in sel])
    return BenchResult(rows=rows, slopes=slopes, base={"sigma2": s2, "ell": ell, "noise": noise})
