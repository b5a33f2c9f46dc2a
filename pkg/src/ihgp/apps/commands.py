"""Implementations behind the ``ihgp`` subcommands.

Each command takes a :class:`RunConfig`, input paths and an output
directory, writes its files and returns a small summary dict.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from .. import _backend, grad, ssm
from ..errors import ConfigurationError, InputError
from ..exact import exact_infer
from ..horizon import ihgp_infer
from ..lgcp import Z95, bin_events, fit_intensity
from ..lik import gaussian
from ..steady import build_grid
from .bench import run_bench
from .config import RunConfig
from .data import CsvStream, read_series, read_timestamps, write_csv
from .gen import gen_sinc


def _out(out_dir) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _need(data):
    if data is None:
        raise ConfigurationError("this command needs --data")
    return data


def cmd_infer(cfg: RunConfig, data, out_dir, method=None) -> dict:
    cfg.require("infer")
    method = method or cfg.method
    t, y, dt = read_series(_need(data), cfg.dt)
    model = ssm.discretize(ssm.build(cfg.kernel), dt)
    setup_ms = 0.0
    diagnostics = {}
    t0 = time.perf_counter()
    if method == "ihgp":
        grid = build_grid(model, **cfg.grid)
        setup_ms = 1e3 * (time.perf_counter() - t0)
        res = ihgp_infer(model, grid, y, cfg.likelihood)
        marg, diagnostics = res.marginals, res.diagnostics
    elif method == "exact":
        marg = exact_infer(model, y, cfg.likelihood)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    runtime_ms = 1e3 * (time.perf_counter() - t0)
    if not math.isfinite(marg.log_lik):
        raise InputError("log likelihood is not finite")
    sd = np.sqrt(marg.var)
    out = _out(out_dir)
    write_csv(out / "results.csv", ["t", "y", "mean", "var", "lower95", "upper95"],
              [t, y, marg.mean, marg.var, marg.mean - Z95 * sd, marg.mean + Z95 * sd])
    metrics = {"nll": -marg.log_lik, "runtime_ms": runtime_ms, "setup_ms": setup_ms, "method": method,
               "m": model.m, "n": int(y.size), "dt": dt, "likelihood": cfg.likelihood.kind,
               "backend": _backend.BACKEND, "diagnostics": diagnostics}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_fit(cfg: RunConfig, data, out_dir) -> dict:
    cfg.require("fit")
    _, y, dt = read_series(_need(data), cfg.dt)
    opt = cfg.optimizer
    theta0 = grad.HyperParams.from_model(cfg.kernel, cfg.likelihood.sigma2, fixed=opt.get("fixed", ()))
    res = grad.fit(cfg.kernel, theta0, y, dt, max_iter=int(opt["max_iter"]), gtol=float(opt["gtol"]))
    spec, noise = res.theta.apply(cfg.kernel)
    doc = {"kernel": ssm.kernel_to_dict(spec), "likelihood": {"name": "gaussian", "sigma2": noise},
           **res.theta.to_dict(), "nll": res.nll, "grad_inf": float(np.max(np.abs(res.grad[res.theta.free_mask]),
                                                                         initial=0.0)),
           "n_iter": res.n_iter, "converged": res.converged, "message": res.message, "trace": res.trace}
    _write_json(_out(out_dir) / "theta.json", doc)
    return doc


def cmd_online(cfg: RunConfig, data, out_dir) -> dict:
    cfg.require("online")
    t, y, dt = read_series(_need(data), cfg.dt)
    o = cfg.online
    window, step = int(o["window"]), int(o["step"])
    if window > y.size:
        raise InputError(f"window {window} longer than the stream ({y.size} samples)")
    theta = grad.HyperParams.from_model(cfg.kernel, cfg.likelihood.sigma2, fixed=cfg.optimizer.get("fixed", ()))
    eta = np.asarray(o["eta"], dtype=float)
    if eta.ndim and eta.size != len(theta.names):
        raise ConfigurationError(f"eta has {eta.size} entries, parameters are {list(theta.names)}")
    learner = grad.OnlineLearner(cfg.kernel, theta, dt, eta)
    out = _out(out_dir)
    header = ["step", "t", "accepted", "window_nll", "wall_ms", *theta.names]
    steps = 0
    grid_key, grid = None, None
    with CsvStream(out / "theta_trajectory.csv", header) as traj, \
            CsvStream(out / "predictions.csv", ["step", "t", "mean", "var"]) as pred:
        for start in range(0, y.size - window + 1, step):
            t0 = time.perf_counter()
            win = y[start:start + window]
            info = learner.step(win)
            _, model, noise = learner.current_model()
            key = learner.theta.theta.tobytes()
            if key != grid_key:
                grid, grid_key = build_grid(model, **cfg.grid), key
            post = ihgp_infer(model, grid, win, gaussian(noise))
            wall = 1e3 * (time.perf_counter() - t0)
            steps += 1
            tend = t[start + window - 1]
            traj.write([str(steps), tend, "1" if info.accepted else "0", info.nll, wall,
                        *np.exp(learner.theta.theta)])
            pred.write([str(steps), tend, post.mean[-1], post.var[-1]])
    summary = {"steps": steps, "final": learner.theta.to_dict()}
    _write_json(out / "online_summary.json", summary)
    return summary


def cmd_lgcp(cfg: RunConfig, data, out_dir, method=None) -> dict:
    cfg.require("lgcp")
    method = method or cfg.method
    ts = read_timestamps(_need(data))
    lg = cfg.lgcp
    if ts.size == 0 and (lg.get("t0") is None or lg.get("t1") is None):
        raise InputError("no events and no explicit t0/t1")
    t0 = float(lg["t0"]) if lg.get("t0") is not None else float(ts.min())
    t1 = float(lg["t1"]) if lg.get("t1") is not None else float(np.nextafter(ts.max(), np.inf))
    width = float(lg["bin_width"]) if lg.get("bin_width") else (t1 - t0) / int(lg["n_bins"])
    counts = bin_events(ts, t0, t1, width)
    started = time.perf_counter()
    post = fit_intensity(counts, cfg.kernel, use_ihgp=(method == "ihgp"), grid_opts=cfg.grid)
    runtime_ms = 1e3 * (time.perf_counter() - started)
    out = _out(out_dir)
    write_csv(out / "intensity.csv", ["t", "count", "median", "lower95", "upper95"],
              [post.t_hat, post.counts, post.median, post.lower95, post.upper95])
    metrics = {"nll": -post.log_lik, "runtime_ms": runtime_ms, "method": method, "n_bins": counts.n,
               "bin_width": counts.bin_width, "events": int(counts.y.sum()), "dropped": counts.dropped,
               "units": "intensity columns are events per bin; divide by bin_width for a rate per time unit"}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_bench(cfg: RunConfig, out_dir, progress=None) -> dict:
    cfg.require("bench")
    b = cfg.bench
    out = _out(out_dir)
    res = run_bench(b["m_list"], n=int(b["n"]), repetitions=int(b["repetitions"]), seed=cfg.seed,
                    noise_sigma2=float(b["noise_sigma2"]), progress=progress)
    cols = ["m", "method", "runtime_ms", "runtime_sd_ms", "rmse_vs_exact", "setup_ms"]
    with CsvStream(out / "bench.csv", cols) as fh:
        for r in res.rows:
            fh.write([str(r["m"]), r["method"], *(r[c] for c in cols[2:])])
    slopes = {k: (v if math.isfinite(v) else None) for k, v in res.slopes.items()}
    metrics = {"slopes": slopes, "slope_m_min": 20, "base_hyperparameters": res.base,
               "max_rmse_vs_exact": max(r["rmse_vs_exact"] for r in res.rows), "backend": _backend.BACKEND}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_gen(cfg: RunConfig, out_dir) -> dict:
    cfg.require("gen")
    g = cfg.gen
    d = gen_sinc(int(g["n"]), seed=cfg.seed, mode=g["mode"], noise_var=float(g["noise_var"]),
                 x_min=float(g["x_min"]), x_max=float(g["x_max"]))
    path = _out(out_dir) / "data.csv"
    write_csv(path, ["t", "y", "f"], [d.x, d.y, d.f])
    return {"path": str(path), "n": int(d.x.size), "mode": d.mode}
