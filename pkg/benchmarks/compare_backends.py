"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/compare_backends.py [--n 20000] [--m 2 10 30] [--reps 3]

Prints one row per (kernel, m) with the median wall time of each backend
and the speed-up, and checks that both backends return the same numbers.
"""

import argparse
import time

import numpy as np

from ihgp import grad, lik, ssm
from ihgp.exact import kalman_filter, rts_smoother
from ihgp.horizon import ihgp_infer, steady_gaussian_filter
from ihgp.steady import build_grid, solve_pp_dare


def spec_for(m):
    return ssm.Sum(tuple(ssm.Matern(1.5, 1.0 / (m // 2), 1.0 + 0.1 * i) for i in range(m // 2)))


def median_ms(fn, reps):
    out, times = None, []
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(times)), out


def cases(m, y, dt):
    spec = spec_for(m)
    model = ssm.discretize(ssm.build(spec), dt)
    grid = build_grid(model, extras=(0.1,))
    Pp = solve_pp_dare(model, 0.1)
    theta = grad.HyperParams.from_model(spec, 0.1)
    sens = grad.model_sensitivities(spec, theta, dt)

    def kf_rts(b):
        f = kalman_filter(model, y, 0.1, store_predictive=False, backend=b)
        return rts_smoother(f, model, backend=b).mean

    return {
        "kalman+rts": kf_rts,
        "ihgp": lambda b: ihgp_infer(model, grid, y, lik.gaussian(0.1), backend=b).mean,
        "steady_filter": lambda b: steady_gaussian_filter(model, Pp, y, 0.1, backend=b)[0],
        "steady_grad": lambda b: grad.nll_gradient(sens, y, backend=b)[1],
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--m", type=int, nargs="+", default=[2, 10, 30])
    p.add_argument("--reps", type=int, default=3)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    dt = 12.0 / (args.n - 1)
    y = np.sinc(np.arange(args.n) * dt - 6.0) + np.sqrt(0.1) * rng.standard_normal(args.n)
    print(f"{'kernel':<14}{'m':>4}{'python ms':>12}{'compiled ms':>13}{'speed-up':>10}{'max diff':>11}")
    for m in args.m:
        for name, fn in cases(m, y, dt).items():
            tp, a = median_ms(lambda: fn("python"), args.reps)
            tc, b = median_ms(lambda: fn("compiled"), args.reps)
            diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
            print(f"{name:<14}{m:>4}{tp:>12.1f}{tc:>13.1f}{tp / tc:>10.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
