import os
import subprocess
import sys

import numpy as np
import pytest

from ihgp import _backend, grad, lik, ssm
from ihgp.exact import kalman_filter, rts_smoother
from ihgp.horizon import ihgp_infer, steady_gaussian_filter
from ihgp.steady import build_grid, solve_pp_dare

pytest.importorskip("ihgp._core")

SPEC = ssm.Sum((ssm.Matern(2.5, 1.0, 0.4), ssm.Product((ssm.Periodic(0.5, 1.0, 1.0, J=2), ssm.Matern(0.5, 1.0, 3.0)))))


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    y = np.sin(np.arange(2000) * 0.05) + 0.3 * rng.standard_normal(2000)
    y[500:520] = np.nan
    return ssm.discretize(ssm.build(SPEC), 0.05), y


def _both(fn):
    return fn("python"), fn("compiled")


def _close(a, b, tol=1e-11):
    for x, z in zip(a, b):
        np.testing.assert_allclose(np.asarray(x), np.asarray(z), rtol=tol, atol=tol)


def test_kalman_and_rts_parity(setup):
    model, y = setup

    def run(b):
        f = kalman_filter(model, y, 0.09, backend=b)
        m = rts_smoother(f, model, backend=b)
        return f.mf, f.Pf, f.Pp, f.log_lik, m.mean, m.var

    _close(*_both(run))


def test_ihgp_parity(setup):
    model, y = setup
    grid = build_grid(model)

    def run(b):
        r = ihgp_infer(model, grid, y, lik.gaussian(0.09), backend=b)
        return r.mean, r.var, r.log_lik

    # identical arithmetic order: results agree to the last bits
    _close(*_both(run), tol=1e-13)


def test_steady_filter_and_gradient_parity(setup):
    model, y = setup
    Pp = solve_pp_dare(model, 0.09)
    _close(*_both(lambda b: steady_gaussian_filter(model, Pp, y[:400], 0.09, backend=b)))
    theta = grad.HyperParams.from_model(SPEC, 0.09)
    _close(*_both(lambda b: grad.objective(SPEC, theta, y[:400], 0.05, backend=b)))


def test_default_backend_is_compiled():
    assert _backend.BACKEND == "compiled"
    assert _backend.get() is _backend.get("compiled")
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_env_var_forces_fallback():
    env = dict(os.environ, IHGP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from ihgp import _backend; print(_backend.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
