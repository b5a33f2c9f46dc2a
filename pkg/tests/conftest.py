import math

import numpy as np
import pytest
from scipy.special import iv

from ihgp import ssm

ACCEPTANCE = {}


def record(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------- oracles


def matern_cov(nu, sigma2, ell, tau):
    """Textbook half-integer Matern covariance."""
    r = np.abs(tau)
    if nu == 0.5:
        return sigma2 * np.exp(-r / ell)
    if nu == 1.5:
        a = math.sqrt(3.0) * r / ell
        return sigma2 * (1 + a) * np.exp(-a)
    a = math.sqrt(5.0) * r / ell
    return sigma2 * (1 + a + a * a / 3.0) * np.exp(-a)


def periodic_series_cov(sigma2, period, ell, J, tau):
    """Cosine series of the periodic kernel truncated after harmonic J."""
    x = ell ** -2
    j = np.arange(J + 1)
    w = iv(j, x) * np.where(j == 0, 1.0, 2.0)
    w = sigma2 * w / w.sum()
    return np.cos(np.multiply.outer(np.asarray(tau, float), 2 * np.pi * j / period)) @ w


def periodic_exact_cov(sigma2, period, ell, tau):
    return sigma2 * np.exp(-2 * np.sin(np.pi * np.asarray(tau) / period) ** 2 / ell ** 2)


def oracle_cov(spec, tau):
    """Covariance of a kernel tree; periodic leaves use their truncated series."""
    if isinstance(spec, ssm.Sum):
        return sum(oracle_cov(p, tau) for p in spec.parts)
    if isinstance(spec, ssm.Product):
        out = np.ones_like(np.asarray(tau, float))
        for p in spec.parts:
            out = out * oracle_cov(p, tau)
        return out
    if isinstance(spec, ssm.Periodic):
        return periodic_series_cov(spec.sigma2, spec.period, spec.ell, spec.J, tau)
    return matern_cov(spec.nu, spec.sigma2, spec.ell, tau)


def dense_gp(spec, t, y, noise):
    """Posterior marginals and log marginal likelihood of the dense GP (NaN = missing)."""
    t = np.asarray(t, float)
    obs = ~np.isnan(y)
    K = oracle_cov(spec, t[:, None] - t[None, :])
    Koo = K[np.ix_(obs, obs)] + noise * np.eye(obs.sum())
    c = np.linalg.cholesky(Koo)
    alpha = np.linalg.solve(c.T, np.linalg.solve(c, y[obs]))
    Kxo = K[:, obs]
    mean = Kxo @ alpha
    V = np.linalg.solve(c, Kxo.T)
    var = np.diag(K) - np.sum(V * V, axis=0)
    ll = -0.5 * y[obs] @ alpha - np.sum(np.log(np.diag(c))) - 0.5 * obs.sum() * math.log(2 * math.pi)
    return mean, var, ll


# ---------------------------------------------------------------- fixtures


@pytest.fixture(params=["python", "compiled"])
def backend(request):
    if request.param == "compiled":
        pytest.importorskip("ihgp._core")
    return request.param


@pytest.fixture
def sinc_data():
    rng = np.random.default_rng(42)
    n = 1000
    x = np.linspace(0.0, 12.0, n)
    y = np.sinc(x - 6.0) + math.sqrt(0.1) * rng.standard_normal(n)
    return x, y


def simulate_ssm(spec, n, dt, rng):
    """Exact sample of the latent process on an equidistant grid."""
    model = ssm.discretize(ssm.build(spec), dt)
    x = rng.multivariate_normal(np.zeros(model.m), model.P0)
    cq = np.linalg.cholesky(model.Q + 1e-14 * np.eye(model.m))
    out = np.empty(n)
    for i in range(n):
        out[i] = model.h @ x
        x = model.A @ x + cq @ rng.standard_normal(model.m)
    return out


def random_spec(rng, max_m=6):
    """Random Matern sum/product tree with state dimension at most ``max_m``."""
    while True:
        kind = rng.integers(4)
        leaf = lambda: ssm.Matern(float(rng.choice([0.5, 1.5, 2.5])), float(rng.uniform(0.3, 2.0)),
                                  float(rng.uniform(0.3, 3.0)))
        if kind == 0:
            spec = leaf()
        elif kind == 1:
            spec = ssm.Sum((leaf(), leaf()))
        elif kind == 2:
            spec = ssm.Product((leaf(), leaf()))
        else:
            spec = ssm.Sum((ssm.Matern(0.5, float(rng.uniform(0.3, 1)), float(rng.uniform(0.5, 2))),
                            ssm.Product((ssm.Periodic(float(rng.uniform(0.5, 1.5)), float(rng.uniform(1, 3)),
                                                      float(rng.uniform(0.8, 2.0)), J=1),
                                         ssm.Matern(0.5, 1.0, float(rng.uniform(2, 5)))))))
        if ssm.build(spec).m <= max_m:
            return spec
