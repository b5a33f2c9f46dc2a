import json
import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from ihgp import ssm
from ihgp.errors import ParameterDomainError, StabilityError

from conftest import matern_cov, oracle_cov, periodic_exact_cov, periodic_series_cov


def reconstruct(sde, tau):
    return np.array([sde.h @ sla.expm(sde.F * t) @ sde.Pinf @ sde.h for t in np.atleast_1d(tau)])


def test_matern32_closed_form():
    sde = ssm.build_matern(1.5, 1.0, 1.0)
    assert np.allclose(sde.F, [[0, 1], [-3, -2 * math.sqrt(3)]], atol=1e-14)
    assert sde.Qc[0, 0] == pytest.approx(4 * 3 ** 1.5, rel=1e-14)
    assert np.allclose(sde.Pinf, np.diag([1.0, 3.0]), atol=1e-14)
    assert np.array_equal(sde.h, [1.0, 0.0])


def test_matern12_is_ou():
    sde = ssm.build_matern(0.5, 1.0, 1.0)
    assert sde.m == 1
    assert sde.F[0, 0] == pytest.approx(-1.0)
    assert sde.Qc[0, 0] == pytest.approx(2.0)
    assert sde.Pinf[0, 0] == pytest.approx(1.0)
    assert 2 * sde.F[0, 0] * sde.Pinf[0, 0] + sde.Qc[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_matern52_lyapunov_against_scipy():
    sde = ssm.build_matern(2.5, 2.0, 0.5)
    assert sde.m == 3
    ref = sla.solve_continuous_lyapunov(sde.F, -sde.L @ sde.Qc @ sde.L.T)
    assert np.allclose(sde.Pinf, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
    assert sde.lyapunov_residual() <= 1e-9 * np.linalg.norm(sde.L @ sde.Qc @ sde.L.T)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
@pytest.mark.parametrize("ell", [0.3, 1.0, 4.0])
def test_matern_reconstruction(nu, ell):
    sde = ssm.build_matern(nu, 1.7, ell)
    tau = np.linspace(0, 3 * ell, 10)
    assert np.allclose(reconstruct(sde, tau), matern_cov(nu, 1.7, ell, tau), rtol=1e-9, atol=1e-12)


def test_nonpositive_hyperparameters_rejected():
    for bad in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(ParameterDomainError):
            ssm.build_matern(1.5, bad, 1.0)
        with pytest.raises(ParameterDomainError):
            ssm.Matern(1.5, 1.0, bad)
    with pytest.raises(ParameterDomainError):
        ssm.Matern(1.0, 1.0, 1.0)
    with pytest.raises(ParameterDomainError):
        ssm.Periodic(1.0, 1.0, 1.0, J=0)


def test_periodic_single_harmonic_spectrum():
    sde = ssm.build_periodic(1.0, 1.0, J=1)
    eig = np.linalg.eigvals(sde.F)
    nonzero = eig[np.abs(eig) > 1e-12]
    assert np.allclose(np.sort(nonzero.imag), [-2 * np.pi, 2 * np.pi])
    assert np.allclose(nonzero.real, 0.0)


@pytest.mark.parametrize("J", [1, 3, 6, 14])
def test_periodic_variance_normalised(J):
    sde = ssm.build_periodic(2.5, 1.3, J=J, ell=0.7)
    assert sde.h @ sde.Pinf @ sde.h == pytest.approx(2.5, rel=1e-12)


def test_periodic_matches_canonical_kernel():
    sde = ssm.build_periodic(1.0, 1.0, J=6)
    tau = np.array([0.0, 0.25, 0.5])
    assert np.allclose(reconstruct(sde, tau), periodic_exact_cov(1.0, 1.0, 1.0, tau), atol=1e-3)
    assert np.allclose(reconstruct(sde, tau), periodic_series_cov(1.0, 1.0, 1.0, 6, tau), atol=1e-12)


def test_periodic_truncation_error_shrinks_with_J():
    tau = np.linspace(0, 2, 21)
    errs = [np.abs(reconstruct(ssm.build_periodic(1.0, 1.0, J=J, ell=0.5), tau)
                   - periodic_exact_cov(1.0, 1.0, 0.5, tau)).max() for J in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]


def test_sum_and_product_structure():
    a, b = ssm.Matern(1.5, 0.7, 1.0), ssm.Matern(1.5, 1.3, 0.4)
    s = ssm.build(ssm.Sum((a, b)))
    assert s.m == 4
    assert s.h @ s.Pinf @ s.h == pytest.approx(2.0)
    p = ssm.build(ssm.Product((a, b)))
    assert p.m == 4
    assert p.h @ p.Pinf @ p.h == pytest.approx(0.7 * 1.3)


def test_airline_sized_prior():
    # six harmonics plus the constant term: 14 states, 28 after the product with a Matern-3/2
    per = ssm.Periodic(1.0, 1.0, 1.0, J=6)
    assert ssm.build(per).m == 14
    prod = ssm.Product((per, ssm.Matern(1.5, 1.0, 10.0)))
    assert ssm.build(prod).m == 28
    full = ssm.Sum((ssm.Matern(2.5, 1.0, 5.0), prod, ssm.Product((per, ssm.Matern(1.5, 1.0, 3.0)))))
    assert ssm.build(full).m == 59


def test_product_with_near_constant_kernel_scales_covariance():
    base = ssm.Matern(1.5, 1.0, 1.0)
    const = ssm.Matern(0.5, 2.5, 1e7)
    sde = ssm.build(ssm.Product((base, const)))
    tau = np.linspace(0, 3, 10)
    assert np.allclose(reconstruct(sde, tau), 2.5 * matern_cov(1.5, 1.0, 1.0, tau), rtol=1e-6)


@pytest.mark.parametrize("spec", [
    ssm.Sum((ssm.Matern(0.5, 1.0, 1.0), ssm.Matern(2.5, 0.5, 2.0))),
    ssm.Product((ssm.Matern(1.5, 1.0, 1.0), ssm.Matern(0.5, 2.0, 3.0))),
    ssm.Product((ssm.Periodic(1.0, 2.0, 1.0, J=5), ssm.Matern(1.5, 1.0, 4.0))),
    ssm.Sum((ssm.Matern(1.5, 1.0, 1.0), ssm.Product((ssm.Periodic(0.5, 1.0, 1.2, J=4),
                                                      ssm.Matern(2.5, 1.0, 2.0))))),
])
def test_composite_reconstruction_and_lyapunov(spec):
    sde = ssm.build(spec)
    tau = np.linspace(0, 4, 10)
    direct = oracle_cov(spec, tau)
    assert np.allclose(reconstruct(sde, tau), direct, rtol=1e-3, atol=1e-8)
    D = sde.L @ sde.Qc @ sde.L.T
    assert sde.lyapunov_residual() <= 1e-9 * max(np.linalg.norm(D), 1e-300)
    assert np.allclose(sde.Pinf, sde.Pinf.T, rtol=1e-12, atol=0)


def test_product_pinf_against_kronecker_vec_oracle():
    spec = ssm.Product((ssm.Matern(1.5, 1.0, 1.0), ssm.Matern(2.5, 2.0, 0.7)))
    sde = ssm.build(spec)
    m = sde.m
    D = sde.L @ sde.Qc @ sde.L.T
    # vec(F P + P F') = (I (x) F + F (x) I) vec(P)
    big = np.kron(np.eye(m), sde.F) + np.kron(sde.F, np.eye(m))
    P = np.linalg.solve(big, -D.reshape(-1, order="F")).reshape(m, m, order="F")
    assert np.allclose(P, sde.Pinf, atol=1e-10)


def test_stationary_covariance():
    assert ssm.stationary_covariance([[-1.0]], [[1.0]], [[2.0]])[0, 0] == pytest.approx(1.0)
    F = np.array([[-1.0, 0.3], [0.0, -2.0]])
    assert np.allclose(ssm.stationary_covariance(F, np.eye(2), np.zeros((2, 2))), 0.0)
    with pytest.raises(StabilityError):
        ssm.stationary_covariance([[0.1]], [[1.0]], [[1.0]])


def test_discretize_limits():
    sde = ssm.build_matern(1.5, 1.0, 1.0)
    small = ssm.discretize(sde, 1e-10)
    assert np.allclose(small.A, np.eye(2), atol=1e-9)
    assert np.abs(small.Q).max() < 1e-8
    big = ssm.discretize(sde, 1e6)
    assert np.abs(big.A).max() <= 1e-8
    assert np.allclose(big.Q, sde.Pinf, atol=1e-8)
    ou = ssm.discretize(ssm.build_matern(0.5, 1.0, 2.0), 1.0)
    assert ou.A[0, 0] == pytest.approx(math.exp(-0.5), rel=1e-14)
    assert ou.Q[0, 0] == pytest.approx(1 - math.exp(-1), rel=1e-14)
    with pytest.raises(ParameterDomainError):
        ssm.discretize(sde, 0.0)


def test_discretize_semigroup_and_q_psd():
    sde = ssm.build(ssm.Sum((ssm.Matern(2.5, 1.0, 0.8), ssm.Product((ssm.Periodic(1.0, 1.0, 1.0, J=3),
                                                                     ssm.Matern(1.5, 1.0, 2.0))))))
    d1, d2 = ssm.discretize(sde, 0.13), ssm.discretize(sde, 0.26)
    assert np.allclose(d1.A @ d1.A, d2.A, atol=1e-10)
    assert np.allclose(d1.Q, sde.Pinf - d1.A @ sde.Pinf @ d1.A.T, rtol=1e-9, atol=1e-12)
    assert np.linalg.eigvalsh(d1.Q).min() >= -1e-10 * np.trace(d1.Q)
    assert np.max(np.abs(np.linalg.eigvals(d1.A))) <= 1.0 + 1e-12


def test_model_arrays_are_read_only():
    sde = ssm.build_matern(1.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        sde.F[0, 0] = 5.0


def test_parse_kernel_document():
    doc = {"sum": [{"matern": {"nu": 1.5, "sigma2": 1.0, "ell": 1.0}},
                   {"product": [{"periodic": {"sigma2": 1.0, "period": 1.0, "ell": 1.0, "J": 3}},
                                {"matern": {"nu": 0.5, "sigma2": 2.0, "ell": 4.0}}]}]}
    spec = ssm.parse_kernel(json.dumps(doc))
    assert ssm.kernel_to_dict(spec) == doc
    with pytest.raises(ParameterDomainError):
        ssm.parse_kernel({"rbf": {}})
    with pytest.raises(ParameterDomainError):
        ssm.parse_kernel({"matern": {"ell": -1}})


def test_kernel_param_names_and_replacement():
    spec = ssm.Sum((ssm.Matern(1.5, 1.0, 2.0), ssm.Product((ssm.Periodic(1.0, 3.0, 1.0), ssm.Matern(0.5, 1.0, 5.0)))))
    params = ssm.kernel_params(spec)
    assert list(params) == ["matern0.sigma2", "matern0.ell", "periodic1.sigma2", "periodic1.period",
                            "periodic1.ell", "matern2.sigma2", "matern2.ell"]
    new = ssm.with_kernel_params(spec, {"matern2.ell": 7.0, "periodic1.period": 2.0})
    assert ssm.kernel_params(new)["matern2.ell"] == 7.0
    assert ssm.kernel_params(new)["periodic1.period"] == 2.0
    assert ssm.kernel_params(new)["matern0.ell"] == 2.0


@pytest.mark.parametrize("spec", [
    ssm.Matern(0.5, 1.2, 0.7), ssm.Matern(1.5, 0.8, 1.3), ssm.Matern(2.5, 2.0, 0.5),
    ssm.Product((ssm.Periodic(1.1, 2.0, 0.9, J=3), ssm.Matern(1.5, 1.0, 3.0))),
])
def test_log_derivatives_against_finite_differences(spec):
    _, der = ssm.build_with_derivatives(spec)
    params = ssm.kernel_params(spec)
    for k, name in enumerate(der.names):
        def at(d):
            vals = dict(params)
            vals[name] = params[name] * math.exp(d)
            return ssm.build(ssm.with_kernel_params(spec, vals))
        h = 1e-6
        hi, lo = at(h), at(-h)
        dF = (hi.F - lo.F) / (2 * h)
        dP = (hi.Pinf - lo.Pinf) / (2 * h)
        assert np.allclose(der.dF[k], dF, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(dF).max()))
        assert np.allclose(der.dPinf[k], dP, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(dP).max()))


@settings(max_examples=40, deadline=None)
@given(nu=st.sampled_from([0.5, 1.5, 2.5]), s2=st.floats(0.05, 20.0), ell=st.floats(0.05, 20.0),
       dt=st.floats(1e-3, 5.0))
def test_discrete_model_invariants(nu, s2, ell, dt):
    sde = ssm.build_matern(nu, s2, ell)
    d = ssm.discretize(sde, dt)
    assert np.max(np.abs(np.linalg.eigvals(d.A))) < 1.0
    assert np.allclose(d.Q, d.Q.T)
    assert np.linalg.eigvalsh(d.Q).min() >= -1e-10 * np.trace(d.Q)
    assert sde.lyapunov_residual() <= 1e-9 * np.linalg.norm(sde.L @ sde.Qc @ sde.L.T)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.5, 1.5, 2.5]), st.floats(0.1, 5), st.floats(0.1, 5)),
                min_size=1, max_size=3))
def test_kernel_dict_roundtrip(leaves):
    spec = ssm.Sum(tuple(ssm.Matern(*leaf) for leaf in leaves))
    assert ssm.parse_kernel(ssm.kernel_to_dict(spec)) == spec
