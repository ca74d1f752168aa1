import numpy as np
import pytest
from hypothesis import given, strategies as st

from blowup_lab.ou_feynman_kac import (
    KernelEstimate,
    OUBridgeConfig,
    bridge_covariance,
    continuum_variance,
    direct_kernel,
    fk_estimate,
    fk_gradient_check,
    fk_kernel,
    fk_weight,
    mean_path,
    mehler_apply,
    mehler_compose,
    mehler_kernel,
    sample_bridge,
)


def cfg(**kw):
    base = dict(alpha=0.5, sigma_start=0.0, tau_end=1.0, n_paths=2000, n_steps=64, seed=1)
    base.update(kw)
    return OUBridgeConfig(**base)


def green(u, v, r, alpha):
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    return np.sinh(alpha * lo) * np.sinh(alpha * (r - hi)) / (alpha * np.sinh(alpha * r))


# --- configuration ---------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(tau_end=0.0), dict(n_paths=0), dict(n_steps=0),
                                dict(dim=0), dict(cov_scale=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        cfg(**kw)


def test_estimate_validation():
    with pytest.raises(ValueError):
        KernelEstimate(np.nan, 0.0, 1)
    with pytest.raises(ValueError):
        KernelEstimate(1.0, -1.0, 1)


# --- mean path -----------------------------------------------------------------------------

def test_mean_path_endpoints_and_zero():
    s = np.linspace(0.5, 2.0, 7)
    w = mean_path(1.5, -0.7, s, 0.5, 2.0, 0.8)
    assert w[0, 0] == pytest.approx(-0.7) and w[-1, 0] == pytest.approx(1.5)
    assert np.all(mean_path(0.0, 0.0, s, 0.5, 2.0, 0.8) == 0)
    with pytest.raises(ValueError):
        mean_path(1.0, 1.0, [2.5], 0.5, 2.0, 0.8)


def test_mean_path_solves_the_ode():
    alpha, d = 0.8, 1e-4
    s = np.linspace(0.2, 1.8, 9)
    w = lambda t: mean_path([1.0, 2.0], [-1.0, 0.5], t, 0.0, 2.0, alpha)
    res = -(w(s + d) - 2 * w(s) + w(s - d)) / d**2 + alpha**2 * w(s)
    assert np.max(np.abs(res)) < 1e-5


# --- bridge statistics -----------------------------------------------------------------------

def test_bridge_is_pinned_and_centered():
    ens = sample_bridge(cfg(n_paths=20000, dim=2))
    assert ens.paths.shape == (20000, 65, 2)
    assert np.all(ens.paths[:, 0] == 0) and np.all(ens.paths[:, -1] == 0)
    mean = ens.paths.mean(axis=0)
    se = ens.paths.std(axis=0).max() / np.sqrt(20000)
    assert np.max(np.abs(mean)) < 5 * se


def test_sample_covariance_matches_target():
    c = cfg(n_paths=40000, n_steps=16)
    X = sample_bridge(c).paths[:, 1:-1, 0]
    C = bridge_covariance(c)
    emp = X.T @ X / X.shape[0]
    assert np.max(np.abs(emp - C)) < 0.05 * np.max(np.diag(C))


def test_discrete_covariance_converges_to_green_function():
    errs = []
    for m in (16, 32, 64):
        c = cfg(n_steps=m, alpha=1.5, tau_end=2.0)
        s = c.times[1:-1]
        ref = c.cov_scale * green(s[:, None], s[None, :], c.r, c.alpha)
        errs.append(np.max(np.abs(bridge_covariance(c) - ref)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8) and errs[-1] < 1e-3


def test_continuum_variance_diagonal_and_scaling():
    c = cfg(alpha=1.3, tau_end=2.0)
    s = np.linspace(0, 2, 11)
    assert np.allclose(continuum_variance(s, c), 2 * green(s, s, 2.0, 1.3), atol=1e-15)
    # the midpoint variance is cov_scale/(2α) up to e^{-αr}
    for a in (5.0, 10.0, 20.0):
        cc = cfg(alpha=a, tau_end=2.0)
        assert a * continuum_variance(1.0, cc) == pytest.approx(1.0, abs=1e-4)


# --- weights ---------------------------------------------------------------------------------

def test_zero_and_constant_potential():
    ens = sample_bridge(cfg(n_paths=300))
    zero = fk_weight(ens, lambda z, s: np.zeros(z.shape[:-1]), 0.2, 0.1)
    assert zero.mean == 1.0 and zero.std_error == 0.0
    kappa = -0.7
    const = fk_weight(ens, lambda z, s: np.full(z.shape[:-1], kappa))
    assert const.mean == pytest.approx(np.exp(kappa * 1.0), rel=1e-14) and const.std_error == 0.0


def test_time_dependent_potential_through_times():
    # V = s integrates to r²/2 on [0, r]
    ens = sample_bridge(cfg(n_paths=50, tau_end=1.5))
    est = fk_weight(ens, lambda z, s: np.broadcast_to(s, z.shape[:-1]))
    assert est.mean == pytest.approx(np.exp(1.5**2 / 2), rel=1e-12)


def test_streaming_equals_batch():
    c = cfg(n_paths=2500)
    V = lambda z, s: 0.3 * np.cos(z[..., 0])
    a = fk_estimate(c, V, 0.3, -0.4)
    b = fk_weight(sample_bridge(c), V, 0.3, -0.4)
    assert a.mean == pytest.approx(b.mean, rel=1e-14) and a.std_error == pytest.approx(b.std_error, rel=1e-12)


def test_seed_determinism_and_chunk_prefix():
    one = sample_bridge(cfg(n_paths=2500, seed=7)).paths
    two = sample_bridge(cfg(n_paths=2500, seed=7)).paths
    assert np.array_equal(one, two)
    short = sample_bridge(cfg(n_paths=1000, seed=7)).paths
    assert np.array_equal(short, one[:1000])
    assert not np.array_equal(sample_bridge(cfg(n_paths=1000, seed=8)).paths, short)


def test_standard_error_scales_like_inverse_sqrt():
    V = lambda z, s: 0.3 * np.cos(z[..., 0])
    ns = [250, 1000, 4000, 16000]
    ses = [fk_estimate(cfg(n_paths=n), V, 0.3, -0.4).std_error for n in ns]
    assert np.polyfit(np.log(ns), np.log(ses), 1)[0] == pytest.approx(-0.5, abs=0.1)


@pytest.mark.parametrize("V", [lambda z: -0.01 * z**2, lambda z: 0.3 * np.cos(z)])
def test_kernel_agrees_with_grid_reference(V):
    c = cfg(n_paths=10000, n_steps=256)
    est = fk_kernel(c, lambda z, s: V(z[..., 0]), 0.3, -0.4)
    ref = direct_kernel(0.3, -0.4, 1.0, 0.5, V)
    assert abs(est.mean - ref) < 3 * est.std_error + 1e-3 * abs(ref)


def test_grid_reference_without_potential_is_mehler():
    ref = direct_kernel(0.3, -0.4, 1.0, 0.5, lambda z: 0 * z)
    assert ref == pytest.approx(float(mehler_kernel(0.3, -0.4, 1.0, 0.5)), rel=1e-5)


# --- gradients -------------------------------------------------------------------------------------

def test_constant_potential_has_zero_gradient():
    rep = fk_gradient_check(0.3, -0.4, lambda z, s: np.full(z.shape[:-1], 0.2), 0.0, cfg(n_paths=500))
    assert np.all(rep.gradient == 0) and rep.constant == 0 and not rep.inconclusive


def test_gradient_constant_is_uniform_in_strength():
    consts = []
    for beta in (0.1, 0.2, 0.4, 0.8):
        V = lambda z, s, b=beta: -b * z[..., 0] ** 2 / (1 + z[..., 0] ** 2)
        rep = fk_gradient_check(0.3, -0.4, V, beta * 3 * np.sqrt(3) / 8, cfg(n_paths=4000, seed=3))
        assert not rep.inconclusive
        consts.append(rep.constant)
    assert max(consts) < 1.0 and max(consts) / min(consts) < 1.5


def test_gradient_flags_noise():
    V = lambda z, s: -z[..., 0] ** 2 / (1 + z[..., 0] ** 2)
    rep = fk_gradient_check(0.3, -0.4, V, 1e-6, cfg(n_paths=20))
    assert rep.inconclusive and rep.notes


# --- Mehler kernel -----------------------------------------------------------------------------------

def test_mehler_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        mehler_kernel(0.0, 0.0, 0.0, 0.5)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 3.0), st.floats(0.2, 2.0))
def test_mehler_positive_with_known_mass(x, y, r, alpha):
    assert float(mehler_kernel(x, y, r, alpha)) > 0
    mass = mehler_apply(lambda w: np.ones(w.shape[:-1]), [x], r, alpha)[0]
    assert mass == pytest.approx(np.exp(2 * alpha * r), rel=1e-13)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 1.5), st.floats(0.1, 1.5))
def test_chapman_kolmogorov(x, y, r1, r2):
    alpha = 0.5
    composed = mehler_compose([x], [y], r1, r2, alpha)
    assert composed == pytest.approx(float(mehler_kernel(x, y, r1 + r2, alpha)), rel=1e-8)


@pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
def test_mehler_acts_diagonally_on_hermite_polynomials(m):
    alpha, r = 0.5, 0.8
    He = np.polynomial.hermite_e.HermiteE.basis(m)
    f = lambda w: He(np.sqrt(alpha) * w[..., 0])
    x = np.linspace(-2, 2, 5)[:, None]
    out = mehler_apply(f, x, r, alpha)
    assert np.allclose(out, np.exp(-r * alpha * (m - 2)) * f(x), atol=1e-12)


def test_mehler_solves_the_backward_equation():
    # ∂_r K = -L0 K in the evaluation variable x
    alpha, r, y, d = 0.5, 0.7, -0.4, 1e-4
    K = lambda x, rr: float(mehler_kernel(x, y, rr, alpha))
    for x in (-1.0, 0.3, 1.2):
        dr = (K(x, r + d) - K(x, r - d)) / (2 * d)
        dxx = (K(x + d, r) - 2 * K(x, r) + K(x - d, r)) / d**2
        dx = (K(x + d, r) - K(x - d, r)) / (2 * d)
        assert dr == pytest.approx(dxx - alpha * x * dx + 2 * alpha * K(x, r), abs=1e-5)
