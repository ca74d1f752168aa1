from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blowup_lab.blowup_frame import ModulationState
from blowup_lab.modulation import (
    ModConstants,
    beta,
    beta_tilde,
    gamma_terms,
    integrate_modulation,
    majorants,
    modulation_rhs,
    slaved_a,
    weighted_sup,
)
from blowup_lab.pde_core import Field
from blowup_lab.profile_manifold import SplitResult, V_values


def spd(vals, n, shift=0.01):
    A = np.array(vals[: n * n]).reshape(n, n)
    return A @ A.T + shift * np.eye(n)


# --- right-hand side -------------------------------------------------------------------

def test_rhs_example():
    a_dot, b_dot = modulation_rhs(0.45, [[0.1]], 3.0)
    # c = 0.95: a_τ = 0.95 (0.05 - 0.1) and b_τ = -3(0.01) - 0.01 + 0.05(0.1)
    assert a_dot == pytest.approx(-0.0475, rel=1e-14)
    assert b_dot[0, 0] == pytest.approx(-0.035, rel=1e-14)


def test_rhs_at_rest():
    a_dot, b_dot = modulation_rhs(0.5, np.zeros((2, 2)), 3.0)
    assert a_dot == 0 and np.all(b_dot == 0)


@given(st.lists(st.floats(-0.5, 0.5), min_size=9, max_size=9), st.sampled_from([1, 2, 3]),
       st.sampled_from([2.0, 3.0, 5.0]))
def test_slaving_cancels_linear_terms(vals, n, p):
    b = spd(vals, n)
    _, b_dot = modulation_rhs(slaved_a(b, p), b, p)
    assert np.allclose(b_dot, -ModConstants(p).quad_coeff * b @ b, rtol=1e-12, atol=1e-14)


# --- comparison flow ------------------------------------------------------------------------

def test_beta_tilde_examples():
    # 4p/(p-1)² = 3 for p = 3, so β̃ = (10 + 3τ)^{-1} I from 0.1 I
    assert np.allclose(beta_tilde(10 / 3, 0.1 * np.eye(2), 3.0), 0.05 * np.eye(2), rtol=1e-14)
    assert beta(0.0, [[0.2, 0.0], [0.0, 0.1]], 3.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        beta_tilde(1.0, [[0.0]], 3.0)


@given(st.lists(st.floats(-0.5, 0.5), min_size=9, max_size=9), st.sampled_from([1, 2, 3]),
       st.floats(0, 50), st.floats(0, 50))
def test_beta_tilde_semigroup(vals, n, t1, t2):
    b0 = spd(vals, n)
    one = beta_tilde(t1 + t2, b0, 3.0)
    two = beta_tilde(t2, beta_tilde(t1, b0, 3.0), 3.0)
    assert np.allclose(one, two, rtol=1e-9, atol=1e-14)


def test_beta_tilde_solves_riccati():
    b0, p, t, d = np.array([[0.08, 0.01], [0.01, 0.04]]), 3.0, 2.0, 1e-4
    deriv = (beta_tilde(t + d, b0, p) - beta_tilde(t - d, b0, p)) / (2 * d)
    bt = beta_tilde(t, b0, p)
    assert np.allclose(deriv, -ModConstants(p).quad_coeff * bt @ bt, atol=1e-9)


@pytest.mark.parametrize("n", [1, 2])
def test_slaved_rk4_tracks_beta_tilde(n):
    b0 = 0.05 * np.eye(n) + 0.01 * (np.ones((n, n)) - np.eye(n))
    path = integrate_modulation(0.0, b0, 3.0, 100.0, dtau=0.01, slaved=True, record_every=100)
    errs = [np.linalg.norm(b - beta_tilde(t, b0, 3.0), 2) / np.linalg.norm(beta_tilde(t, b0, 3.0), 2)
            for t, b in zip(path.taus, path.b)]
    assert max(errs) <= 1e-8 and path.psd_ok


def test_zero_b_relaxes_a_to_half():
    path = integrate_modulation(0.3, [[0.0]], 3.0, 30.0)
    assert abs(path.a[-1] - 0.5) < 1e-10 and np.all(path.b == 0)


@lru_cache(maxsize=None)
def full_flow():
    return integrate_modulation(0.5, [[0.05]], 3.0, 1000.0, dtau=0.01, record_every=100)


def test_full_flow_attains_universal_rate():
    # off the slaving manifold (a0 = 1/2): τβ → (p-1)²/(4p) = 1/3
    path = full_flow()
    assert path.psd_ok and path.attracting
    assert path.tau_beta()[-1] == pytest.approx(1 / 3, rel=0.02)


def test_full_flow_majorants_settle():
    p = 3.0
    path = full_flow()
    kappa = ModConstants(p).kappa
    bt = np.array([beta(t, [[0.05]], p) for t in path.taus])
    B = np.abs(path.b[:, 0, 0] - bt) / bt ** (1 + kappa)
    A = np.abs(path.a - [slaved_a(b, p) for b in path.b]) / bt**2
    assert np.all(np.diff(B[200:]) < 0) and np.all(np.diff(A[200:]) < 0)
    assert B.max() < 0.2 and A[-1] < 3.1


def test_psd_violation_is_flagged():
    path = integrate_modulation(0.0, [[1.0]], 3.0, 10.0, dtau=2.0)
    assert not path.psd_ok and path.notes and path.taus[-1] == 2.0


# --- forcing ---------------------------------------------------------------------------------

def forcing_by_residual(a, b, a_dot, b_dot, p, y, d=1e-3):
    # ΔV - a y·∇V - 2aV/(p-1) + V^p - ∂τV, all derivatives by central differences
    n = y.shape[-1]
    V = lambda a_, b_, pts: V_values(a_, b_, p, pts)
    v = V(a, b, y)
    lap = np.zeros_like(v)
    drift = np.zeros_like(v)
    for i in range(n):
        e = np.zeros(n)
        e[i] = d
        vp, vm = V(a, b, y + e), V(a, b, y - e)
        lap += (vp - 2 * v + vm) / d**2
        drift += y[..., i] * (vp - vm) / (2 * d)
    dt = (V(a + d * a_dot, b + d * b_dot, y) - V(a - d * a_dot, b - d * b_dot, y)) / (2 * d)
    return lap - a * drift - 2 * a * v / (p - 1) + v**p - dt


@pytest.mark.parametrize("n", [1, 2])
def test_forcing_is_the_profile_residual(n):
    p = 3.0
    rng = np.random.default_rng(4)
    b = 0.06 * np.eye(n) + (0.015 * (np.ones((n, n)) - np.eye(n)))
    a = 0.41
    a_dot = 0.013
    b_dot = rng.normal(size=(n, n)) * 0.01
    b_dot = b_dot + b_dot.T
    grid = Field.constant(0.0, n, 0.5 if n == 1 else 1.0, 6.0)
    G = gamma_terms(ModulationState(a=a, b=b, z=np.zeros(n), alpha=np.zeros(n)), (a_dot, b_dot), p, grid)
    ref = forcing_by_residual(a, b, a_dot, b_dot, p, grid.coords())
    assert np.max(np.abs(G.forcing.values - ref)) < 1e-5


def test_gammas_vanish_on_the_rhs():
    p = 3.0
    b = np.array([[0.05, 0.01], [0.01, 0.03]])
    s = ModulationState(a=0.4, b=b, z=np.zeros(2), alpha=np.zeros(2))
    G = gamma_terms(s, modulation_rhs(s.a, b, p), p, Field.constant(0.0, 2, 0.5, 3.0))
    assert abs(G.gamma0) < 1e-15 and np.max(np.abs(G.gamma)) < 1e-15


def test_g1_vanishes_at_zero_b():
    s = ModulationState(a=0.5, b=0.0, z=0.0, alpha=0.0)
    G = gamma_terms(s, (0.0, [[0.0]]), 3.0, Field.constant(0.0, 1, 0.5, 5.0))
    assert np.all(G.g1.values == 0) and np.all(G.forcing.values == 0)


def test_forcing_is_higher_order_in_beta():
    p = 3.0
    bs = [0.04, 0.02, 0.01, 0.005]
    norms = []
    for b in bs:
        a = slaved_a([[b]], p)
        s = ModulationState(a=a, b=b, z=0.0, alpha=0.0)
        G = gamma_terms(s, modulation_rhs(a, [[b]], p), p, Field.constant(0.0, 1, 0.5, 200.0))
        norms.append(weighted_sup(G.forcing))
    assert np.polyfit(np.log(bs), np.log(norms), 1)[0] >= 2.4


# --- majorants --------------------------------------------------------------------------------

def split_on_flow(tau, b0, p, xi_scale=0.0, a_shift=0.0):
    bt = beta_tilde(tau, b0, p)
    grid = Field.constant(0.0, 1, 0.5, 5.0)
    xi = grid.like(xi_scale * np.exp(-grid.axis() ** 2))
    mu = ModulationState(a=slaved_a(bt, p) + a_shift, b=bt, z=0.0, alpha=0.0, tau=tau)
    return SplitResult(mu=mu, xi=xi, residual=0.0, iterations=0)


def test_majorants_vanish_on_the_comparison_flow():
    b0 = [[0.05]]
    reps = majorants([split_on_flow(t, b0, 3.0) for t in (0.0, 1.0, 5.0)], 3.0)
    last = reps[-1]
    assert last.M1 == last.M2 == last.A == 0 and last.B < 1e-14
    assert last.beta == pytest.approx(beta(5.0, b0, 3.0))


def test_majorants_are_linear_in_the_perturbation():
    b0 = [[0.05]]
    one = majorants([split_on_flow(t, b0, 3.0, 1e-4, 1e-5) for t in (0.0, 2.0)], 3.0)[-1]
    two = majorants([split_on_flow(t, b0, 3.0, 2e-4, 2e-5) for t in (0.0, 2.0)], 3.0)[-1]
    assert two.M1 == pytest.approx(2 * one.M1) and two.M2 == pytest.approx(2 * one.M2)
    assert two.A == pytest.approx(2 * one.A)
    assert one.M2 == pytest.approx(1e-4) and one.A == pytest.approx(1e-5 * 26**2)  # β(2) = 1/26


def test_majorants_are_running_maxima():
    b0 = [[0.05]]
    splits = [split_on_flow(0.0, b0, 3.0, 1e-3), split_on_flow(1.0, b0, 3.0, 0.0)]
    reps = majorants(splits, 3.0)
    assert reps[1].M2 == reps[0].M2 == pytest.approx(1e-3)
    assert majorants([], 3.0) == []


def test_weighted_sup():
    f = Field.constant(2.0, 1, 0.5, 3.0)
    assert weighted_sup(f) == 2.0
    assert weighted_sup(f, power=2.0) == 2.0
    g = Field.from_function(lambda y: (1 + y[..., 0] ** 2) ** 1.5, 1, 0.5, 3.0)
    assert weighted_sup(g) == pytest.approx(1.0)
