"""Almost-solution family V_ab, Gaussian-weighted inner products and the splitting solver.

The splitting writes u_{λ,z}(y) = λ^{-2/(p-1)} u(z + (y + α)/λ) as V_ab + ξ with ξ
orthogonal to every tangent function in L²(e^{-a|y|²/2} dy).

Parameter and test-function ordering used throughout::

    [a, b_11..b_nn, b_ij (i<j), z_1..z_n]   <->   [φ00, φ11..φnn, φij (i<j), φ01..φ0n]
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .blowup_frame import PSD_TOL, LambdaBlowup, ModulationState, lambda_from_a, step_alpha
from .pde_core import Field, Trajectory, interpolate

DEFAULT_NODES = 64


class QuadratureWarning(UserWarning):
    pass


class SplitFailure(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int, mu: ModulationState | None = None):
        super().__init__(f"{message}: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations
        self.mu = mu


# --- almost solutions -------------------------------------------------------

def _yby(b: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", y, b, y)


def V_values(a: float, b: np.ndarray, p: float, y: np.ndarray) -> np.ndarray:
    """((a + 1/2)/(p - 1 + yby))^{1/(p-1)} at points y of shape (..., n)."""
    b = np.atleast_2d(b)
    return ((a + 0.5) / (p - 1.0 + _yby(b, y))) ** (1.0 / (p - 1.0))


def eval_V(a: float, b, p: float, grid) -> Field | np.ndarray:
    """Evaluate V_ab on a Field's grid (returns a Field) or on raw points."""
    if a + 0.5 <= 0:
        raise ValueError("need a + 1/2 > 0")
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if np.linalg.eigvalsh(0.5 * (b + b.T)).min() < -PSD_TOL:
        raise ValueError("b must be positive semidefinite")
    if isinstance(grid, Field):
        return grid.like(V_values(a, b, p, grid.coords()))
    return V_values(a, b, p, np.asarray(grid, dtype=float))


def v_ab(a: float, b, p: float, y: np.ndarray) -> np.ndarray:
    """Exact static-family member (2a/(p - 1 + yby))^{1/(p-1)} of the rescaled equation."""
    b = np.atleast_2d(b)
    return (2.0 * a / (p - 1.0 + _yby(b, y))) ** (1.0 / (p - 1.0))


# --- quadrature -------------------------------------------------------------

@lru_cache(maxsize=32)
def _hermegauss(k: int):
    x, w = hermegauss(k)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_hermite(n: int, a: float, n_nodes: int = DEFAULT_NODES):
    """Tensor nodes and weights for ∫ f(y) e^{-a|y|²/2} dy in n dimensions."""
    if not a > 0:
        raise ValueError("a must be positive")
    x, w = _hermegauss(n_nodes)
    s = 1.0 / np.sqrt(a)
    grids = np.meshgrid(*([x * s] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(1)
    for _ in range(n):
        wts = np.multiply.outer(wts, w * s).ravel()
    return pts, wts


def _as_function(f, n: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, Field):
        return lambda pts: interpolate(f, pts)
    if callable(f):
        return lambda pts: np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape[:-1])
    c = float(f)
    return lambda pts: np.full(pts.shape[:-1], c)


def weighted_inner(f, g, a: float, n: int | None = None, n_nodes: int = DEFAULT_NODES,
                   tol: float | None = None) -> float:
    """Gauss–Hermite value of ∫ f g e^{-a|y|²/2} dy.

    ``f`` and ``g`` are Fields, callables of points (..., n) or constants. With
    ``tol`` set, the value is compared against a 3/4-order rule and a
    QuadratureWarning is issued when they differ by more than ``tol``.
    """
    if n is None:
        n = next((h.dim for h in (f, g) if isinstance(h, Field)), None)
        if n is None:
            raise ValueError("dimension n is required for non-Field arguments")
    F, Gf = _as_function(f, n), _as_function(g, n)
    pts, wts = gauss_hermite(n, a, n_nodes)
    val = float(np.sum(wts * F(pts) * Gf(pts)))
    if tol is not None:
        pts2, wts2 = gauss_hermite(n, a, max(2, (3 * n_nodes) // 4))
        val2 = float(np.sum(wts2 * F(pts2) * Gf(pts2)))
        if abs(val - val2) > tol:
            warnings.warn(f"quadrature order {n_nodes} insufficient: |Δ| = {abs(val - val2):.2e}",
                          QuadratureWarning, stacklevel=2)
    return val


# --- tangent functions --------------------------------------------------------

def index_pairs(n: int) -> list[tuple[int, int]]:
    diag = [(i, i) for i in range(1, n + 1)]
    off = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    return [(0, 0)] + diag + off + [(0, i) for i in range(1, n + 1)]


def _phi_values(a: float, pair: tuple[int, int], y: np.ndarray) -> np.ndarray:
    i, j = pair
    if i == 0 and j == 0:
        return np.ones(y.shape[:-1])
    if i == 0:
        return np.sqrt(a) * y[..., j - 1]
    return a * y[..., i - 1] * y[..., j - 1]


def _dphi_da(a: float, pair: tuple[int, int], y: np.ndarray) -> np.ndarray:
    i, j = pair
    if i == 0 and j == 0:
        return np.zeros(y.shape[:-1])
    if i == 0:
        return 0.5 / np.sqrt(a) * y[..., j - 1]
    return y[..., i - 1] * y[..., j - 1]


def tangent_functions(a: float, n: int) -> list[tuple[tuple[int, int], Callable]]:
    """The (n+1)(n+2)/2 functions 1, √a y_i, a y_i y_j, labelled by index pair."""
    if not a > 0:
        raise ValueError("a must be positive")
    return [(pr, (lambda y, pr=pr: _phi_values(a, pr, np.asarray(y, dtype=float)))) for pr in index_pairs(n)]


# --- parameter packing --------------------------------------------------------

def pack_mu(a: float, b: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = b.shape[0]
    off = [b[i, j] for i in range(n) for j in range(i + 1, n)]
    return np.concatenate([[a], np.diag(b), off, z])


def unpack_mu(mu: np.ndarray, n: int):
    a = mu[0]
    b = np.diag(mu[1:1 + n]).astype(float)
    k = 1 + n
    for i in range(n):
        for j in range(i + 1, n):
            b[i, j] = b[j, i] = mu[k]
            k += 1
    z = np.array(mu[k:k + n], dtype=float)
    return float(a), b, z


def _dV_dparams(a: float, b: np.ndarray, p: float, y: np.ndarray) -> np.ndarray:
    """Derivatives of V_ab in (a, b_diag, b_offdiag) at points y; shape (n_ab, N)."""
    n = b.shape[0]
    D = p - 1.0 + _yby(b, y)
    V = ((a + 0.5) / D) ** (1.0 / (p - 1.0))
    rows = [V / ((p - 1.0) * (a + 0.5))]
    for i in range(n):
        rows.append(-V * y[:, i] ** 2 / ((p - 1.0) * D))
    for i in range(n):
        for j in range(i + 1, n):
            rows.append(-2.0 * V * y[:, i] * y[:, j] / ((p - 1.0) * D))
    return np.array(rows)


# --- closed-form Jacobian blocks --------------------------------------------

@dataclass
class JacobianBlocks:
    """Leading-order blocks of ⟨∂_μ V_μ, φ⟩; rows index parameters, columns test functions."""

    K11: np.ndarray
    K22: np.ndarray
    K33: np.ndarray
    A1: np.ndarray
    prefactor: float


def jacobian_prefactor(a: float, p: float, lam: float, n: int) -> float:
    return lam ** (-n + 2.0 / (p - 1.0)) * ((a + 0.5) / (p - 1.0)) ** (1.0 / (p - 1.0)) * (2 * np.pi / a) ** (n / 2)


def jacobian_blocks(mu: ModulationState, p: float) -> JacobianBlocks:
    """Closed-form leading blocks of ∂_μ G at (μ, V_μ), O(‖b‖) corrections dropped.

    K11 couples (a, b_ii) with (φ00, φ_jj), K22 couples off-diagonal b_ij with φ_ij
    and K33 couples z with φ_0i. The x-space normalization λ^{-n+2/(p-1)} is kept.
    """
    a, lam, n = mu.a, mu.lam, mu.n
    P = jacobian_prefactor(a, p, lam, n)
    K11 = np.empty((n + 1, n + 1))
    K11[0, :] = 1.0 / (a + 0.5)
    K11[1:, :] = -1.0 / ((p - 1.0) * a)
    K11[1:, 1:] += np.diag(np.full(n, -2.0 / ((p - 1.0) * a)))
    K11 *= P / (p - 1.0)
    m = n * (n - 1) // 2
    K22 = -P * 2.0 / ((p - 1.0) ** 2 * a) * np.eye(m)
    K33 = lam * P * 2.0 / ((p - 1.0) ** 2 * np.sqrt(a)) * mu.b
    size = (n + 1) * (n + 2) // 2
    A1 = np.zeros((size, size))
    A1[: n + 1, : n + 1] = K11
    A1[n + 1: n + 1 + m, n + 1: n + 1 + m] = K22
    A1[n + 1 + m:, n + 1 + m:] = K33
    return JacobianBlocks(K11, K22, K33, A1, P)


# --- the splitting system -----------------------------------------------------

@dataclass
class SplitResult:
    mu: ModulationState
    xi: Field
    residual: float
    iterations: int


class SplitProblem:
    """G(μ) = ⟨V_ab - u_{λ,z}, φ⟩_a for a fixed frame (λ, α) and data u."""

    def __init__(self, u, frame: ModulationState, p: float, n_nodes: int = DEFAULT_NODES):
        self.n = frame.n
        self.p = p
        self.lam = frame.lam
        self.alpha = frame.alpha
        self.n_nodes = n_nodes
        self._u = _as_function(u, self.n)
        self.pairs = index_pairs(self.n)

    def u_scaled(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = z + (y + self.alpha) / self.lam
        return self.lam ** (-2.0 / (self.p - 1.0)) * self._u(x)

    def _phis(self, a, y):
        return np.array([_phi_values(a, pr, y) for pr in self.pairs])

    def G(self, mu: np.ndarray) -> np.ndarray:
        a, b, z = unpack_mu(mu, self.n)
        y, w = gauss_hermite(self.n, a, self.n_nodes)
        diff = V_values(a, b, self.p, y) - self.u_scaled(z, y)
        return self._phis(a, y) @ (w * diff)

    def jacobian(self, mu: np.ndarray) -> np.ndarray:
        """∂G/∂μ: analytic in (a, b), central differences in z."""
        n = self.n
        a, b, z = unpack_mu(mu, n)
        y, w = gauss_hermite(n, a, self.n_nodes)
        phis = self._phis(a, y)
        diff = V_values(a, b, self.p, y) - self.u_scaled(z, y)
        dV = _dV_dparams(a, b, self.p, y)
        J = np.empty((len(self.pairs), len(mu)))
        J[:, : dV.shape[0]] = phis @ (w[:, None] * dV.T)
        # the weight and the tangent functions also move with a
        r2 = np.sum(y**2, axis=-1)
        dphi = np.array([_dphi_da(a, pr, y) for pr in self.pairs]) - 0.5 * r2 * phis
        J[:, 0] += dphi @ (w * diff)
        # z shifts y by λ z; keep that shift near 1e-6 and above roundoff in z
        hz = max(1e-6 / self.lam, 1e-9 * float(np.max(np.abs(z), initial=0.0)))
        for k in range(n):
            e = np.zeros(n)
            e[k] = hz
            du = (self.u_scaled(z + e, y) - self.u_scaled(z - e, y)) / (2 * hz)
            J[:, dV.shape[0] + k] = -(phis @ (w * du))
        return J


def _row_scales(a: float, b: np.ndarray, p: float, lam: float, n: int) -> np.ndarray:
    P = jacobian_prefactor(a, p, 1.0, n)
    m = n * (n - 1) // 2
    beta = max(float(np.abs(np.linalg.eigvalsh(b)).max()) if n else 0.0, 1e-3)
    return np.concatenate([np.full(1 + n + m, P), np.full(n, P * lam * beta)])


def _psd_ok(a: float, b: np.ndarray) -> bool:
    return a > 0 and np.linalg.eigvalsh(b).min() >= -PSD_TOL


def default_xi_grid(u, frame: ModulationState, b: np.ndarray, spacing: float = 0.05) -> Field:
    beta = float(np.linalg.eigvalsh(b).max()) if b.size else 0.0
    Y = min(20.0 / np.sqrt(beta), 40.0) if beta > 0 else 40.0
    if isinstance(u, Field):
        # largest centered window whose preimage stays inside the data box
        reach = frame.lam * (u.half_width - np.max(np.abs(frame.z))) - np.max(np.abs(frame.alpha))
        Y = min(Y, reach - spacing)
    Y = spacing * np.floor(Y / spacing)
    return Field.constant(0.0, frame.n, spacing, Y)


def split(u, mu_guess: ModulationState, p: float, tol: float = 1e-11, max_iter: int = 25,
          n_nodes: int = DEFAULT_NODES, xi_grid: Field | None = None) -> SplitResult:
    """Newton solve of G(μ, u) = 0 for μ = (a, b, z) in the frame (λ, α) of ``mu_guess``.

    ``u`` is a Field on physical coordinates or a callable of points (..., n).
    Steps that leave the PSD cone (or make a ≤ 0) are halved. Raises SplitFailure
    if the max |G| entry does not drop below ``tol`` within ``max_iter`` steps.
    """
    n = mu_guess.n
    prob = SplitProblem(u, mu_guess, p, n_nodes)
    mu = pack_mu(mu_guess.a, mu_guess.b, mu_guess.z)
    g = prob.G(mu)
    res = float(np.max(np.abs(g)))
    it = 0
    while res > tol:
        if it >= max_iter:
            raise SplitFailure("Newton did not converge", res, it, _state(mu_guess, mu, n))
        a, b, _ = unpack_mu(mu, n)
        D = 1.0 / _row_scales(a, b, p, mu_guess.lam, n)
        J = prob.jacobian(mu)
        step = np.linalg.lstsq(D[:, None] * J, -D * g, rcond=1e-13)[0]
        t = 1.0
        for _ in range(60):
            trial = mu + t * step
            ta, tb, _ = unpack_mu(trial, n)
            if _psd_ok(ta, tb):
                break
            t *= 0.5
        else:
            raise SplitFailure("step halving could not restore b >= 0", res, it, _state(mu_guess, mu, n))
        mu = trial
        g = prob.G(mu)
        if not np.all(np.isfinite(g)):
            raise SplitFailure("non-finite orthogonality residual", np.inf, it + 1)
        res = float(np.max(np.abs(g)))
        it += 1
    state = _state(mu_guess, mu, n)
    grid = xi_grid if xi_grid is not None else default_xi_grid(u, mu_guess, state.b)
    y = grid.coords()
    xi = prob.u_scaled(state.z, y) - V_values(state.a, state.b, p, y)
    return SplitResult(state, grid.like(xi), res, it)


def _state(frame: ModulationState, mu: np.ndarray, n: int) -> ModulationState:
    a, b, z = unpack_mu(mu, n)
    b = b if np.linalg.eigvalsh(b).min() >= 0 else b - np.linalg.eigvalsh(b).min() * np.eye(n)
    return frame.replace(a=a, b=b, z=z)


def orthogonality_defect(res: SplitResult, u, p: float, n_nodes: int = DEFAULT_NODES) -> np.ndarray:
    """⟨ξ, φ⟩ for every tangent function, with ξ = u_{λ,z} - V_ab evaluated exactly at the nodes."""
    prob = SplitProblem(u, res.mu, p, n_nodes)
    return -prob.G(pack_mu(res.mu.a, res.mu.b, res.mu.z))


def split_trajectory(traj: Trajectory, mu0: ModulationState, p: float, **split_kw) -> tuple[list[SplitResult], int | None]:
    """Split every frame of a physical trajectory, seeding each Newton solve with the previous μ.

    λ follows lambda_from_a with the extracted a held constant between frames and
    α follows step_alpha with ż from consecutive frames. Returns the results and
    the index of the first failing frame (None when every frame splits).
    """
    times = np.asarray(traj.times, dtype=float)
    results: list[SplitResult] = []
    a_times, a_vals = [], []
    state = mu0.replace(t=times[0], tau=0.0)
    z_prev = None
    for k, (t, u) in enumerate(zip(times, traj.fields)):
        if k > 0:
            dt = t - times[k - 1]
            prev = results[-1].mu
            try:
                lam = lambda_from_a((np.array(a_times), np.array(a_vals)), mu0.lam, t - times[0], kind="constant")
            except LambdaBlowup:
                return results, k
            z_dot = (prev.z - z_prev) / (times[k - 1] - times[k - 2]) if z_prev is not None else np.zeros(prev.n)
            alpha = step_alpha(prev, z_dot, dt)
            r0, r1 = prev.lam**-2, lam**-2
            dtau = -np.log(r1 / r0) / (2 * prev.a) if prev.a != 0 else dt * prev.lam**2
            z_prev = prev.z
            state = prev.replace(lam=lam, alpha=alpha, t=t, tau=prev.tau + dtau)
        try:
            res = split(u, state, p, **split_kw)
        except SplitFailure:
            return results, k
        results.append(res)
        a_times.append(t - times[0])
        a_vals.append(res.mu.a)
    return results, None
