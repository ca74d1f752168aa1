"""Blowup variables y = λ(x - z) - α, τ = ∫λ², v = λ^{-2/(p-1)} u, and the rescaled flow."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.optimize import brentq

from .pde_core import Field, SolverDivergence, interpolate, laplacian, reaction

PSD_TOL = 1e-12


@dataclass
class ModulationState:
    """Parameters (a, b, z, α, λ, t, τ) of one rescaled frame; c = a + 1/2 is derived."""

    a: float
    b: np.ndarray
    z: np.ndarray
    alpha: np.ndarray
    lam: float = 1.0
    t: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if b.shape[0] != b.shape[1]:
            raise ValueError("b must be square")
        if not np.allclose(b, b.T, rtol=0, atol=1e-13 * max(1.0, np.abs(b).max())):
            raise ValueError("b must be symmetric")
        b = 0.5 * (b + b.T)
        if np.linalg.eigvalsh(b).min() < -PSD_TOL:
            raise ValueError("b must be positive semidefinite")
        n = b.shape[0]
        self.b = b
        self.a = float(self.a)
        self.z = np.broadcast_to(np.asarray(self.z, dtype=float), (n,)).copy()
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (n,)).copy()
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def c(self) -> float:
        return self.a + 0.5

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def zeta(self) -> np.ndarray:
        """Center of the almost solution in physical variables, z + α/λ."""
        return self.z + self.alpha / self.lam

    def replace(self, **kw) -> "ModulationState":
        d = dict(a=self.a, b=self.b, z=self.z, alpha=self.alpha, lam=self.lam, t=self.t, tau=self.tau)
        d.update(kw)
        return ModulationState(**d)

    @classmethod
    def initial(cls, n: int, a: float = 0.5, b=None, lam: float = 1.0) -> "ModulationState":
        b = np.zeros((n, n)) if b is None else b
        return cls(a=a, b=b, z=np.zeros(n), alpha=np.zeros(n), lam=lam)


@dataclass
class RescaledTrajectory:
    taus: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def append(self, tau: float, v: Field, state: ModulationState):
        if self.taus and tau <= self.taus[-1]:
            raise ValueError("tau must increase strictly")
        self.taus.append(float(tau))
        self.fields.append(v)
        self.states.append(state)

    def __len__(self):
        return len(self.taus)


def default_window(beta0: float) -> float:
    """Half-width 20/sqrt(β(0)); the weight e^{-|y|²/4} is below 1e-40 there."""
    return 20.0 / np.sqrt(beta0)


def _grid_half_width(Y: float, h: float) -> float:
    return h * np.ceil(Y / h - 1e-9)


def to_blowup_vars(u: Field, state: ModulationState, p: float, half_width: float | None = None,
                   spacing: float | None = None) -> Field:
    """Resample v(y) = λ^{-2/(p-1)} u(z + (y + α)/λ) onto a fixed y-grid."""
    h = u.spacing if spacing is None else spacing
    if half_width is None:
        beta = np.linalg.eigvalsh(state.b).max() if state.n else 0.0
        half_width = default_window(beta) if beta > 0 else u.half_width * state.lam
    Y = _grid_half_width(half_width, h)
    grid = Field.constant(0.0, u.dim, h, Y)
    y = grid.coords()
    x = state.z + (y + state.alpha) / state.lam
    if np.any(np.abs(x) > u.half_width * (1 + 1e-12)):
        raise ValueError("the x-grid does not cover the requested y window")
    vals = interpolate(u, x)
    return grid.like(state.lam ** (-2.0 / (p - 1.0)) * vals)


def from_blowup_vars(v: Field, state: ModulationState, p: float, grid: Field, extend: bool = False) -> Field:
    """Inverse map u(x) = λ^{2/(p-1)} v(λ(x - z) - α) sampled on ``grid``."""
    x = grid.coords()
    y = state.lam * (x - state.z) - state.alpha
    vals = interpolate(v, y, extend=extend)
    return grid.like(state.lam ** (2.0 / (p - 1.0)) * vals)


class RescaledOperator:
    """Sparse pieces of Δ - a y·∇ - 2a/(p-1) on a y-grid with zero-flux walls."""

    def __init__(self, grid: Field, p: float):
        m, n, h = grid.m, grid.dim, grid.spacing
        self.p = p
        self.N = m**n
        self.lap = laplacian(m, h, n, "neumann_zero")
        ax = grid.axis()
        d1 = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1], format="lil") / (2 * h)
        d1[0, 1] = 0.0
        d1[m - 1, m - 2] = 0.0
        d1 = sp.diags(ax) @ d1.tocsr()
        eye = sp.identity(m, format="csr")
        drift = None
        for k in range(n):
            mats = [d1 if j == k else eye for j in range(n)]
            term = mats[0]
            for mat in mats[1:]:
                term = sp.kron(term, mat, format="csr")
            drift = term if drift is None else drift + term
        # y·∇ + 2/(p-1), the part multiplied by a
        self.scale_part = (drift + (2.0 / (p - 1.0)) * sp.identity(self.N)).tocsr()
        self._cache: dict = {}

    def matrix(self, a: float) -> sp.csr_matrix:
        return (self.lap - a * self.scale_part).tocsr()

    def solver(self, a: float, dtau: float):
        key = (float(a), float(dtau))
        if key not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            A = sp.identity(self.N, format="csc") - dtau * self.matrix(a).tocsc()
            self._cache[key] = spla.splu(A.tocsc())
        return self._cache[key]

    def step(self, v: np.ndarray, a: float, dtau: float) -> np.ndarray:
        rhs = v + dtau * reaction(v, self.p)
        return self.solver(a, dtau).solve(rhs)


def evolve_rescaled(v0: Field, a_schedule: Callable[[float], float], p: float, tau_end: float,
                    dtau: float = 0.01, lam0: float = 1.0, save_every: int = 1) -> RescaledTrajectory:
    """IMEX integration of ∂τ v = Δv - a y·∇v - 2a v/(p-1) + |v|^{p-1} v.

    λ and t are carried along through d ln λ/dτ = a and dt = dτ/λ².
    """
    op = RescaledOperator(v0, p)
    n = v0.dim
    traj = RescaledTrajectory()
    state = ModulationState(a=a_schedule(0.0), b=np.zeros((n, n)), z=np.zeros(n), alpha=np.zeros(n), lam=lam0)
    traj.append(0.0, v0, state)
    v = v0.values.ravel().copy()
    lam, t = lam0, 0.0
    n_steps = int(np.ceil(tau_end / dtau - 1e-12))
    for k in range(1, n_steps + 1):
        tau0 = (k - 1) * dtau
        a = float(a_schedule(tau0))
        v = op.step(v, a, dtau)
        if not np.all(np.isfinite(v)):
            raise SolverDivergence("non-finite value in rescaled evolution", k)
        t += dtau / lam**2 * (np.expm1(-2 * a * dtau) / (-2 * a * dtau) if a != 0 else 1.0)
        lam *= np.exp(a * dtau)
        if k % save_every == 0 or k == n_steps:
            tau = k * dtau
            st = ModulationState(a=a_schedule(tau), b=np.zeros((n, n)), z=np.zeros(n), alpha=np.zeros(n),
                                 lam=lam, t=t, tau=tau)
            traj.append(tau, v0.like(v.reshape(v0.values.shape)), st)
    return traj


class LambdaBlowup(ArithmeticError):
    """The radicand λ0^{-2} - 2∫a vanished; ``t_cross`` is where it happens."""

    def __init__(self, t_cross: float):
        super().__init__(f"lambda blows up at t = {t_cross!r}")
        self.t_cross = t_cross


def _history_integral(a_history, t: float, kind: str) -> float:
    if callable(a_history):
        val, _ = quad(a_history, 0.0, t, limit=200, epsabs=1e-14, epsrel=1e-13)
        return val
    times, vals = (np.asarray(x, dtype=float) for x in a_history)
    if kind == "constant":
        # a(s) = vals[i] on [times[i], times[i+1]); the last value persists
        edges = np.append(times, np.inf)
        lo = np.clip(edges[:-1], 0.0, t)
        hi = np.clip(edges[1:], 0.0, t)
        return float(np.sum(vals * (hi - lo)))
    if kind == "linear":
        if t > times[-1] + 1e-14:
            raise ValueError("t lies past the end of the a history")
        knots = np.append(times[times < t], t)
        return float(np.trapezoid(np.interp(knots, times, vals), knots))
    raise ValueError(f"unknown history kind {kind!r}")


def lambda_from_a(a_history, lambda0: float, t: float, kind: str = "linear") -> float:
    """λ(t) = (λ0^{-2} - 2∫_0^t a)^{-1/2}.

    ``a_history`` is a callable a(t) or a pair (times, values) read as piecewise
    linear (``kind="linear"``) or piecewise constant (``kind="constant"``).
    Raises LambdaBlowup carrying the crossing time if the radicand is not positive.
    """
    r0 = lambda0**-2.0
    rad = r0 - 2.0 * _history_integral(a_history, t, kind)
    if rad > 0:
        return rad**-0.5
    f = lambda s: r0 - 2.0 * _history_integral(a_history, s, kind)
    t_cross = brentq(f, 0.0, t, xtol=1e-15, rtol=1e-14) if f(t) < 0 else t
    raise LambdaBlowup(t_cross)


def step_alpha(state: ModulationState, z_dot, dt: float) -> np.ndarray:
    """Advance α' = λ² a α - λ ż over one step with frozen coefficients.

    The linear part is integrated exactly (exponential Euler), so the step is the
    closed-form solution whenever λ, a and ż are constant over the step.
    """
    k = state.lam**2 * state.a
    z_dot = np.asarray(z_dot, dtype=float)
    growth = np.exp(k * dt)
    phi = dt * (np.expm1(k * dt) / (k * dt) if k * dt != 0 else 1.0)
    return growth * state.alpha - phi * state.lam * z_dot


def y_grid(dim: int, half_width: float, spacing: float) -> Field:
    return Field.constant(0.0, dim, spacing, _grid_half_width(half_width, spacing))


def a_schedule_from_samples(taus: Sequence[float], values: Sequence[float]) -> Callable[[float], float]:
    taus, values = np.asarray(taus, float), np.asarray(values, float)
    return lambda tau: float(np.interp(tau, taus, values))
