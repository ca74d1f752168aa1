"""Modulation ODEs for (a, b), the comparison flow β̃, forcing terms and majorant diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blowup_frame import PSD_TOL, ModulationState
from .pde_core import Field
from .profile_manifold import SplitResult, V_values, _yby


@dataclass(frozen=True)
class ModConstants:
    p: float

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")

    @property
    def kappa(self) -> float:
        return min(0.5, (self.p - 1.0) / 2.0)

    @property
    def quad_coeff(self) -> float:
        """4p/(p-1)², the coefficient of b² in the b equation."""
        return 4.0 * self.p / (self.p - 1.0) ** 2


def beta_tilde(tau: float, b0, p: float) -> np.ndarray:
    """(b0^{-1} + 4pτ/(p-1)² I)^{-1}; b0 must be positive definite."""
    b0 = np.atleast_2d(np.asarray(b0, dtype=float))
    if np.linalg.eigvalsh(b0).min() <= 0:
        raise ValueError("b0 must be positive definite")
    n = b0.shape[0]
    return np.linalg.inv(np.linalg.inv(b0) + ModConstants(p).quad_coeff * tau * np.eye(n))


def beta(tau: float, b0, p: float) -> float:
    """Largest eigenvalue of β̃(τ)."""
    return float(np.linalg.eigvalsh(beta_tilde(tau, b0, p)).max())


def slaved_a(b, p: float) -> float:
    """a on the slaving manifold a = 1/2 - 2 Tr b/(p-1)."""
    return 0.5 - 2.0 * np.trace(np.atleast_2d(b)) / (p - 1.0)


def modulation_rhs(a: float, b, p: float) -> tuple[float, np.ndarray]:
    """Right-hand sides (a_τ, b_τ) with c = a + 1/2 and remainders dropped."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    c = a + 0.5
    tr = np.trace(b)
    b_dot = -ModConstants(p).quad_coeff * (b @ b) - (2.0 / (p - 1.0)) * tr * b + (c - 2.0 * a) * b
    a_dot = (a + 0.5) * ((0.5 - a) - (2.0 / (p - 1.0)) * tr)
    return float(a_dot), b_dot


@dataclass
class ModulationPath:
    taus: np.ndarray
    a: np.ndarray
    b: np.ndarray
    psd_ok: bool = True
    attracting: bool = True
    notes: list = field(default_factory=list)

    @property
    def beta(self) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(bb).max() for bb in self.b])

    def tau_beta(self) -> np.ndarray:
        return self.taus * self.beta


def integrate_modulation(a0: float, b0, p: float, tau_end: float, dtau: float = 0.01,
                         slaved: bool = False, record_every: int = 1, blowoff: float = 10.0) -> ModulationPath:
    """Classical RK4 for the (a, b) system.

    With ``slaved`` the a equation is replaced by a = 1/2 - 2 Tr b/(p-1) at every
    stage, which reduces the b equation to b_τ = -(4p/(p-1)²) b². The run is
    flagged (and stopped) if b leaves the PSD cone or ‖b‖ exceeds ``blowoff``·‖b0‖.
    """
    b = np.atleast_2d(np.asarray(b0, dtype=float)).copy()
    a = slaved_a(b, p) if slaved else float(a0)
    norm0 = max(np.linalg.norm(b, 2), 1e-300)

    def rhs(a_, b_):
        if slaved:
            a_ = slaved_a(b_, p)
        return modulation_rhs(a_, b_, p)

    n_steps = int(np.ceil(tau_end / dtau - 1e-12))
    taus, avals, bvals = [0.0], [a], [b.copy()]
    path = ModulationPath(np.array([]), np.array([]), np.array([]))
    for k in range(1, n_steps + 1):
        k1a, k1b = rhs(a, b)
        k2a, k2b = rhs(a + 0.5 * dtau * k1a, b + 0.5 * dtau * k1b)
        k3a, k3b = rhs(a + 0.5 * dtau * k2a, b + 0.5 * dtau * k2b)
        k4a, k4b = rhs(a + dtau * k3a, b + dtau * k3b)
        b = b + dtau / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        b = 0.5 * (b + b.T)
        a = slaved_a(b, p) if slaved else a + dtau / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        stop = False
        if np.linalg.eigvalsh(b).min() < -PSD_TOL:
            path.psd_ok = False
            path.notes.append(f"b left the PSD cone at tau={k * dtau:.6g}")
            stop = True
        if np.linalg.norm(b, 2) > blowoff * norm0 and norm0 > 1e-300 or not np.isfinite(a):
            path.attracting = False
            path.notes.append(f"parameters left the attracting regime at tau={k * dtau:.6g}")
            stop = True
        if k % record_every == 0 or k == n_steps or stop:
            taus.append(k * dtau)
            avals.append(a)
            bvals.append(b.copy())
        if stop:
            break
    path.taus, path.a, path.b = np.array(taus), np.array(avals), np.array(bvals)
    return path


@dataclass
class GammaTerms:
    gamma0: float
    gamma: np.ndarray
    g1: Field
    forcing: Field


def gamma_terms(state: ModulationState, derivatives, p: float, grid: Field) -> GammaTerms:
    """Evaluate Γ0, Γ_jk and G1 and assemble the source F of the fluctuation equation on ``grid``.

    ``derivatives`` is (a_τ, b_τ); c_τ = a_τ because c = a + 1/2.
    """
    a_dot, b_dot = derivatives
    b_dot = np.atleast_2d(np.asarray(b_dot, dtype=float))
    a, b, c = state.a, state.b, state.c
    tr = np.trace(b)
    gamma0 = -a_dot / c + (c - 2 * a) - 2.0 / (p - 1.0) * tr
    gamma = (b_dot - (c - 2 * a) * b + 2.0 * b * tr / (p - 1.0) + ModConstants(p).quad_coeff * (b @ b)) / (a * (p - 1.0))
    gamma = 0.5 * (gamma + gamma.T)
    y = grid.coords()
    D = p - 1.0 + _yby(b, y)
    by = y @ b
    g1 = -4.0 * p * _yby(b, y) * np.sum(by**2, axis=-1) / ((p - 1.0) ** 2 * D**2)
    quad = (p - 1.0) * a * _yby(gamma, y) / D
    F = (gamma0 + quad + g1) * V_values(a, b, p, y) / (p - 1.0)
    return GammaTerms(float(gamma0), gamma, grid.like(g1), grid.like(F))


def weighted_sup(f: Field, power: float = 3.0) -> float:
    """‖⟨y⟩^{-power} f‖_∞ on the field's grid."""
    r2 = np.sum(f.coords() ** 2, axis=-1)
    return float(np.max(np.abs(f.values) * (1.0 + r2) ** (-power / 2.0)))


@dataclass
class MajorantReport:
    M1: float
    M2: float
    A: float
    B: float
    beta: float
    tau: float


def majorants(splits: Sequence[SplitResult], p: float, b0=None) -> list[MajorantReport]:
    """Running maxima of the four majorants along a split series.

    β̃ is built from ``b0`` (default: b of the first split) and the splits' τ. When
    b0 is not positive definite β̃ is undefined and M1, A, B are reported as NaN.
    """
    if not splits:
        return []
    b0 = splits[0].mu.b if b0 is None else np.atleast_2d(b0)
    if np.linalg.eigvalsh(b0).min() <= PSD_TOL:
        out, M2 = [], 0.0
        for s in splits:
            M2 = max(M2, float(np.max(np.abs(s.xi.values))))
            out.append(MajorantReport(np.nan, M2, np.nan, np.nan, 0.0, s.mu.tau))
        return out
    kappa = ModConstants(p).kappa
    out = []
    M1 = M2 = A = B = 0.0
    for s in splits:
        bt = beta_tilde(s.mu.tau, b0, p)
        be = float(np.linalg.eigvalsh(bt).max())
        M1 = max(M1, weighted_sup(s.xi) / be**2)
        M2 = max(M2, float(np.max(np.abs(s.xi.values))))
        A = max(A, abs(s.mu.a - slaved_a(s.mu.b, p)) / be**2)
        B = max(B, float(np.linalg.norm(s.mu.b - bt, 2)) / be ** (1 + kappa))
        out.append(MajorantReport(M1, M2, A, B, be, s.mu.tau))
    return out
