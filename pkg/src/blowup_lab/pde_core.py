"""Direct solver for u_t = Δu + |u|^{p-1} u on a truncated box, with exact oracles."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, RegularGridInterpolator

Boundary = Literal["dirichlet_zero", "neumann_zero"]


class SolverDivergence(RuntimeError):
    """Raised when a time stepper produces non-finite values."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class BlowupDomainError(ValueError):
    """Raised when an exact solution is requested at or past its blowup time."""

    def __init__(self, t: float, t_star: float):
        super().__init__(f"t={t!r} is not below the blowup time t*={t_star!r}")
        self.t = t
        self.t_star = t_star


def _points_per_axis(half_width: float, spacing: float) -> int:
    m = 2.0 * half_width / spacing
    k = int(round(m))
    if abs(m - k) > 1e-9 * max(1.0, m):
        raise ValueError(f"2L/h = {m} is not an integer")
    return k + 1


@dataclass(frozen=True)
class Field:
    """Samples of a scalar function on the uniform tensor grid [-L, L]^n with spacing h."""

    values: np.ndarray
    dim: int
    spacing: float
    half_width: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if not (self.spacing > 0 and self.half_width > 0):
            raise ValueError("spacing and half_width must be positive")
        m = _points_per_axis(self.half_width, self.spacing)
        if vals.shape != (m,) * self.dim:
            raise ValueError(f"values shape {vals.shape} does not match grid {(m,) * self.dim}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.m)

    def coords(self) -> np.ndarray:
        """Grid points stacked along the last axis, shape (m,)*n + (n,)."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"), axis=-1)

    def like(self, values: np.ndarray) -> "Field":
        return Field(values, self.dim, self.spacing, self.half_width)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], dim: int, spacing: float,
                      half_width: float) -> "Field":
        m = _points_per_axis(half_width, spacing)
        ax = np.linspace(-half_width, half_width, m)
        pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
        vals = np.broadcast_to(np.asarray(f(pts), dtype=float), (m,) * dim)
        return cls(np.array(vals), dim, spacing, half_width)

    @classmethod
    def constant(cls, value: float, dim: int, spacing: float, half_width: float) -> "Field":
        m = _points_per_axis(half_width, spacing)
        return cls(np.full((m,) * dim, float(value)), dim, spacing, half_width)


@dataclass
class SolveConfig:
    p: float
    dt: float
    t_end: float
    boundary: Boundary = "neumann_zero"
    blowup_cutoff: float = 1e6
    save_every: int = 1

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.blowup_cutoff > 1:
            raise ValueError("blowup_cutoff must exceed 1")
        if self.boundary not in ("dirichlet_zero", "neumann_zero"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")


@dataclass
class Trajectory:
    """Time-ordered (t, Field) pairs plus the sup norm at every step.

    ``states`` optionally carries one modulation state per saved field.
    """

    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    sup_times: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)
    states: list | None = None
    cutoff_reached: bool = False
    steps: int = 0

    def append(self, t: float, u: Field, state=None):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(float(t))
        self.fields.append(u)
        if state is not None:
            if self.states is None:
                self.states = []
            self.states.append(state)

    def __len__(self):
        return len(self.times)


def laplacian_1d(m: int, h: float, boundary: Boundary) -> sp.csr_matrix:
    main = -2.0 * np.ones(m)
    off = np.ones(m - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if boundary == "neumann_zero":
        # ghost-point reflection keeps second order at the wall
        lap[0, 1] = 2.0
        lap[m - 1, m - 2] = 2.0
    return (lap / h**2).tocsr()


def laplacian(m: int, h: float, dim: int, boundary: Boundary) -> sp.csr_matrix:
    """Second-order centered Laplacian on the tensor grid (Kronecker sum)."""
    l1 = laplacian_1d(m, h, boundary)
    eye = sp.identity(m, format="csr")
    total = None
    for k in range(dim):
        mats = [l1 if j == k else eye for j in range(dim)]
        term = mats[0]
        for mat in mats[1:]:
            term = sp.kron(term, mat, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def boundary_mask(m: int, dim: int) -> np.ndarray:
    mask = np.zeros((m,) * dim, dtype=bool)
    for k in range(dim):
        idx = [slice(None)] * dim
        idx[k] = 0
        mask[tuple(idx)] = True
        idx[k] = m - 1
        mask[tuple(idx)] = True
    return mask


def reaction(u: np.ndarray, p: float) -> np.ndarray:
    return np.abs(u) ** (p - 1) * u


def solve_direct(u0: Field, cfg: SolveConfig) -> Trajectory:
    """IMEX Euler: backward Euler for the Laplacian, forward Euler for the reaction.

    Stops at ``t_end`` or as soon as the sup norm exceeds ``blowup_cutoff``.
    """
    m, n, h = u0.m, u0.dim, u0.spacing
    N = m**n
    A = sp.identity(N, format="csr") - cfg.dt * laplacian(m, h, n, cfg.boundary)
    dirichlet = cfg.boundary == "dirichlet_zero"
    if dirichlet:
        bmask = boundary_mask(m, n).ravel()
        A = A.tolil()
        for i in np.flatnonzero(bmask):
            A.rows[i] = [i]
            A.data[i] = [1.0]
        A = A.tocsr()
    lu = spla.splu(A.tocsc())

    traj = Trajectory()
    u = u0.values.ravel().copy()
    if dirichlet:
        u[bmask] = 0.0
    t = 0.0
    traj.append(t, u0.like(u.reshape(u0.values.shape)))
    traj.sup_times.append(t)
    traj.sup_norms.append(float(np.max(np.abs(u))))
    n_steps = int(np.ceil(cfg.t_end / cfg.dt - 1e-12))
    for k in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = u + cfg.dt * reaction(u, cfg.p)
        if dirichlet:
            rhs[bmask] = 0.0
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SolverDivergence("non-finite value in direct solve", k)
        t = k * cfg.dt
        s = float(np.max(np.abs(u)))
        traj.sup_times.append(t)
        traj.sup_norms.append(s)
        traj.steps = k
        hit = s > cfg.blowup_cutoff
        if hit or k % cfg.save_every == 0 or k == n_steps:
            traj.append(t, u0.like(u.reshape(u0.values.shape)))
        if hit:
            traj.cutoff_reached = True
            break
    return traj


def blowup_time_homogeneous(u0: float, p: float) -> float:
    return 1.0 / ((p - 1.0) * u0 ** (p - 1.0))


def homogeneous_solution(u0: float, p: float, t: float) -> float:
    """Spatially constant solution [u0^{-(p-1)} - (p-1) t]^{-1/(p-1)}."""
    if not u0 > 0:
        raise ValueError("u0 must be positive")
    t_star = blowup_time_homogeneous(u0, p)
    if t >= t_star:
        raise BlowupDomainError(t, t_star)
    return (u0 ** (-(p - 1.0)) - (p - 1.0) * t) ** (-1.0 / (p - 1.0))


def interpolate(u: Field, points: np.ndarray, extend: bool = False) -> np.ndarray:
    """Cubic interpolation of ``u`` at ``points`` (shape (..., n)).

    Points outside the box raise unless ``extend`` is set, in which case they are
    clamped to the boundary (constant extension, matching a zero-flux wall).
    """
    pts = np.asarray(points, dtype=float)
    L = u.half_width
    outside = np.abs(pts) > L * (1 + 1e-12)
    if np.any(outside):
        if not extend:
            raise ValueError("interpolation points leave the grid box")
        pts = np.clip(pts, -L, L)
    if u.dim == 1:
        spline = CubicSpline(u.axis(), u.values)
        return spline(pts[..., 0])
    interp = RegularGridInterpolator((u.axis(),) * u.dim, u.values, method="cubic")
    flat = pts.reshape(-1, u.dim)
    return interp(flat).reshape(pts.shape[:-1])


def scaling_transform(u: Field, lam: float, p: float, extend: bool = True) -> Field:
    """Return λ^{2/(p-1)} u(λ x) on the same grid."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam == 1.0:
        return u.like(u.values.copy())
    vals = interpolate(u, lam * u.coords(), extend=extend)
    return u.like(lam ** (2.0 / (p - 1.0)) * vals)


def energy(u: Field, p: float) -> float:
    """Trapezoidal approximation of ∫ ½|∇u|² - |u|^{p+1}/(p+1) dx."""
    h = u.spacing
    grads = np.gradient(u.values, h, edge_order=2) if u.dim > 1 else [np.gradient(u.values, h, edge_order=2)]
    dens = 0.5 * sum(g**2 for g in grads) - np.abs(u.values) ** (p + 1) / (p + 1)
    out = dens
    for _ in range(u.dim):
        out = trapezoid(out, dx=h, axis=0)
    return float(out)
