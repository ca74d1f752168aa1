"""End-to-end blowup studies: initial data, dynamic rescaling with per-step splitting, fits and export."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .blowup_frame import PSD_TOL, ModulationState, RescaledOperator, RescaledTrajectory, to_blowup_vars
from .modulation import MajorantReport, beta_tilde, majorants
from .pde_core import Field, SolveConfig, SolverDivergence, Trajectory, interpolate, solve_direct
from .profile_manifold import SplitFailure, SplitResult, V_values, split

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class BlowupFitError(RuntimeError):
    pass


@dataclass
class StudyConfig:
    p: float = 3.0
    n: int = 1
    h: float = 0.05  # spacing of both the physical and the rescaled grid
    L: float | None = None  # physical half-width; default covers the rescaled window
    Y: float | None = None  # rescaled half-width; default 20/sqrt(β(0))
    c0: float = 1.0
    b0: float | list = 0.05
    delta0: float = 1e-3
    delta3_scale: float = 1.0  # δ3 = delta3_scale · ‖b0‖²
    bumps: int = 4
    dtau: float = 0.01
    cutoff: float = 1e6
    R: float = 2.0
    seed: int = 0
    sample_every: int = 10
    max_steps: int = 20000
    split_tol: float = 1e-11
    zeta_bound: float = 1.0
    direct_check: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigError("p must exceed 1")
        if self.n not in (1, 2, 3):
            raise ConfigError("n must be 1, 2 or 3")
        if not 1.0 <= self.c0 <= 4.0:
            raise ConfigError("c0 must lie in [1, 4]")
        b = self.b0_matrix
        if not np.allclose(b, b.T) or np.linalg.eigvalsh(b).min() < 0:
            raise ConfigError("b0 must be symmetric positive semidefinite")
        if np.linalg.norm(b, 2) > 0.25:
            raise ConfigError("b0 must be small (spectral norm <= 0.25)")
        if not 0 <= self.delta0 <= 0.1:
            raise ConfigError("delta0 must lie in [0, 0.1]")
        if self.delta3_scale < 0 or self.bumps < 1:
            raise ConfigError("invalid perturbation recipe")
        for name in ("h", "dtau", "R"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.cutoff > 1:
            raise ConfigError("cutoff must exceed 1")
        if self.sample_every < 1 or self.max_steps < 1:
            raise ConfigError("sample_every and max_steps must be positive")
        Y = self.window
        if self.L is not None and self.L * self.lambda0 < Y:
            raise ConfigError("physical grid does not cover the rescaled window")

    @property
    def b0_matrix(self) -> np.ndarray:
        b = np.asarray(self.b0, dtype=float)
        if b.ndim == 0:
            return float(b) * np.eye(self.n)
        b = np.atleast_2d(b)
        if b.shape != (self.n, self.n):
            raise ConfigError("b0 must be a scalar or an n x n matrix")
        return b

    @property
    def lambda0(self) -> float:
        return float(np.sqrt(self.c0 + 2.0 * np.trace(self.b0_matrix) / (self.p - 1.0)))

    @property
    def window(self) -> float:
        if self.Y is not None:
            return self.h * np.ceil(self.Y / self.h - 1e-9)
        beta = float(np.linalg.eigvalsh(self.b0_matrix).max()) / self.lambda0**2
        Y = 20.0 / np.sqrt(beta) if beta > 0 else 40.0
        return self.h * np.ceil(Y / self.h - 1e-9)

    @property
    def half_width(self) -> float:
        L = self.L if self.L is not None else self.window / self.lambda0 + 2 * self.h
        return self.h * np.ceil(L / self.h - 1e-9)

    @property
    def delta3(self) -> float:
        return self.delta3_scale * float(np.linalg.norm(self.b0_matrix, 2)) ** 2


@dataclass
class StudyReport:
    config: StudyConfig
    t_star: float
    t: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    b: np.ndarray  # (k, n, n)
    zeta: np.ndarray  # (k, n)
    majorants: list
    splits: list = field(default_factory=list)
    beta_tilde: np.ndarray | None = None
    truncated: bool = False
    notes: list = field(default_factory=list)
    profile: "ProfileCheck | None" = None
    decade: np.ndarray | None = None
    direct_discrepancy: float = float("nan")
    runtime: float = 0.0
    last_field: Field | None = None

    def __post_init__(self):
        k = len(self.t)
        for name in ("tau", "lam", "a", "b", "zeta"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"series {name} has inconsistent length")

    @property
    def c(self) -> np.ndarray:
        return self.a + 0.5

    @property
    def beta(self) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(bb).max() for bb in self.b]) if len(self.b) else np.array([])

    @property
    def remaining(self) -> np.ndarray:
        return self.t_star - self.t

    @property
    def lambda_ratio(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.lam * np.sqrt(self.remaining)

    @property
    def b_ratio(self) -> np.ndarray:
        p = self.config.p
        with np.errstate(invalid="ignore", divide="ignore"):
            return 4 * p * np.abs(np.log(self.remaining)) * self.beta / (p - 1.0) ** 2

    @property
    def zeta_max(self) -> float:
        return float(np.max(np.abs(self.zeta))) if len(self.zeta) else 0.0

    def fluctuation_trajectory(self) -> RescaledTrajectory:
        traj = RescaledTrajectory()
        for s in self.splits:
            traj.append(s.mu.tau, s.xi, s.mu)
        return traj

    def final_decade(self) -> np.ndarray:
        """Mask of samples with t* - t in [s_end, 10 s_end], s_end the last remaining time."""
        if self.decade is not None:
            return self.decade
        r = self.remaining
        return (r >= r[-1]) & (r <= 10 * r[-1])


# --- initial data -------------------------------------------------------------------

def profile(x: np.ndarray, c0: float, b0: np.ndarray, p: float) -> np.ndarray:
    """(c0/(p-1+x b0 x))^{1/(p-1)} at points (..., n)."""
    return V_values(c0 - 0.5, b0, p, x)


def perturbation_shape(cfg: StudyConfig, grid: Field) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    x = grid.coords()
    out = np.zeros(grid.values.shape)
    for _ in range(cfg.bumps):
        c = rng.uniform(-5, 5, size=cfg.n)
        out += rng.standard_normal() * np.exp(-np.sum((x - c) ** 2, axis=-1))
    return out


def weighted_norm(f: Field, m: float) -> float:
    """‖⟨x⟩^{-m} f‖_∞ on the grid."""
    r2 = np.sum(f.coords() ** 2, axis=-1)
    return float(np.max(np.abs(f.values) * (1 + r2) ** (-m / 2)))


def make_initial_data(cfg: StudyConfig) -> Field:
    """Profile plus a seeded bump perturbation scaled to meet both the δ0 (m=0) and δ3 (m=3) budgets."""
    grid = Field.constant(0.0, cfg.n, cfg.h, cfg.half_width)
    base = profile(grid.coords(), cfg.c0, cfg.b0_matrix, cfg.p)
    eta = grid.like(perturbation_shape(cfg, grid))
    n0, n3 = eta.sup(), weighted_norm(eta, 3)
    if n0 == 0 or n3 == 0:
        raise ConfigError("perturbation vanishes on the grid")
    s = min(cfg.delta0 / n0, cfg.delta3 / n3)
    return grid.like(base + s * eta.values)


def initial_state(cfg: StudyConfig) -> ModulationState:
    lam = cfg.lambda0
    return ModulationState(a=cfg.c0 / lam**2 - 0.5, b=cfg.b0_matrix / lam**2, z=np.zeros(cfg.n),
                           alpha=np.zeros(cfg.n), lam=lam)


# --- t* fitting ---------------------------------------------------------------------

def fit_blowup_time(traj: Trajectory, p: float, resolved: float = 0.1) -> float:
    """Zero crossing of a linear fit of (sup u)^{-(p-1)} against t.

    Only resolved samples (dt · M^{p-1} <= ``resolved``) are used, and among those
    the final decade of w = M^{-(p-1)}. Raises BlowupFitError if the cutoff was not
    reached or the sup norm is not increasing in the window.
    """
    if not traj.cutoff_reached:
        raise BlowupFitError("trajectory did not reach the blowup cutoff")
    t = np.asarray(traj.sup_times, dtype=float)
    M = np.asarray(traj.sup_norms, dtype=float)
    dt = np.diff(t, prepend=t[0] - (t[1] - t[0]) if len(t) > 1 else 1.0)
    ok = np.cumprod(dt * M ** (p - 1.0) <= resolved).astype(bool)
    t, M = t[ok], M[ok]
    if len(t) < 3:
        raise BlowupFitError("fewer than three resolved samples")
    w = M ** (-(p - 1.0))
    win = w <= 10 * w[-1]
    if win.sum() < 3:
        win = np.zeros_like(win)
        win[-3:] = True
    tw, ww = t[win], w[win]
    if np.any(np.diff(M[win]) <= 0):
        raise BlowupFitError("sup norm is not increasing in the fit window")
    slope, icpt = np.polyfit(tw - tw[-1], ww, 1)
    if slope >= 0:
        raise BlowupFitError("fitted w = M^{-(p-1)} is not decreasing")
    return float(tw[-1] - icpt / slope)


# --- the study ------------------------------------------------------------------------

def _recenter(v: Field, shift: np.ndarray) -> Field:
    vals = interpolate(v, v.coords() + shift, extend=True)
    return v.like(vals)


def run_blowup_study(cfg: StudyConfig) -> StudyReport:
    """Dynamic rescaling of the theorem-class data with a split after every step.

    The rescaled field v(y, τ) lives on a fixed window around the anchor x0 with
    y = λ(x - x0). The split supplies (a, b) and a y-shift s of the almost solution;
    a closes the loop through d ln λ/dτ = a, and ζ = x0 + s/λ. When |s| exceeds a
    grid spacing the window is re-anchored at ζ.
    """
    t0 = time.perf_counter()
    p, n = cfg.p, cfg.n
    u0 = make_initial_data(cfg)
    state = initial_state(cfg)
    Y = cfg.window
    v = to_blowup_vars(u0, state, p, half_width=Y, spacing=cfg.h)
    op = RescaledOperator(v, p)
    anchor = np.zeros(n)
    lam, t, tau = state.lam, 0.0, 0.0
    mu = state.replace(lam=1.0)  # splits act on v itself

    rows = dict(t=[], tau=[], lam=[], a=[], b=[], zeta=[])
    splits: list[SplitResult] = []
    sup_t, sup_u = [], []
    notes = []
    truncated = False
    cutoff = False
    last = v

    def record(res: SplitResult, zeta):
        rows["t"].append(t)
        rows["tau"].append(tau)
        rows["lam"].append(lam)
        rows["a"].append(res.mu.a)
        rows["b"].append(res.mu.b.copy())
        rows["zeta"].append(zeta.copy())
        splits.append(SplitResult(res.mu.replace(lam=lam, t=t, tau=tau, z=zeta, alpha=np.zeros(n)),
                                  res.xi, res.residual, res.iterations))

    for k in range(cfg.max_steps + 1):
        try:
            res = split(v, mu.replace(tau=tau), p, tol=cfg.split_tol)
        except SplitFailure as exc:
            truncated = True
            notes.append(f"split failed at step {k}, tau={tau:.6g}: {exc}")
            break
        shift = res.mu.z
        if np.max(np.abs(shift)) > cfg.h:
            v = _recenter(v, shift)
            anchor = anchor + shift / lam
            res = split(v, res.mu.replace(z=np.zeros(n), tau=tau), p, tol=cfg.split_tol)
            shift = res.mu.z
        zeta = anchor + shift / lam
        mu = res.mu
        M = lam ** (2.0 / (p - 1.0)) * v.sup()
        sup_t.append(t)
        sup_u.append(M)
        last = v
        if M > cfg.cutoff:
            record(res, zeta)
            cutoff = True
            break
        if k % cfg.sample_every == 0:
            record(res, zeta)
        if k % 500 == 0:
            log.info("step %d tau=%.3f lambda=%.4g a=%.6f sup u=%.4g", k, tau, lam, res.mu.a, M)
        if k == cfg.max_steps:
            notes.append("max_steps reached before the cutoff")
            truncated = True
            break
        a = res.mu.a
        try:
            vals = op.step(v.values.ravel(), a, cfg.dtau)
        except Exception as exc:  # pragma: no cover - linear algebra failure
            raise SolverDivergence(str(exc), k) from exc
        if not np.all(np.isfinite(vals)):
            truncated = True
            notes.append(f"non-finite rescaled field at step {k}")
            break
        v = v.like(vals.reshape(v.values.shape))
        x = -2 * a * cfg.dtau
        t += cfg.dtau / lam**2 * (np.expm1(x) / x if x != 0 else 1.0)
        lam *= np.exp(a * cfg.dtau)
        tau += cfg.dtau

    traj = Trajectory(sup_times=sup_t, sup_norms=sup_u, cutoff_reached=cutoff, steps=len(sup_t))
    try:
        t_star = fit_blowup_time(traj, p)
    except BlowupFitError as exc:
        notes.append(f"t* fit failed: {exc}")
        truncated = True
        t_star = float("nan")

    b_first = rows["b"][0] if rows["b"] else cfg.b0_matrix
    report = StudyReport(
        config=cfg,
        t_star=t_star,
        t=np.array(rows["t"]),
        tau=np.array(rows["tau"]),
        lam=np.array(rows["lam"]),
        a=np.array(rows["a"]),
        b=np.array(rows["b"]).reshape(-1, n, n),
        zeta=np.array(rows["zeta"]).reshape(-1, n),
        majorants=majorants(splits, p),
        splits=splits,
        truncated=truncated,
        notes=notes,
        last_field=last,
    )
    if np.linalg.eigvalsh(b_first).min() > PSD_TOL:
        report.beta_tilde = np.array([np.linalg.eigvalsh(beta_tilde(s, b_first, p)).max() for s in report.tau])
    if report.zeta_max > cfg.zeta_bound:
        notes.append(f"zeta left the configured bound: {report.zeta_max:.3g}")
    if np.isfinite(t_star):
        report.profile = profile_check(report.fluctuation_trajectory(), t_star, p, cfg.R)
    if cfg.direct_check and n == 1:
        report.direct_discrepancy = direct_cross_check(cfg, u0, report)
    report.runtime = time.perf_counter() - t0
    return report


def direct_cross_check(cfg: StudyConfig, u0: Field, report: StudyReport, growth: float = 3.0) -> float:
    """Relative sup-norm discrepancy between a physical-variable solve and the rescaled run.

    The physical solve stops once sup u has grown by ``growth``; it is compared at
    the recorded times it reaches.
    """
    if len(report.t) < 2:
        return float("nan")
    M = report.lam ** (2.0 / (cfg.p - 1.0)) * np.array(
        [np.max(V_values(s.mu.a, s.mu.b, cfg.p, s.xi.coords()) + s.xi.values) for s in report.splits])
    keep = M <= growth * M[0]
    t_end = float(report.t[keep][-1])
    if t_end <= 0:
        return float("nan")
    dt = min(cfg.dtau / (10 * cfg.lambda0**2), t_end / 50)
    scfg = SolveConfig(p=cfg.p, dt=dt, t_end=t_end, boundary="neumann_zero", blowup_cutoff=1e300,
                       save_every=10**9)
    tr = solve_direct(u0, scfg)
    sup_direct = np.interp(report.t[keep], tr.sup_times, tr.sup_norms)
    return float(np.max(np.abs(sup_direct / M[keep] - 1.0)))


# --- profile comparison -------------------------------------------------------------

@dataclass
class ProfileCheck:
    t: np.ndarray
    center: np.ndarray
    sup_error: np.ndarray
    target_center: float
    R: float

    def monotone_decreasing(self, mask: np.ndarray | None = None) -> bool:
        e = self.sup_error if mask is None else self.sup_error[mask]
        return bool(np.all(np.diff(e) < 0))


def target_profile(y: np.ndarray, p: float) -> np.ndarray:
    """(p-1)^{-1/(p-1)} [1 + (p-1)|y|²/(4p)]^{-1/(p-1)}."""
    r2 = np.sum(np.atleast_1d(y) ** 2, axis=-1) if np.ndim(y) > 1 else np.asarray(y) ** 2
    return (p - 1.0) ** (-1.0 / (p - 1.0)) * (1 + (p - 1.0) * r2 / (4 * p)) ** (-1.0 / (p - 1.0))


def profile_check(traj: RescaledTrajectory, t_star: float, p: float, R: float, points: int = 81) -> ProfileCheck:
    """Compare (t*-t)^{1/(p-1)} u(ζ + y((t*-t)|ln(t*-t)|)^{1/2}, t) with the limiting profile on |y| <= R.

    ``traj`` carries split results: fields are ξ on a y-grid centered at the almost
    solution, states carry λ, t, a, b and ζ (as z with α = 0). u is rebuilt as
    λ^{2/(p-1)} (V_ab + ξ)(λ(x - ζ)).
    """
    ts, centers, errs = [], [], []
    n = traj.states[0].n if traj.states else 1
    ax = np.linspace(-R, R, points if n == 1 else 21)
    ys = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    target = target_profile(ys, p)
    origin = np.zeros((1, n))
    for xi, st in zip(traj.fields, traj.states):
        rem = t_star - st.t
        if not rem > 0 or abs(np.log(rem)) == 0:
            continue
        scale = np.sqrt(rem * abs(np.log(rem)))
        pre = rem ** (1.0 / (p - 1.0)) * st.lam ** (2.0 / (p - 1.0))

        def u_scaled(y):
            yy = st.lam * scale * y
            return pre * (V_values(st.a, st.b, p, yy) + interpolate(xi, yy, extend=True))

        ts.append(st.t)
        centers.append(float(u_scaled(origin)[0]))
        errs.append(float(np.max(np.abs(u_scaled(ys) - target))))
    return ProfileCheck(np.array(ts), np.array(centers), np.array(errs),
                        float(target_profile(np.zeros((1, n)), p)[0]), R)


# --- export -------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def series_header(n: int) -> list[str]:
    cols = ["t", "tau", "lambda", "a", "c", "beta"]
    cols += [f"b{i + 1}{j + 1}" for i in range(n) for j in range(i, n)]
    cols += [f"zeta{i + 1}" for i in range(n)]
    cols += ["M1", "M2", "A", "B", "lambda_ratio", "b_ratio"]
    return cols


def export_report(report: StudyReport, out_dir: str, format: str = "csv") -> list[str]:
    """Write series.csv, profile.csv and summary.json into ``out_dir``; returns the paths."""
    if format != "csv":
        raise ValueError("only csv export is supported")
    os.makedirs(out_dir, exist_ok=True)
    n = report.config.n
    paths = []
    path = os.path.join(out_dir, "series.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series_header(n))
        lr, br = report.lambda_ratio, report.b_ratio
        for k in range(len(report.t)):
            mj: MajorantReport = report.majorants[k]
            b = report.b[k]
            row = [report.t[k], report.tau[k], report.lam[k], report.a[k], report.c[k], report.beta[k]]
            row += [b[i, j] for i in range(n) for j in range(i, n)]
            row += list(report.zeta[k])
            row += [mj.M1, mj.M2, mj.A, mj.B, lr[k], br[k]]
            w.writerow([_fmt(x) for x in row])
    paths.append(path)

    path = os.path.join(out_dir, "profile.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "center", "sup_error"])
        if report.profile is not None:
            for row in zip(report.profile.t, report.profile.center, report.profile.sup_error):
                w.writerow([_fmt(x) for x in row])
    paths.append(path)

    path = os.path.join(out_dir, "summary.json")
    cfg = asdict(report.config)
    summary = {
        "config": cfg,
        "t_star": _fmt(report.t_star),
        "truncated": report.truncated,
        "notes": list(report.notes),
        "zeta_max": _fmt(report.zeta_max),
        "direct_discrepancy": _fmt(report.direct_discrepancy),
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    paths.append(path)
    return paths


# --- configuration files and command line ----------------------------------------------

CONFIG_KEYS = {
    "problem.p": "p",
    "problem.n": "n",
    "grid.h": "h",
    "grid.L": "L",
    "grid.Y": "Y",
    "init.c0": "c0",
    "init.b0": "b0",
    "init.delta0": "delta0",
    "init.delta3_scale": "delta3_scale",
    "init.bumps": "bumps",
    "time.dt": "dtau",
    "time.cutoff": "cutoff",
    "time.max_steps": "max_steps",
    "study.R": "R",
    "study.sample_every": "sample_every",
    "study.zeta_bound": "zeta_bound",
    "study.direct_check": "direct_check",
    "seeds.master": "seed",
}
# sections read by the single-purpose subcommands, passed through untouched
EXTRA_SECTIONS = ("simulate", "modulation", "propagator", "fk")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_config(text: str) -> tuple[StudyConfig, dict]:
    """Parse JSON config text into a StudyConfig plus the extra per-subcommand sections.

    Keys may be nested ({"problem": {"p": 3}}) or dotted ({"problem.p": 3}).
    """
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    extras = {k: raw.pop(k) or {} for k in EXTRA_SECTIONS if k in raw}
    kw = {}
    for key, val in _flatten(raw).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kw[CONFIG_KEYS[key]] = val
    try:
        return StudyConfig(**kw), extras
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> tuple[StudyConfig, dict]:
    with open(path) as fh:
        return parse_config(fh.read())


def _write_rows(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) if not isinstance(x, str) else x for x in row])


def _cmd_simulate(cfg: StudyConfig, extra: dict, out: str) -> int:
    sec = extra.get("simulate", {})
    u0 = make_initial_data(cfg)
    scfg = SolveConfig(p=cfg.p, dt=float(sec.get("dt", cfg.dtau)), t_end=float(sec.get("t_end", 10.0)),
                       boundary=sec.get("boundary", "neumann_zero"), blowup_cutoff=cfg.cutoff, save_every=10**9)
    tr = solve_direct(u0, scfg)
    _write_rows(os.path.join(out, "sup_norm.csv"), ["t", "sup_u"], zip(tr.sup_times, tr.sup_norms))
    if not tr.cutoff_reached:
        log.warning("cutoff not reached by t_end")
        return 2
    t_star = fit_blowup_time(tr, cfg.p)
    print(f"t* = {_fmt(t_star)}")
    return 0


def _cmd_split(cfg: StudyConfig, extra: dict, out: str) -> int:
    from .profile_manifold import pack_mu
    u0 = make_initial_data(cfg)
    res = split(u0, initial_state(cfg), cfg.p, tol=cfg.split_tol)
    mu = pack_mu(res.mu.a, res.mu.b, res.mu.z)
    _write_rows(os.path.join(out, "split.csv"), ["index", "value"], [(str(i), v) for i, v in enumerate(mu)])
    print(f"a = {_fmt(res.mu.a)}  residual = {res.residual:.3e}  iterations = {res.iterations}  "
          f"sup|xi| = {res.xi.sup():.3e}")
    return 0


def _cmd_modulation(cfg: StudyConfig, extra: dict, out: str) -> int:
    from .modulation import integrate_modulation
    sec = extra.get("modulation", {})
    st = initial_state(cfg)
    tau_end = float(sec.get("tau_end", 1000.0))
    dtau = float(sec.get("dtau", 0.01))
    every = max(1, int(round(float(sec.get("record", 1.0)) / dtau)))
    path = integrate_modulation(st.a, st.b, cfg.p, tau_end, dtau=dtau, slaved=bool(sec.get("slaved", False)),
                                record_every=every)
    n = cfg.n
    header = ["tau", "a"] + [f"b{i + 1}{j + 1}" for i in range(n) for j in range(i, n)] + ["beta", "beta_tilde"]
    rows = []
    for tau, a, b in zip(path.taus, path.a, path.b):
        bt = np.linalg.eigvalsh(beta_tilde(tau, st.b, cfg.p)).max() if np.linalg.eigvalsh(st.b).min() > 0 else 0.0
        rows.append([tau, a] + [b[i, j] for i in range(n) for j in range(i, n)] + [np.linalg.eigvalsh(b).max(), bt])
    _write_rows(os.path.join(out, "modulation.csv"), header, rows)
    for note in path.notes:
        log.warning(note)
    return 0 if path.psd_ok and path.attracting else 2


def _cmd_propagator(cfg: StudyConfig, extra: dict, out: str) -> int:
    from .linear_analysis import measure_propagator_decay
    sec = extra.get("propagator", {})
    alpha = float(sec.get("alpha", 0.5))
    fit = measure_propagator_decay(alpha, float(sec.get("beta", 1e-3)), float(sec.get("horizon", 80.0)),
                                   p=cfg.p, n=int(sec.get("n", 1)), seed=cfg.seed)
    _write_rows(os.path.join(out, "propagator.csv"), ["sigma", "weighted_sup"], zip(fit.sigmas, fit.norms))
    print(f"rate = {fit.rate:.6f} ({fit.rate / alpha:.4f} alpha)  R2 = {fit.r2:.5f}"
          + ("  [inconclusive]" if fit.inconclusive else ""))
    return 2 if fit.inconclusive else 0


FK_POTENTIALS = {
    "quadratic": lambda z: -0.01 * z**2,
    "lorentzian": lambda z: -0.5 / (1 + z**2),
    "cosine": lambda z: 0.3 * np.cos(z),
}


def _cmd_fk(cfg: StudyConfig, extra: dict, out: str) -> int:
    from .ou_feynman_kac import OUBridgeConfig, direct_kernel, fk_kernel
    sec = extra.get("fk", {})
    alpha, r = float(sec.get("alpha", 0.5)), float(sec.get("r", 1.0))
    x, y = float(sec.get("x", 0.3)), float(sec.get("y", -0.4))
    bcfg = OUBridgeConfig(alpha, 0.0, r, int(sec.get("n_paths", 10000)), int(sec.get("n_steps", 256)), seed=cfg.seed)
    rows, worst = [], 0.0
    for name in sec.get("potentials", list(FK_POTENTIALS)):
        V = FK_POTENTIALS[name]
        est = fk_kernel(bcfg, lambda z, s, V=V: V(z[..., 0]), x, y)
        ref = direct_kernel(x, y, r, alpha, V)
        z = (est.mean - ref) / est.std_error if est.std_error > 0 else 0.0
        worst = max(worst, abs(z))
        rows.append([name, est.mean, est.std_error, ref, z])
        print(f"{name:>10}: MC {est.mean:.8f} +- {est.std_error:.2e}  direct {ref:.8f}  z = {z:+.2f}")
    _write_rows(os.path.join(out, "fk.csv"), ["potential", "mc_mean", "mc_std_error", "direct", "z_score"], rows)
    return 0 if worst <= 3 else 2


def _cmd_study(cfg: StudyConfig, extra: dict, out: str) -> int:
    rep = run_blowup_study(cfg)
    export_report(rep, out)
    m = rep.final_decade() if len(rep.t) else np.array([], bool)
    if np.any(m):
        print(f"t* = {_fmt(rep.t_star)}  lambda_ratio in [{rep.lambda_ratio[m].min():.4f}, "
              f"{rep.lambda_ratio[m].max():.4f}]  b_ratio in [{rep.b_ratio[m].min():.4f}, {rep.b_ratio[m].max():.4f}]"
              f"  max|c-1| = {np.abs(rep.c[m] - 1).max():.4f}  max|zeta| = {rep.zeta_max:.3g}")
    for note in rep.notes:
        log.warning(note)
    return 2 if rep.truncated else 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "split": _cmd_split,
    "modulation": _cmd_modulation,
    "propagator": _cmd_propagator,
    "fk": _cmd_fk,
    "study": _cmd_study,
}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="blowup-lab", description="Blowup experiments for u_t = Δu + |u|^{p-1}u.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", nargs="?", help="JSON config file (defaults apply when omitted)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override seeds.master")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, extra = load_config(args.config) if args.config else (StudyConfig(), {})
        if args.seed is not None:
            cfg = StudyConfig(**{**asdict(cfg), "seed": args.seed})
        cfg.out_dir = args.out
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, extra, args.out)
    except (ConfigError, KeyError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    except (BlowupFitError, SplitFailure, SolverDivergence) as exc:
        print(f"pipeline truncated: {exc}", file=sys.stderr)
        return 2
