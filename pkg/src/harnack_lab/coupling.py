"""Forced-drift coupling of two solutions and its Girsanov weight.

The second copy ``Y`` receives the extra drift ``kappa * sign(X_j - Y_j) dell_j``
until coordinate j meets ``X``; from then on ``Y_j`` is glued to ``X_j``.  The
weight ``R = exp(M - <M>/2)`` with ``dM = -sum_j h_j dW_j`` turns ``Y`` back
into a solution of the uncoupled equation.

Discrete meeting rule: in the step where the full forced move would reach or
cross ``X_j`` (or where the drift alone flips the sign of ``X_j - Y_j``) the
forcing rate is reduced to ``h_j = (predicted gap) / dell_j`` so that
``Y_j`` lands exactly on ``X_j``.  ``h_j`` is computed from information at the
start of the step only, so ``exp(M - <M>/2)`` is an exact discrete martingale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rho as rho_mod
from .errors import DomainError, NumericalError, PreconditionError
from .montecarlo import derive_substream, map_blocks, mean_se
from .paths import ClockPath, brownian_increments, regularize_clock, sample_subordinator
from .sde import _step_guard

DEFAULT_EPSILON = 0.9
DEFAULT_REGULARIZE_N = 10_000
SUCCESS_TOL = 1e-6

__all__ = [
    "CouplingConfig",
    "CoupledTrajectory",
    "CoupledBatch",
    "GirsanovWeight",
    "kappa_T",
    "simulate_coupled",
    "couple_batch",
    "girsanov_weight",
    "coupling_diagnostics",
    "law_identification",
]


@dataclass
class CouplingConfig:
    T: float
    x: np.ndarray
    y: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    rho: rho_mod.RhoModulus = field(default_factory=lambda: rho_mod.linear(1.0))
    tol_meet: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if not 0 < self.epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")
        if not self.T > 0:
            raise DomainError("T must be positive")
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise DomainError("x and y must be vectors of equal length")
        if self.tol_meet is None:
            self.tol_meet = 1e-9 * (1.0 + self.distance)
        if self.tol_meet < 0:
            raise DomainError("tol_meet must be >= 0")

    @property
    def d(self):
        return self.x.size

    @property
    def distance(self):
        return float(np.abs(self.x - self.y).sum())

    def gamma(self):
        return rho_mod.gamma_rho(self.rho, self.d * self.T, self.distance)


def kappa_T(rho, T, x, y, ell, epsilon, d):
    """Gamma(dT, ||x - y||_1) / min_j ell_j(epsilon T); batch clocks give an array."""
    r = float(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)).sum())
    floor = np.min(ell.elapsed(epsilon * T), axis=-1)
    if r == 0:
        return np.zeros_like(floor)[()] if np.ndim(floor) else 0.0
    if np.any(floor <= 0):
        raise PreconditionError("clock is flat on [0, epsilon T]; regularize it before coupling")
    out = rho_mod.gamma_rho(rho, d * T, r) / floor
    return float(out) if np.ndim(out) == 0 else out


def _coupled_kernel(b, x0, y0, dt, dl, dW, kappa, tol, keep_path=False):
    """Vectorized coupled Euler scheme over a batch of shape (B, n, d)."""
    B, n, d = dl.shape
    X = np.broadcast_to(x0, (B, d)).astype(float)
    Y = np.broadcast_to(y0, (B, d)).astype(float)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (B,))[:, None]
    met = np.abs(X - Y) <= tol
    Y = np.where(met, X, Y)
    tau = np.where(met, 0.0, np.inf)
    M = np.zeros(B)
    bracket = np.zeros(B)
    budget = np.zeros(B)
    grid = np.concatenate([[0.0], np.cumsum(dt)])
    if keep_path:
        path = {"X": [X.copy()], "Y": [Y.copy()], "met": [met.copy()], "M": [M.copy()], "bracket": [bracket.copy()]}
    for i in range(n):
        bx, by = b(X), b(Y)
        _step_guard(X, bx, dt[i])
        _step_guard(Y, by, dt[i])
        dli, dWi = dl[:, i, :], dW[:, i, :]
        Z = X - Y
        sgn = np.sign(Z)
        active = ~met
        zpred = Z + (bx - by) * dt[i]
        full = kappa * dli
        hit = active & ((np.abs(zpred) <= full + tol) | (np.sign(zpred) * sgn < 0))
        h = np.where(hit, zpred / dli, kappa * sgn)
        h = np.where(active, h, 0.0)
        Xn = X + bx * dt[i] + dWi
        Yn = Y + by * dt[i] + dWi + h * dli
        Yn = np.where(met | hit, Xn, Yn)
        M -= (h * dWi).sum(axis=1)
        bracket += (h * h * dli).sum(axis=1)
        budget += (np.abs(h) * dli).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.clip(np.where(kappa > 0, np.abs(h) / kappa, 1.0), 0.0, 1.0)
        tau = np.where(hit, grid[i] + frac * dt[i], tau)
        met = met | hit
        X, Y = Xn, Yn
        if keep_path:
            for key, val in (("X", X), ("Y", Y), ("met", met), ("M", M), ("bracket", bracket)):
                path[key].append(val.copy())
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NumericalError("non-finite coupled state")
    out = {"X_T": X, "Y_T": Y, "tau": tau, "M": M, "bracket": bracket, "budget": budget}
    if keep_path:
        out.update({"path_" + k: np.stack(v, axis=1) for k, v in path.items()})
    return out


@dataclass
class CoupledTrajectory:
    grid: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    tau: np.ndarray
    met: np.ndarray
    M: np.ndarray
    bracket: np.ndarray
    kappa: float
    budget: float
    gamma: float
    clock_floor: float
    max_dl: float

    @property
    def T(self):
        return float(self.grid[-1])


@dataclass
class GirsanovWeight:
    R: float
    M_inf: float
    bracket_inf: float
    bound: float = math.nan
    allowance: float = 0.0

    @property
    def log_R(self):
        return self.M_inf - 0.5 * self.bracket_inf

    @property
    def bound_slack(self):
        return self.bound + self.allowance - self.bracket_inf


def _require_strict(dl):
    if np.any(dl <= 0):
        raise PreconditionError("coupling needs a strictly increasing clock; apply regularize_clock first")


def simulate_coupled(b, cfg, ell, store):
    """One coupled trajectory along a strictly increasing clock."""
    if ell.values.ndim != 2:
        raise PreconditionError("simulate_coupled takes a single clock")
    dl = ell.increments
    _require_strict(dl)
    kappa = kappa_T(cfg.rho, cfg.T, cfg.x, cfg.y, ell, cfg.epsilon, cfg.d)
    dW = brownian_increments(store, ell)
    res = _coupled_kernel(b, cfg.x, cfg.y, np.diff(ell.grid), dl[None], dW[None], kappa, cfg.tol_meet, keep_path=True)
    return CoupledTrajectory(
        grid=ell.grid,
        X=res["path_X"][0],
        Y=res["path_Y"][0],
        tau=res["tau"][0],
        met=res["path_met"][0],
        M=res["path_M"][0],
        bracket=res["path_bracket"][0],
        kappa=float(kappa),
        budget=float(res["budget"][0]),
        gamma=cfg.gamma(),
        clock_floor=float(np.min(ell.elapsed(cfg.epsilon * cfg.T))),
        max_dl=float(dl.max()),
    )


def girsanov_weight(traj):
    """R = exp(M_inf - <M>_inf / 2) and the bracket bound Gamma^2 / min_j ell_j(eps T)."""
    m, q = float(traj.M[-1]), float(traj.bracket[-1])
    if traj.kappa == 0:
        return GirsanovWeight(1.0, m, q, 0.0, 0.0)
    return GirsanovWeight(
        math.exp(m - 0.5 * q), m, q, traj.gamma**2 / traj.clock_floor, traj.kappa**2 * traj.max_dl
    )


@dataclass
class CoupledBatch:
    """Terminal data of many coupled paths; row i is trial i."""

    T: float
    gamma: float
    X_T: np.ndarray
    Y_T: np.ndarray
    tau: np.ndarray
    M: np.ndarray
    bracket: np.ndarray
    kappa: np.ndarray
    budget: np.ndarray
    bound: np.ndarray
    allowance: np.ndarray
    trajectories: list = field(default_factory=list)

    @property
    def n(self):
        return self.M.size

    @property
    def R(self):
        return np.exp(self.M - 0.5 * self.bracket)

    @property
    def gap(self):
        return np.abs(self.X_T - self.Y_T).sum(axis=1)

    @classmethod
    def from_trajectories(cls, trajs):
        ws = [girsanov_weight(t) for t in trajs]
        return cls(
            T=trajs[0].T,
            gamma=trajs[0].gamma,
            X_T=np.array([t.X[-1] for t in trajs]),
            Y_T=np.array([t.Y[-1] for t in trajs]),
            tau=np.array([t.tau for t in trajs]),
            M=np.array([w.M_inf for w in ws]),
            bracket=np.array([w.bracket_inf for w in ws]),
            kappa=np.array([t.kappa for t in trajs]),
            budget=np.array([t.budget for t in trajs]),
            bound=np.array([w.bound for w in ws]),
            allowance=np.array([w.allowance for w in ws]),
            trajectories=list(trajs),
        )


def regularized_clocks(spec, T, n_steps, size, rng, regularize_n):
    raw = sample_subordinator(spec, T, n_steps, rng, size=size)
    return regularize_clock(raw, regularize_n) if regularize_n else raw


def couple_batch(b, cfg, spec, n_steps, n_paths, seed, workers=None, regularize_n=DEFAULT_REGULARIZE_N, keep=0):
    """Coupled paths with a fresh regularized clock per trial.

    ``keep`` full trajectories (the first trials) are retained for export.
    """
    if spec.d != cfg.d or b.d != cfg.d:
        raise PreconditionError("drift, subordinator and initial points disagree on d")
    dt = np.full(n_steps, cfg.T / n_steps)
    gamma = cfg.gamma()

    def block(k, size):
        ell = regularized_clocks(spec, cfg.T, n_steps, size, derive_substream(seed, k, "couple/clock"), regularize_n)
        dl = ell.increments
        _require_strict(dl)
        kappa = kappa_T(cfg.rho, cfg.T, cfg.x, cfg.y, ell, cfg.epsilon, cfg.d)
        dW = np.sqrt(dl) * derive_substream(seed, k, "couple/noise").standard_normal(dl.shape)
        res = _coupled_kernel(b, cfg.x, cfg.y, dt, dl, dW, kappa, cfg.tol_meet, keep_path=(k == 0 and keep > 0))
        floor = np.min(ell.elapsed(cfg.epsilon * cfg.T), axis=-1)
        res["kappa"] = np.broadcast_to(kappa, (size,)).astype(float)
        res["bound"] = np.where(res["kappa"] > 0, gamma**2 / floor, 0.0)
        res["allowance"] = res["kappa"] ** 2 * dl.max(axis=(1, 2))
        if k == 0 and keep > 0:
            res["kept"] = [
                CoupledTrajectory(
                    ell.grid, res["path_X"][i], res["path_Y"][i], res["tau"][i], res["path_met"][i],
                    res["path_M"][i], res["path_bracket"][i], float(res["kappa"][i]), float(res["budget"][i]), gamma,
                    float(floor[i]), float(dl[i].max()),
                )
                for i in range(min(keep, size))
            ]
        return res

    parts = map_blocks(block, n_paths, workers)
    cat = lambda key: np.concatenate([p[key] for p in parts])
    return CoupledBatch(
        T=cfg.T,
        gamma=gamma,
        X_T=cat("X_T"),
        Y_T=cat("Y_T"),
        tau=cat("tau"),
        M=cat("M"),
        bracket=cat("bracket"),
        kappa=cat("kappa"),
        budget=cat("budget"),
        bound=cat("bound"),
        allowance=cat("allowance"),
        trajectories=parts[0].get("kept", []),
    )


def coupling_diagnostics(trajectories, success_tol=SUCCESS_TOL):
    """Success rate, weight statistics, bracket-bound and meeting-time checks."""
    if isinstance(trajectories, CoupledBatch):
        batch = trajectories
    else:
        trajectories = list(trajectories)
        if not trajectories:
            raise DomainError("no trajectories to diagnose")
        batch = CoupledBatch.from_trajectories(trajectories)
    if batch.n == 0:
        raise DomainError("no trajectories to diagnose")
    R = batch.R
    mean_R, se_R = mean_se(R)
    excess = batch.bracket - batch.bound
    finite_tau = np.where(np.isfinite(batch.tau), batch.tau, np.nan)
    with np.errstate(all="ignore"):
        q = np.nanquantile(finite_tau, [0.5, 0.9, 0.99, 1.0]) if np.any(np.isfinite(batch.tau)) else [math.nan] * 4
    return {
        "n_paths": int(batch.n),
        "success_rate": float(np.mean(batch.gap <= success_tol)),
        "mean_R": mean_R,
        "se_R": se_R,
        "var_R": float(R.var(ddof=1)) if batch.n > 1 else 0.0,
        "max_R": float(R.max()),
        "max_bracket_violation": float(max(excess.max(), 0.0)),
        "bracket_within_allowance": bool(np.all(excess <= batch.allowance * (1 + 1e-9) + 1e-12)),
        "max_budget_excess": float(max((batch.budget - batch.gamma).max(), 0.0)),
        "tau_le_T_rate": float(np.mean(np.all(batch.tau <= batch.T, axis=1))),
        "tau_quantiles": {k: float(v) for k, v in zip(("q50", "q90", "q99", "max"), q)},
    }


def law_identification(batch, f, direct_terminal):
    """Compare E[R f(Y_T)] from the coupling with E f(X_T(y)) from a direct run."""
    w_mean, w_se = mean_se(batch.R * f(batch.Y_T))
    d_mean, d_se = mean_se(f(direct_terminal))
    se = math.hypot(w_se, d_se)
    return {
        "weighted": w_mean,
        "weighted_se": w_se,
        "direct": d_mean,
        "direct_se": d_se,
        "z": (w_mean - d_mean) / se if se > 0 else 0.0,
        "agrees": abs(w_mean - d_mean) <= 3 * se,
    }
