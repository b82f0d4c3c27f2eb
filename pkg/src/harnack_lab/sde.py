"""Drifts, the one-sided modulus check, and Euler solvers for dX = b(X)dt + dW_ell(t)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rho as rho_mod
from .errors import ConfigError, DomainError, NumericalError, PreconditionError
from .montecarlo import derive_substream, map_blocks
from .paths import BrownianStore, ClockPath, brownian_increments, regularize_clock, sample_subordinator

STIFFNESS_FACTOR = 10.0

__all__ = [
    "DriftSpec",
    "zero_drift",
    "ou_drift",
    "osgood_drift",
    "rot_decay_drift",
    "parse_drift",
    "ValidationReport",
    "validate_one_sided",
    "SolutionPath",
    "euler_paths",
    "solve_conditional",
    "solve_unconditional",
    "simulate_terminal",
]


@dataclass(frozen=True)
class DriftSpec:
    """A drift ``b`` acting on arrays of shape (..., d).

    ``separable`` marks drifts whose j-th component depends on x_j alone.
    """

    name: str
    d: int
    fn: Callable = field(repr=False)
    rho: rho_mod.RhoModulus = field(default_factory=rho_mod.osgood)
    lipschitz: float | None = None
    separable: bool = False

    def __call__(self, x):
        return self.fn(x)


def _zero(x):
    return np.zeros_like(x)


class _Linear:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def __call__(self, x):
        return x @ self.matrix.T


def _eta(s):
    with np.errstate(divide="ignore", invalid="ignore"):
        small = s * (1.0 - np.log(s))
    return np.where(s <= 0, 0.0, np.where(s <= 1.0, small, s))


def _osgood(x):
    return -np.sign(x) * _eta(np.abs(x))


def zero_drift(d, rho=None):
    return DriftSpec("zero", d, _zero, rho or rho_mod.osgood(), 0.0, True)


def ou_drift(d, lam=1.0, rho=None):
    if not lam >= 0:
        raise DomainError("OU rate must be non-negative")
    return DriftSpec(f"ou:{lam!r}", d, _Linear(-lam * np.eye(d)), rho or rho_mod.linear(1.0), float(lam), True)


def osgood_drift(d, rho=None):
    """b_j(x) = -sign(x_j) eta(|x_j|), continuous but not Lipschitz at 0."""
    return DriftSpec("osgood", d, _osgood, rho or rho_mod.osgood(), None, True)


def rot_decay_matrix(d):
    a = -np.eye(d)
    for j in range(d - 1):
        a[j, j + 1] += 1.0
        a[j + 1, j] -= 1.0
    return a


def rot_decay_drift(d, rho=None):
    """b(x) = A x with A = -I plus a tridiagonal skew part."""
    a = rot_decay_matrix(d)
    lip = float(np.abs(a).sum(axis=0).max())
    return DriftSpec("rot-decay", d, _Linear(a), rho or rho_mod.linear(1.0), lip, d == 1)


def parse_drift(text, d, rho=None):
    """``zero``, ``ou:<lambda>``, ``osgood`` or ``rot-decay``."""
    kind, _, arg = text.strip().partition(":")
    if kind == "zero" and not arg:
        return zero_drift(d, rho)
    if kind == "ou":
        try:
            lam = float(arg) if arg else 1.0
        except ValueError:
            raise ConfigError("model.drift", f"bad OU rate in {text!r}") from None
        return ou_drift(d, lam, rho)
    if kind == "osgood" and not arg:
        return osgood_drift(d, rho)
    if kind == "rot-decay" and not arg:
        return rot_decay_drift(d, rho)
    raise ConfigError("model.drift", f"unknown drift {text!r}")


@dataclass
class ValidationReport:
    n_pairs: int
    n_violations: int
    max_violation: float
    worst_pair: tuple | None
    lipschitz_violations: int = 0
    max_lipschitz_ratio: float | None = None

    @property
    def ok(self):
        return self.n_violations == 0 and self.lipschitz_violations == 0


def validate_one_sided(b, box, n_pairs, rng):
    """Check (x_j - y_j)(b_j(x) - b_j(y)) <= |x_j - y_j| rho(||x - y||_1) on random pairs.

    ``box`` is ``(low, high)``; pairs are uniform in the box, plus the pairs
    (e_j, 0) and (e_j, -e_j) scaled to the box which catch most sign errors.
    Also checks the declared Lipschitz constant in the l1 norm, if any.
    """
    if n_pairs < 1:
        raise DomainError("need n_pairs >= 1")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (b.d,)) for v in box)
    x = rng.uniform(lo, hi, (n_pairs, b.d))
    y = rng.uniform(lo, hi, (n_pairs, b.d))
    scale = np.minimum(np.abs(lo), np.abs(hi)).clip(min=1e-3)
    e = np.eye(b.d) * scale
    x = np.concatenate([x, e, e])
    y = np.concatenate([y, np.zeros_like(e), -e])
    z = x - y
    bz = b(x) - b(y)
    lhs = z * bz
    dist = np.abs(z).sum(axis=1)
    rhs = np.abs(z) * np.asarray(b.rho(dist))[:, None]
    excess = lhs - rhs - 1e-12 * (1.0 + np.abs(lhs))
    bad = excess > 0
    worst = int(np.argmax(excess.max(axis=1)))
    report = ValidationReport(
        n_pairs=x.shape[0],
        n_violations=int(bad.any(axis=1).sum()),
        max_violation=float(max(excess.max(), 0.0)),
        worst_pair=(x[worst].tolist(), y[worst].tolist()) if bad.any() else None,
    )
    if b.lipschitz is not None:
        keep = dist > 0
        ratio = np.abs(bz[keep]).sum(axis=1) / dist[keep]
        report.max_lipschitz_ratio = float(ratio.max())
        report.lipschitz_violations = int((ratio > b.lipschitz * (1 + 1e-12) + 1e-12).sum())
    return report


@dataclass
class SolutionPath:
    grid: np.ndarray
    states: np.ndarray
    clock: ClockPath
    store: BrownianStore | None = None

    @property
    def terminal(self):
        return self.states[-1]


def _step_guard(x, bx, dt):
    if not np.all(np.isfinite(bx)):
        bad = np.argwhere(~np.isfinite(bx))[0]
        raise NumericalError("non-finite drift value", state=x[tuple(bad[:-1])])
    if np.any(np.abs(bx).sum(axis=-1) * dt > STIFFNESS_FACTOR * (1.0 + np.abs(x).sum(axis=-1))):
        raise NumericalError("explicit Euler step too large for the drift; refine the grid")


def euler_paths(b, x0, dt, dW, keep_path=False):
    """Explicit Euler for a batch: ``x0`` (..., d), ``dt`` (n,), ``dW`` (..., n, d).

    Returns the terminal states or, with ``keep_path``, the states at every
    grid point with shape (..., n + 1, d).
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=float), dW.shape[-2:-1])
    x = np.broadcast_to(np.asarray(x0, dtype=float), dW.shape[:-2] + dW.shape[-1:]).copy()
    out = [x.copy()] if keep_path else None
    for i in range(dt.size):
        bx = b(x)
        _step_guard(x, bx, dt[i])
        x = x + bx * dt[i] + dW[..., i, :]
        if keep_path:
            out.append(x)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state", state=x)
    return np.stack(out, axis=-2) if keep_path else x


def solve_conditional(b, x0, ell, store):
    """Euler solution along a fixed clock, noise read from ``store``."""
    if ell.values.ndim != 2:
        raise PreconditionError("solve_conditional takes a single clock")
    if ell.d != b.d or store.d != b.d:
        raise PreconditionError("clock, store and drift dimensions differ")
    dW = brownian_increments(store, ell)
    states = euler_paths(b, x0, np.diff(ell.grid), dW, keep_path=True)
    return SolutionPath(ell.grid, states, ell, store)


def solve_unconditional(b, x0, spec, T, n_steps, rng):
    """X_T(x0): sample a clock, then solve along it with a fresh store."""
    clock_rng, noise_rng = rng.spawn(2)
    ell = sample_subordinator(spec, T, n_steps, clock_rng)
    return solve_conditional(b, x0, ell, BrownianStore(spec.d, noise_rng)).terminal


def noise_block(source, T, n_steps, size, seed, k, tag, regularize_n=None):
    """Clock increments (size, n, d) and matching Brownian increments for block k.

    ``source`` is a fixed :class:`ClockPath` (conditional runs) or a
    subordinator spec (a fresh clock per trial).
    """
    if isinstance(source, ClockPath):
        dl = np.broadcast_to(source.increments, (size,) + source.increments.shape)
    else:
        ell = sample_subordinator(source, T, n_steps, derive_substream(seed, k, tag + "/clock"), size=size)
        if regularize_n:
            ell = regularize_clock(ell, regularize_n)
        dl = ell.increments
    z = derive_substream(seed, k, tag + "/noise").standard_normal(dl.shape)
    return dl, np.sqrt(dl) * z


def simulate_terminal(
    b, starts, source, T, n_steps, n, seed, workers=None, tag="terminal", with_clock=False, regularize_n=None
):
    """Terminal states from each start in ``starts`` (K, d) under common noise.

    Returns an array (K, n, d); with ``with_clock`` also the per-trial clock
    totals ell(T) of shape (n, d).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if isinstance(source, ClockPath):
        dt = np.diff(source.grid)
        T, n_steps = source.T, dt.size
    else:
        dt = np.full(n_steps, T / n_steps)

    def block(k, size):
        dl, dW = noise_block(source, T, n_steps, size, seed, k, tag, regularize_n)
        xs = np.stack([euler_paths(b, s, dt, dW) for s in starts])
        return xs, dl.sum(axis=-2)

    parts = map_blocks(block, n, workers)
    xs = np.concatenate([p[0] for p in parts], axis=1)
    if with_clock:
        return xs, np.concatenate([p[1] for p in parts])
    return xs
