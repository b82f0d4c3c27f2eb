"""Subordinators, clocks, lazily refined Brownian paths and subordinated BM.

Each coordinate j of the noise is ``L_j(t) = W_j(S_j(t))`` where ``S_j`` is an
independent subordinator.  Built-in subordinator laws:

* ``StableLaw(alpha)``       Laplace exponent lam ** (alpha / 2), alpha in (0, 2)
* ``GammaLaw(shape, rate)``  Laplace transform (1 + lam / rate) ** (-shape t)
* ``CompoundPoissonLaw``     exponential jumps at ``rate`` plus a drift ``theta``

Monte Carlo helpers take an integer ``seed`` and draw through the block
substreams of :mod:`harnack_lab.montecarlo`.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError, PreconditionError
from .montecarlo import derive_substream, map_blocks, mean_se

__all__ = [
    "StableLaw",
    "GammaLaw",
    "CompoundPoissonLaw",
    "SubordinatorSpec",
    "parse_law",
    "ClockPath",
    "sample_subordinator",
    "sample_stable",
    "regularize_clock",
    "BrownianStore",
    "brownian_at",
    "levy_path",
    "levy_samples",
    "empirical_char_function",
    "char_function_modulus",
    "exact_char_function",
    "empirical_laplace",
    "MomentEstimate",
    "inverse_moment",
    "exp_inverse_moment",
    "fit_scaling",
]


def sample_stable(beta, size, rng):
    """Positive stable variates with E exp(-lam S) = exp(-lam ** beta).

    Kanter's representation: S = (A(U) / E) ** ((1 - beta) / beta) with U
    uniform on (0, pi), E standard exponential and A Zolotarev's function.
    """
    u = np.pi * (1.0 - rng.random(size))
    e = rng.standard_exponential(size)
    log_a = (
        beta * np.log(np.sin(beta * u))
        + (1.0 - beta) * np.log(np.sin((1.0 - beta) * u))
        - np.log(np.sin(u))
    ) / (1.0 - beta)
    return np.exp((1.0 - beta) / beta * (log_a - np.log(e)))


@dataclass(frozen=True)
class StableLaw:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise DomainError(f"stable index must lie in (0, 2), got {self.alpha}")

    deterministic = False

    @property
    def beta(self):
        return self.alpha / 2.0

    def increments(self, dt, size, rng):
        return dt ** (1.0 / self.beta) * sample_stable(self.beta, size, rng)

    def laplace(self, lam, t):
        return np.exp(-t * np.asarray(lam, dtype=float) ** self.beta)

    def inverse_moment(self, t):
        return math.gamma(1.0 + 2.0 / self.alpha) * t ** (-2.0 / self.alpha)

    def describe(self):
        return f"stable:{self.alpha!r}"


@dataclass(frozen=True)
class GammaLaw:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError("gamma subordinator needs shape > 0 and rate > 0")

    deterministic = False

    def increments(self, dt, size, rng):
        return rng.gamma(self.shape * dt, 1.0 / self.rate, size)

    def laplace(self, lam, t):
        return (1.0 + np.asarray(lam, dtype=float) / self.rate) ** (-self.shape * t)

    def inverse_moment(self, t):
        k = self.shape * t
        return self.rate / (k - 1.0) if k > 1 else math.inf

    def describe(self):
        return f"gamma:{self.shape!r}:{self.rate!r}"


@dataclass(frozen=True)
class CompoundPoissonLaw:
    rate: float
    jump_mean: float
    drift: float

    def __post_init__(self):
        if not (self.rate >= 0 and self.jump_mean >= 0):
            raise DomainError("compound Poisson needs rate >= 0 and jump_mean >= 0")
        if not self.drift > 0:
            raise DomainError("compound Poisson clocks need drift > 0 to stay strictly positive")

    @property
    def deterministic(self):
        return self.rate == 0 or self.jump_mean == 0

    def increments(self, dt, size, rng):
        if self.deterministic:
            return np.full(size, self.drift * dt)
        n = rng.poisson(self.rate * dt, size)
        jumps = rng.gamma(np.maximum(n, 1), self.jump_mean) * (n > 0)
        return self.drift * dt + jumps

    def laplace(self, lam, t):
        lam = np.asarray(lam, dtype=float)
        return np.exp(-t * (self.drift * lam + self.rate * (1.0 - 1.0 / (1.0 + self.jump_mean * lam))))

    def inverse_moment(self, t):
        if self.deterministic:
            return 1.0 / (self.drift * t)
        val, _ = integrate.quad(lambda lam: float(self.laplace(lam, t)), 0, np.inf, epsabs=1e-12, limit=200)
        return val

    def describe(self):
        if self.deterministic:
            return f"drift:{self.drift!r}"
        return f"cpoisson:{self.rate!r}:{self.jump_mean!r}:{self.drift!r}"


def parse_law(text):
    """``stable:<alpha>``, ``gamma:<shape>:<rate>``, ``cpoisson:<rate>:<mean>:<drift>``, ``drift:<theta>``."""
    kind, *args = text.strip().split(":")
    try:
        vals = [float(a) for a in args]
        if kind == "stable" and len(vals) == 1:
            return StableLaw(vals[0])
        if kind == "gamma" and len(vals) == 2:
            return GammaLaw(*vals)
        if kind == "cpoisson" and len(vals) == 3:
            return CompoundPoissonLaw(*vals)
        if kind == "drift" and len(vals) == 1:
            return CompoundPoissonLaw(0.0, 0.0, vals[0])
    except ValueError as exc:
        raise ConfigError("subordinator", f"bad law {text!r}: {exc}") from None
    raise ConfigError("subordinator", f"unsupported law {text!r}")


@dataclass(frozen=True)
class SubordinatorSpec:
    laws: tuple

    def __post_init__(self):
        if len(self.laws) < 1:
            raise DomainError("subordinator needs d >= 1")
        object.__setattr__(self, "laws", tuple(self.laws))

    @classmethod
    def parse(cls, items):
        return cls(tuple(parse_law(s) for s in items))

    @classmethod
    def stable(cls, *alphas):
        return cls(tuple(StableLaw(a) for a in alphas))

    @classmethod
    def drift(cls, d, theta=1.0):
        return cls(tuple(CompoundPoissonLaw(0.0, 0.0, theta) for _ in range(d)))

    @property
    def d(self):
        return len(self.laws)

    def terminal(self, t, size, rng):
        """Samples of S(t), shape ``(size, d)``; one draw per coordinate."""
        return np.stack([law.increments(t, size, rng) for law in self.laws], axis=-1)

    def increments(self, dt, n_steps, size, rng):
        """Clock increments, shape ``(size, n_steps, d)``."""
        return np.stack([law.increments(dt, (size, n_steps), rng) for law in self.laws], axis=-1)

    def inverse_moment_sum(self, t):
        return float(sum(law.inverse_moment(t) for law in self.laws))

    def describe(self):
        return [law.describe() for law in self.laws]


@dataclass
class ClockPath:
    """A non-decreasing clock on a grid.

    ``values`` has shape ``(n_grid, d)`` or ``(batch, n_grid, d)``.  Between grid
    points the clock is piecewise constant (``"step"``, the cadlag
    representation of a sampled pure-jump clock) or piecewise linear
    (``"linear"``, used for absolutely continuous clocks).  Beyond the last
    grid point it is extended by its final value.
    """

    grid: np.ndarray
    values: np.ndarray
    interpolation: str = "step"

    allow_offset = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 2 or self.grid[0] != 0:
            raise PreconditionError("clock grid must start at 0 and have at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise PreconditionError("clock grid must be strictly increasing")
        if self.values.ndim not in (2, 3) or self.values.shape[-2] != self.grid.size:
            raise PreconditionError("clock values must have shape (..., n_grid, d)")
        if not self.allow_offset and np.any(self.values[..., 0, :] != 0):
            raise PreconditionError("clock must start at 0")
        if np.any(self.values[..., 0, :] < 0):
            raise PreconditionError("clock values must be non-negative")
        if np.any(np.diff(self.values, axis=-2) < 0):
            raise PreconditionError("clock must be non-decreasing")
        if self.interpolation not in ("step", "linear"):
            raise PreconditionError(f"unknown interpolation {self.interpolation!r}")

    @property
    def d(self):
        return self.values.shape[-1]

    @property
    def T(self):
        return float(self.grid[-1])

    @property
    def increments(self):
        return np.diff(self.values, axis=-2)

    def is_strictly_increasing(self):
        return bool(np.all(self.increments > 0))

    def at(self, t):
        """Clock value at time ``t`` (shape ``(..., d)``)."""
        t = float(t)
        # tolerate round-off so that e.g. 0.9 * T hits a grid point
        k = int(np.searchsorted(self.grid, t * (1 + 1e-12) + 1e-300, side="right")) - 1
        k = min(max(k, 0), self.grid.size - 1)
        v = self.values[..., k, :]
        if self.interpolation == "linear" and k < self.grid.size - 1 and t > self.grid[k]:
            w = (t - self.grid[k]) / (self.grid[k + 1] - self.grid[k])
            v = v + w * (self.values[..., k + 1, :] - v)
        return v

    def elapsed(self, t):
        """Clock time accumulated on [0, t]: ``at(t) - at(0)``."""
        return self.at(t) - self.values[..., 0, :]

    def __getitem__(self, i):
        if self.values.ndim != 3:
            raise IndexError("not a batch of clocks")
        return type(self)(self.grid, self.values[i], self.interpolation)


def uniform_grid(T, n_steps):
    if not T > 0:
        raise DomainError("horizon T must be positive")
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    return np.linspace(0.0, float(T), int(n_steps) + 1)


def _clock_from_increments(spec, grid, inc):
    values = np.concatenate([np.zeros(inc.shape[:-2] + (1, inc.shape[-1])), np.cumsum(inc, axis=-2)], axis=-2)
    # pure-drift coordinates are exact multiples of the grid
    for j, law in enumerate(spec.laws):
        if law.deterministic:
            values[..., j] = law.drift * grid
    interp = "linear" if all(law.deterministic for law in spec.laws) else "step"
    return ClockPath(grid, values, interp)


def sample_subordinator(spec, T, n_steps, rng, size=None):
    """A clock on the uniform grid of ``n_steps`` steps over [0, T].

    With ``size`` the result holds a batch of independent clocks.
    """
    grid = uniform_grid(T, n_steps)
    dt = float(T) / n_steps
    inc = spec.increments(dt, n_steps, 1 if size is None else size, rng)
    if size is None:
        inc = inc[0]
    return _clock_from_increments(spec, grid, inc)


def _cumulative_integral(ell):
    """∫_0^{t_k} ell(s) ds at every grid point, shape like ``ell.values``."""
    dt = np.diff(ell.grid)[:, None]
    v = ell.values
    if ell.interpolation == "step":
        pieces = v[..., :-1, :] * dt
    else:
        pieces = 0.5 * (v[..., :-1, :] + v[..., 1:, :]) * dt
    zero = np.zeros(v.shape[:-2] + (1, v.shape[-1]))
    return np.concatenate([zero, np.cumsum(pieces, axis=-2)], axis=-2)


def _integral_at(ell, cum, u):
    """∫_0^u ell(s) ds for a vector of times ``u`` (constant extension past the end)."""
    grid = ell.grid
    k = np.clip(np.searchsorted(grid, u, side="right") - 1, 0, grid.size - 1)
    s = (u - grid[k])[:, None]
    v0 = ell.values[..., k, :]
    out = cum[..., k, :] + v0 * s
    if ell.interpolation == "linear":
        last = grid.size - 1
        k1 = np.minimum(k + 1, last)
        width = np.where(k < last, grid[k1] - grid[k], 1.0)[:, None]
        slope = np.where((k < last)[:, None], (ell.values[..., k1, :] - v0) / width, 0.0)
        inside = np.minimum(s, width)
        # linear part up to the next grid point; beyond the end the clock is flat
        out = cum[..., k, :] + v0 * s + slope * (inside * s - 0.5 * inside**2)
    return out


def regularize_clock(ell, n):
    """``n ∫_t^{t+1/n} ell(s) ds + t / n``: absolutely continuous, strictly increasing.

    Evaluated at the grid points of ``ell`` and returned as a linear clock.
    Decreases to ``ell`` as ``n`` grows.
    """
    if not n >= 1:
        raise DomainError("regularization parameter n must be >= 1")
    n = float(n)
    cum = _cumulative_integral(ell)
    upper = _integral_at(ell, cum, ell.grid + 1.0 / n)
    values = n * (upper - cum) + (ell.grid / n)[:, None]
    return RegularizedClock(ell.grid, values, "linear")


class RegularizedClock(ClockPath):
    """Output of :func:`regularize_clock`.

    The window integral makes the value at t = 0 positive, so this clock is
    exempt from the start-at-zero invariant.  Solvers only use increments and
    :meth:`ClockPath.elapsed`.
    """

    allow_offset = True


class BrownianStore:
    """Per-coordinate Brownian paths sampled lazily at query times.

    New times past the last stored one get an independent Gaussian increment;
    times between stored neighbours are drawn from the Brownian bridge.  Every
    value is memoized, so repeated queries return identical numbers.
    ``zero=True`` gives the degenerate store W = 0 used by deterministic tests.
    """

    def __init__(self, d, rng=None, zero=False):
        if d < 1:
            raise DomainError("store dimension must be >= 1")
        if rng is None and not zero:
            raise DomainError("a random store needs an rng")
        self.d = d
        self.rng = rng
        self.zero = zero
        self._times = [[0.0] for _ in range(d)]
        self._values = [[0.0] for _ in range(d)]
        self._memo = [{0.0: 0.0} for _ in range(d)]

    def query(self, coordinate, u):
        if not 0 <= coordinate < self.d:
            raise IndexError(f"coordinate {coordinate} out of range for d = {self.d}")
        u = float(u)
        if not u >= 0:
            raise DomainError("Brownian time must be non-negative")
        memo = self._memo[coordinate]
        if u in memo:
            return memo[u]
        times, values = self._times[coordinate], self._values[coordinate]
        k = bisect.bisect_left(times, u)
        if self.zero:
            w = 0.0
        elif k == len(times):
            w = values[-1] + math.sqrt(u - times[-1]) * self.rng.standard_normal()
        else:
            t0, t1 = times[k - 1], times[k]
            v0, v1 = values[k - 1], values[k]
            mean = v0 + (u - t0) / (t1 - t0) * (v1 - v0)
            sd = math.sqrt((u - t0) * (t1 - u) / (t1 - t0))
            w = mean + sd * self.rng.standard_normal()
        times.insert(k, u)
        values.insert(k, w)
        memo[u] = w
        return w

    def stored_times(self, coordinate):
        return list(self._times[coordinate])


def brownian_at(store, coordinate, u):
    """W_coordinate(u) from ``store`` (0-based coordinate)."""
    return store.query(coordinate, u)


def brownian_increments(store, ell):
    """Increments W_j(ell_j(t_{i+1})) - W_j(ell_j(t_i)) for a single clock."""
    n = ell.grid.size
    w = np.empty((n, ell.d))
    for i in range(n):
        for j in range(ell.d):
            w[i, j] = store.query(j, ell.values[i, j])
    return np.diff(w, axis=0)


def levy_path(spec, T, n_steps, rng):
    """One path of L(t_i) = W(ell(t_i)) on the uniform grid, shape ``(n+1, d)``.

    The clock and the Brownian store draw from independent child streams.
    """
    clock_rng, noise_rng = rng.spawn(2)
    ell = sample_subordinator(spec, T, n_steps, clock_rng)
    store = BrownianStore(spec.d, noise_rng)
    L = np.array([[store.query(j, ell.values[i, j]) for j in range(spec.d)] for i in range(ell.grid.size)])
    return ell, L


def levy_samples(spec, t, n, seed, workers=None):
    """``n`` independent samples of L(t), shape ``(n, d)``."""

    def block(k, size):
        s = spec.terminal(t, size, derive_substream(seed, k, "levy-clock"))
        z = derive_substream(seed, k, "levy-noise").standard_normal((size, spec.d))
        return np.sqrt(s) * z

    return np.concatenate(map_blocks(block, n, workers))


def empirical_char_function(samples, z):
    """Sample average of exp(i z . L)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("empty sample")
    if x.ndim == 1:
        x = x[:, None]
    z = np.asarray(z, dtype=float)
    if not np.any(z):
        return complex(1.0, 0.0)
    phase = x @ z
    return complex(np.cos(phase).mean(), np.sin(phase).mean())


def char_function_modulus(samples, z):
    """Modulus of the empirical characteristic function with a delta-method s.e."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    phase = x @ np.asarray(z, dtype=float)
    c, s = np.cos(phase), np.sin(phase)
    cm, sm = c.mean(), s.mean()
    mod = math.hypot(cm, sm)
    n = phase.size
    cov = np.cov(np.stack([c, s]))
    if mod == 0:
        return 0.0, math.sqrt((cov[0, 0] + cov[1, 1]) / n)
    grad = np.array([cm, sm]) / mod
    return mod, float(math.sqrt(grad @ cov @ grad / n))


def exact_char_function(spec, t, z):
    """E exp(i z . L_t) = prod_j E exp(-z_j^2 S_j(t) / 2)."""
    z = np.asarray(z, dtype=float)
    return float(np.prod([law.laplace(0.5 * zj * zj, t) for law, zj in zip(spec.laws, z)]))


def empirical_laplace(law, lam, t, n, seed, workers=None):
    """Mean and s.e. of exp(-lam S(t)) for a single-coordinate law."""
    draws = np.concatenate(
        map_blocks(lambda k, size: law.increments(t, size, derive_substream(seed, k, "laplace")), n, workers)
    )
    return mean_se(np.exp(-lam * draws))


@dataclass
class MomentEstimate:
    estimate: float
    se: float
    exact: float | None = None
    n: int = 0
    top_decile_share: float | None = None
    log_estimate: float | None = None

    def within(self, k=3.0):
        return self.exact is not None and abs(self.estimate - self.exact) <= k * self.se


def _terminal_draws(spec, j, t, n, seed, workers, tag):
    law = spec.laws[j]
    return np.concatenate(
        map_blocks(lambda k, size: law.increments(t, size, derive_substream(seed, k, tag)), n, workers)
    )


def inverse_moment(spec, j, T, n_samples, seed, workers=None, truncate=None):
    """Monte Carlo estimate of E S_j(T)^{-1}.

    ``truncate`` caps 1 / S at the given value (biased; off by default).
    """
    if not 0 <= j < spec.d:
        raise IndexError(f"coordinate {j} out of range")
    law = spec.laws[j]
    if law.deterministic:
        return MomentEstimate(1.0 / (law.drift * T), 0.0, 1.0 / (law.drift * T), n_samples)
    if n_samples < 10_000:
        raise DomainError("inverse moments are heavy-tailed; use n_samples >= 1e4")
    s = _terminal_draws(spec, j, T, n_samples, seed, workers, "inverse-moment")
    if np.any(s <= 0):
        raise PreconditionError(f"sampled S_{j}(T) = 0: law {law.describe()} is not strictly positive")
    inv = 1.0 / s
    if truncate is not None:
        inv = np.minimum(inv, truncate)
    m, se = mean_se(inv)
    exact = law.inverse_moment(T)
    return MomentEstimate(m, se, exact if math.isfinite(exact) else None, n_samples)


def _check_exp_moment_finite(law):
    if isinstance(law, StableLaw) and law.alpha <= 1:
        raise DomainError(
            f"E exp(lam / S(T)) is only finite for stable indices in (1, 2); got alpha = {law.alpha}"
        )
    if isinstance(law, GammaLaw):
        raise DomainError("E exp(lam / S(T)) is infinite for gamma subordinators")


def top_decile_share(values):
    v = np.sort(np.asarray(values, dtype=float))
    total = v.sum()
    if total <= 0:
        return 0.0
    return float(v[-max(1, v.size // 10):].sum() / total)


def exp_inverse_moment(spec, j, T, lam, n_samples, seed, workers=None):
    """Monte Carlo estimate of E exp(lam / S_j(T)); finite for alpha_j in (1, 2)."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    law = spec.laws[j]
    _check_exp_moment_finite(law)
    if law.deterministic:
        v = lam / (law.drift * T)
        return MomentEstimate(math.exp(v), 0.0, math.exp(v), n_samples, 0.1, v)
    s = _terminal_draws(spec, j, T, n_samples, seed, workers, "exp-inverse-moment")
    a = lam / s
    amax = a.max()
    w = np.exp(a - amax)
    log_est = float(amax + np.log(w.mean()))
    se_rel = float(w.std(ddof=1) / math.sqrt(w.size) / w.mean())
    est = math.exp(log_est) if log_est < 700 else math.inf
    return MomentEstimate(est, est * se_rel, None, n_samples, top_decile_share(w), log_est)


def fit_scaling(ts, estimates):
    """Least-squares fit of estimate = C0 * t**k on the log scale; returns (C0, k)."""
    ts, est = np.asarray(ts, dtype=float), np.asarray(estimates, dtype=float)
    if ts.size < 2 or np.any(ts <= 0) or np.any(est <= 0):
        raise DomainError("need at least two positive (t, estimate) pairs")
    k, log_c = np.polyfit(np.log(ts), np.log(est), 1)
    return float(math.exp(log_c)), float(k)
