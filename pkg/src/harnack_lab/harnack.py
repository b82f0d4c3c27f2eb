"""Monte Carlo checks of the log-Harnack, power-Harnack and gradient inequalities.

Every check estimates a left side and a right side from independent
batches and declares the inequality to hold iff

    lhs <= rhs + 3 * sqrt(lhs_se**2 + rhs_se**2).

Log and power comparisons are made on the log scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rho as rho_mod
from .errors import ConfigError, DomainError, PreconditionError
from .montecarlo import derive_substream, log_mean_se, map_blocks, mean_se
from .paths import ClockPath, GammaLaw, StableLaw, inverse_moment, top_decile_share
from .sde import simulate_terminal

N_SIGMA = 3.0
INSTABILITY_SHARE = 0.5

__all__ = [
    "TestFunction",
    "HarnackReport",
    "conditional_log_harnack",
    "conditional_power_harnack",
    "log_harnack",
    "power_harnack",
    "gradient_estimate_check",
    "gaussian_semigroup",
    "entropy_inequality_selftest",
]


@dataclass(frozen=True)
class TestFunction:
    """Bounded test functions on R^d, vectorized over leading axes.

    kinds: ``shifted_gaussian_bump`` c + exp(-|x - center|^2 / width^2);
    ``plateau`` a smooth compactly supported bump with values in [0, 1];
    ``indicator_smooth`` a logistic half-space indicator; ``constant``.
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple = ()
    width: float = 1.0
    floor: float = 0.1
    value: float = 1.0
    normal: tuple = ()
    offset: float = 0.0
    sharpness: float = 1.0

    def __post_init__(self):
        if self.kind not in ("shifted_gaussian_bump", "plateau", "indicator_smooth", "constant"):
            raise DomainError(f"unknown test function kind {self.kind!r}")
        if self.kind == "shifted_gaussian_bump" and not (self.floor > 0 and self.width > 0):
            raise DomainError("shifted_gaussian_bump needs floor > 0 and width > 0")
        if self.kind == "plateau" and not self.width > 0:
            raise DomainError("plateau needs a positive radius")
        if self.kind == "constant" and not self.value >= 0:
            raise DomainError("constant must be non-negative")

    @classmethod
    def shifted_gaussian_bump(cls, center, width=1.0, floor=0.1):
        return cls("shifted_gaussian_bump", center=tuple(map(float, center)), width=float(width), floor=float(floor))

    @classmethod
    def plateau(cls, center, radius=1.0):
        return cls("plateau", center=tuple(map(float, center)), width=float(radius))

    @classmethod
    def indicator_smooth(cls, normal, offset=0.0, sharpness=1.0):
        return cls("indicator_smooth", normal=tuple(map(float, normal)), offset=float(offset), sharpness=float(sharpness))

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def from_dict(cls, spec, d):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        try:
            if kind == "shifted_gaussian_bump":
                return cls.shifted_gaussian_bump(spec.pop("center", [0.0] * d), spec.pop("width", 1.0), spec.pop("floor", 0.1))
            if kind == "plateau":
                return cls.plateau(spec.pop("center", [0.0] * d), spec.pop("radius", 1.0))
            if kind == "indicator_smooth":
                return cls.indicator_smooth(spec.pop("normal", [1.0] + [0.0] * (d - 1)), spec.pop("offset", 0.0),
                                    spec.pop("sharpness", 1.0))
            if kind == "constant":
                return cls.constant(spec.pop("value", 1.0))
        except DomainError as exc:
            raise ConfigError("f", str(exc)) from None
        raise ConfigError("f.kind", f"unknown test function {kind!r}")

    @property
    def bounds(self):
        if self.kind == "shifted_gaussian_bump":
            return (self.floor, self.floor + 1.0)
        if self.kind == "constant":
            return (self.value, self.value)
        return (0.0, 1.0)

    @property
    def strictly_positive(self):
        return self.bounds[0] > 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        if self.kind == "shifted_gaussian_bump":
            r2 = ((x - np.asarray(self.center)) ** 2).sum(axis=-1)
            return self.floor + np.exp(-r2 / self.width**2)
        if self.kind == "plateau":
            q = ((x - np.asarray(self.center)) ** 2).sum(axis=-1) / self.width**2
            with np.errstate(divide="ignore", over="ignore"):
                inner = np.exp(1.0 - 1.0 / (1.0 - np.minimum(q, 1.0)))
            return np.where(q < 1.0, inner, 0.0)
        s = self.sharpness * (x @ np.asarray(self.normal) - self.offset)
        return 0.5 * (1.0 + np.tanh(0.5 * s))

    def describe(self):
        if self.kind == "shifted_gaussian_bump":
            return {"kind": "shifted_gaussian_bump", "center": list(self.center), "width": self.width, "floor": self.floor}
        if self.kind == "plateau":
            return {"kind": "plateau", "center": list(self.center), "radius": self.width}
        if self.kind == "indicator_smooth":
            return {"kind": "indicator_smooth", "normal": list(self.normal), "offset": self.offset, "sharpness": self.sharpness}
        return {"kind": "constant", "value": self.value}


@dataclass
class HarnackReport:
    check: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    n_mc: int
    seed: int
    scenario: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def combined_se(self):
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def holds(self):
        return self.lhs <= self.rhs + N_SIGMA * self.combined_se

    @property
    def verdict(self):
        return "holds" if self.holds else "violated"

    def to_json(self):
        return {
            "scenario": {"check": self.check, **self.scenario},
            "lhs": self.lhs,
            "lhs_se": self.lhs_se,
            "rhs": self.rhs,
            "rhs_se": self.rhs_se,
            "slack": self.slack,
            "verdict": self.verdict,
            "n_mc": self.n_mc,
            "seed": self.seed,
            "diagnostics": self.extra,
        }


def _distance(x, y):
    return float(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)).sum())


def _scenario(b, rho, source, x, y, T, f, **more):
    if isinstance(source, ClockPath):
        noise = {"clock": "fixed", "clock_T": [float(v) for v in source.elapsed(source.T)]}
    else:
        noise = {"subordinator": source.describe()}
    return {
        "drift": b.name,
        "rho": rho.describe(),
        **noise,
        "T": float(T),
        "x": [float(v) for v in x],
        "y": [float(v) for v in y],
        "f": f.describe(),
        **more,
    }


def _two_batches(b, x, y, source, T, n_steps, n_mc, seed, workers):
    """Independent terminal samples from y (left side) and from x (right side)."""
    from_y = simulate_terminal(b, [y], source, T, n_steps, n_mc, seed, workers, tag="harnack/lhs")[0]
    from_x = simulate_terminal(b, [x], source, T, n_steps, n_mc, seed, workers, tag="harnack/rhs")[0]
    return from_y, from_x


def _clock_inverse_sum(ell):
    last = ell.elapsed(ell.T)
    if np.any(last <= 0):
        raise PreconditionError("clock must satisfy ell_j(T) > 0 for every coordinate")
    return float(np.sum(1.0 / last))


def conditional_log_harnack(b, rho, ell, x, y, f, n_mc, seed, workers=None):
    """E log f(X_T(y)) <= log E f(X_T(x)) + Gamma^2(dT, |x-y|_1) / 2 * sum_j 1 / ell_j(T), given ell."""
    if not f.strictly_positive:
        raise DomainError("log-Harnack needs a strictly positive test function")
    d, T = b.d, ell.T
    penalty = 0.5 * rho_mod.gamma_rho(rho, d * T, _distance(x, y)) ** 2 * _clock_inverse_sum(ell)
    from_y, from_x = _two_batches(b, x, y, ell, T, None, n_mc, seed, workers)
    lhs, lhs_se = mean_se(np.log(f(from_y)))
    log_mean, log_se = log_mean_se(f(from_x))
    return HarnackReport(
        "conditional-log", lhs, lhs_se, log_mean + penalty, log_se, n_mc, seed,
        _scenario(b, rho, ell, x, y, T, f), {"penalty": penalty},
    )


def conditional_power_harnack(b, rho, ell, x, y, f, p, n_mc, seed, workers=None):
    """(E f(X_T(y)))^p <= E f^p(X_T(x)) * exp[p Gamma^2 / (2 (p-1)^2) sum_j 1 / ell_j(T)]^(p-1)."""
    if not p > 1:
        raise DomainError("power-Harnack needs p > 1")
    d, T = b.d, ell.T
    log_factor = p * rho_mod.gamma_rho(rho, d * T, _distance(x, y)) ** 2 / (2 * (p - 1) ** 2) * _clock_inverse_sum(ell)
    from_y, from_x = _two_batches(b, x, y, ell, T, None, n_mc, seed, workers)
    lm, lse = log_mean_se(f(from_y))
    rm, rse = log_mean_se(f(from_x) ** p)
    return HarnackReport(
        "conditional-power", p * lm, p * lse, rm + (p - 1) * log_factor, rse, n_mc, seed,
        _scenario(b, rho, ell, x, y, T, f, p=p), {"log_factor": log_factor},
    )


def inverse_moment_sum(spec, T, seed, workers=None, n_samples=100_000):
    """sum_j E S_j(T)^{-1}: exact for stable and pure-drift laws, else Monte Carlo."""
    total, var = 0.0, 0.0
    for j, law in enumerate(spec.laws):
        if isinstance(law, StableLaw) or law.deterministic:
            total += law.inverse_moment(T)
        else:
            est = inverse_moment(spec, j, T, n_samples, seed, workers)
            total += est.estimate
            var += est.se**2
    return total, math.sqrt(var)


def log_harnack(b, rho, spec, x, y, T, f, n_mc, seed, workers=None, n_steps=200):
    """P_T log f(y) <= log P_T f(x) + Gamma^2(dT, |x-y|_1) / 2 * sum_j E S_j(T)^{-1}."""
    if not f.strictly_positive:
        raise DomainError("log-Harnack needs a strictly positive test function")
    g2 = rho_mod.gamma_rho(rho, b.d * T, _distance(x, y)) ** 2
    inv_sum, inv_se = inverse_moment_sum(spec, T, seed, workers)
    penalty = 0.5 * g2 * inv_sum
    from_y, from_x = _two_batches(b, x, y, spec, T, n_steps, n_mc, seed, workers)
    lhs, lhs_se = mean_se(np.log(f(from_y)))
    log_mean, log_se = log_mean_se(f(from_x))
    return HarnackReport(
        "log", lhs, lhs_se, log_mean + penalty, math.hypot(log_se, 0.5 * g2 * inv_se), n_mc, seed,
        _scenario(b, rho, spec, x, y, T, f, n_steps=n_steps), {"penalty": penalty, "inverse_moment_sum": inv_sum},
    )


def _check_power_spec(spec):
    for law in spec.laws:
        if isinstance(law, StableLaw) and not 1 < law.alpha < 2:
            raise DomainError(
                f"power-Harnack needs every stable index in (1, 2) so that E exp(c / S(T)) is finite; "
                f"got alpha = {law.alpha}"
            )
        if isinstance(law, GammaLaw):
            raise DomainError("power-Harnack factor is infinite for gamma subordinators")


def log_exp_inverse_sum(spec, T, lam, n, seed, workers=None):
    """log E exp(lam * sum_j S_j(T)^{-1}) by Monte Carlo, with s.e. and tail share."""
    def block(k, size):
        return spec.terminal(T, size, derive_substream(seed, k, "harnack/factor"))

    s = np.concatenate(map_blocks(block, n, workers))
    a = lam * (1.0 / s).sum(axis=1)
    amax = a.max()
    w = np.exp(a - amax)
    m = w.mean()
    se = w.std(ddof=1) / math.sqrt(w.size) / m if w.size > 1 else 0.0
    return float(amax + math.log(m)), float(se), top_decile_share(w)


def power_harnack(b, rho, spec, x, y, T, f, p, n_mc, seed, workers=None, n_steps=200):
    """(P_T f(y))^p <= P_T f^p(x) * (E exp[p Gamma^2 / (2 (p-1)^2) sum_j S_j(T)^{-1}])^(p-1)."""
    if not p > 1:
        raise DomainError("power-Harnack needs p > 1")
    _check_power_spec(spec)
    lam = p * rho_mod.gamma_rho(rho, b.d * T, _distance(x, y)) ** 2 / (2 * (p - 1) ** 2)
    if all(law.deterministic for law in spec.laws):
        log_e, log_e_se, share = lam * spec.inverse_moment_sum(T), 0.0, 0.0
    else:
        log_e, log_e_se, share = log_exp_inverse_sum(spec, T, lam, n_mc, seed, workers)
    from_y, from_x = _two_batches(b, x, y, spec, T, n_steps, n_mc, seed, workers)
    lm, lse = log_mean_se(f(from_y))
    rm, rse = log_mean_se(f(from_x) ** p)
    return HarnackReport(
        "power", p * lm, p * lse, rm + (p - 1) * log_e, math.hypot(rse, (p - 1) * log_e_se), n_mc, seed,
        _scenario(b, rho, spec, x, y, T, f, p=p, n_steps=n_steps),
        {
            "log_factor": (p - 1) * log_e,
            "log_exp_moment": log_e,
            "top_decile_share": share,
            "unstable": share > INSTABILITY_SHARE,
        },
    )


def _sample_variance_se(v):
    n = v.size
    c = v - v.mean()
    var = float(c @ c / (n - 1))
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var**2, 0.0) / n)


def gradient_estimate_check(b, spec, x, T, f, n_mc, seed, h=None, workers=None, n_steps=200):
    """|grad P_T f(x)|^2 <= Var_x f(X_T) (1 + L dT e^{L dT})^2 d^2 T^2 sum_j E S_j(T)^{-1}.

    The gradient is measured against the l1 distance, i.e. as the largest
    absolute partial derivative, by central differences with common random
    numbers.  A second difference at h/2 estimates the step bias.
    """
    if b.lipschitz is None:
        raise DomainError("gradient estimate needs a drift with a Lipschitz constant")
    x = np.asarray(x, dtype=float)
    d = b.d
    if h is None:
        h = 1e-3 * (1.0 + np.abs(x).sum())
    eye = np.eye(d)
    starts = np.concatenate([x + h * eye, x - h * eye, x + 0.5 * h * eye, x - 0.5 * h * eye])
    ends = simulate_terminal(b, starts, spec, T, n_steps, n_mc, seed, workers, tag="gradient/fd")
    fv = f(ends)
    diff_h = (fv[:d] - fv[d:2 * d]) / (2 * h)
    diff_h2 = (fv[2 * d:3 * d] - fv[3 * d:]) / h
    grads = diff_h.mean(axis=1)
    ses = diff_h.std(axis=1, ddof=1) / math.sqrt(n_mc)
    rich = np.abs(grads - diff_h2.mean(axis=1))
    j = int(np.argmax(np.abs(grads)))
    lhs = float(grads[j] ** 2)
    lhs_se = 2 * abs(grads[j]) * math.hypot(ses[j], rich[j])

    at_x = simulate_terminal(b, [x], spec, T, n_steps, n_mc, seed, workers, tag="gradient/var")[0]
    var, var_se = _sample_variance_se(f(at_x))
    L = b.lipschitz
    inv_sum, inv_se = inverse_moment_sum(spec, T, seed, workers)
    const = (1 + L * d * T * math.exp(L * d * T)) ** 2 * d**2 * T**2
    rhs = var * const * inv_sum
    rhs_se = const * math.hypot(var_se * inv_sum, var * inv_se)
    return HarnackReport(
        "gradient", lhs, lhs_se, rhs, rhs_se, n_mc, seed,
        {"drift": b.name, "lipschitz": L, "subordinator": spec.describe(), "T": float(T),
         "x": x.tolist(), "f": f.describe(), "h": h, "n_steps": n_steps},
        {"gradient": grads.tolist(), "gradient_se": ses.tolist(), "richardson_gap": rich.tolist(),
         "variance": var, "inverse_moment_sum": inv_sum},
    )


def gaussian_semigroup(f, x, t, order=80):
    """E g(x + W_t) for scalar x by Gauss-Hermite quadrature (d = 1, b = 0, ell(t) = t).

    ``f`` may be any callable on arrays of shape (..., 1).
    """
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    pts = float(x) + math.sqrt(2.0 * t) * nodes
    return float(weights @ np.asarray(f(pts[:, None])) / math.sqrt(math.pi))


def entropy_inequality_selftest(mu, g1, g2):
    """mu(g1 g2) <= log mu(e^{g2}) + mu(g1 log g1) for a probability vector mu and mu(g1) = 1."""
    mu, g1, g2 = (np.asarray(v, dtype=float) for v in (mu, g1, g2))
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise PreconditionError("mu must be a probability vector")
    if np.any(g1 < 0):
        raise PreconditionError("g1 must be non-negative")
    if abs(mu @ g1 - 1.0) > 1e-12:
        raise PreconditionError("need mu(g1) = 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(g1 > 0, g1 * np.log(g1), 0.0)
    lhs = mu @ (g1 * g2)
    rhs = math.log(mu @ np.exp(g2)) + mu @ ent
    return bool(rhs - lhs >= -1e-12)
