"""Moduli of continuity with a divergent Osgood integral.

A modulus ``rho`` is continuous, non-decreasing, positive on (0, inf), of at
most linear growth, and satisfies ``int_0+ ds / rho(s) = inf``.  Three kinds
are supported:

* ``linear``    rho(r) = c0 * r
* ``osgood``    rho(r) = r (1 - ln r) for r <= 1 and rho(r) = r for r > 1
* ``tabulated`` piecewise-linear interpolation of a monotone table

For a modulus we expose

    G(r)        = int_1^r du / rho(u)
    Gamma(T, r) = r + T * rho(G^{-1}(G(r) + T))

and the Bihari bound ``G^{-1}(G(f0) + t)``.  Linear and Osgood kinds use
their closed-form antiderivatives; tabulated moduli go through scipy
quadrature and root finding (``method="quadrature"`` forces that route for
any kind).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, RangeError

QUAD_TOL = 1e-10
BISECT_RTOL = 1e-12
_R_FLOOR = 1e-300
_R_CEIL = 1e300

__all__ = [
    "RhoModulus",
    "BihariBoundRequest",
    "linear",
    "osgood",
    "tabulated",
    "load_table",
    "parse_rho",
    "g_rho",
    "g_rho_inverse",
    "gamma_rho",
    "bihari_bound",
]


@dataclass(frozen=True)
class RhoModulus:
    kind: str
    c0: float = 1.0
    table_r: tuple = ()
    table_rho: tuple = ()

    def __post_init__(self):
        if self.kind not in ("linear", "osgood", "tabulated"):
            raise DomainError(f"unknown modulus kind {self.kind!r}")
        if self.kind == "linear" and not self.c0 > 0:
            raise DomainError("linear modulus needs c0 > 0")
        if self.kind == "tabulated":
            r = np.asarray(self.table_r, dtype=float)
            v = np.asarray(self.table_rho, dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 2:
                raise DomainError("table needs at least two (r, rho) pairs")
            if not (r[0] > 0 and np.all(np.diff(r) > 0)):
                raise DomainError("table r values must be positive and strictly increasing")
            if not (v[0] > 0 and np.all(np.diff(v) >= 0)):
                raise DomainError("table rho values must be positive and non-decreasing")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "linear":
            out = self.c0 * r
        elif self.kind == "osgood":
            with np.errstate(divide="ignore", invalid="ignore"):
                small = r * (1.0 - np.log(r))
            out = np.where(r <= 0, 0.0, np.where(r <= 1.0, small, r))
        else:
            tr = np.asarray(self.table_r)
            tv = np.asarray(self.table_rho)
            slope = self._tail_slope
            inside = np.interp(r, tr, tv)
            below = tv[0] * r / tr[0]
            above = tv[-1] + slope * (r - tr[-1])
            out = np.where(r < tr[0], below, np.where(r > tr[-1], above, inside))
        return out[()] if out.ndim == 0 else out

    @property
    def _tail_slope(self):
        return (self.table_rho[-1] - self.table_rho[-2]) / (self.table_r[-1] - self.table_r[-2])

    @property
    def growth(self):
        """Witnesses ``(a, b)`` with rho(r) <= a + b r for all r > 0."""
        if self.kind == "linear":
            return (0.0, self.c0)
        if self.kind == "osgood":
            return (1.0, 1.0)
        return (float(max(self.table_rho)), float(max(self._tail_slope, 0.0)))

    @property
    def osgood_verified(self):
        """Divergence of the Osgood integral is proven for built-in kinds only."""
        return self.kind != "tabulated"

    @property
    def has_closed_form(self):
        return self.kind in ("linear", "osgood")

    def describe(self):
        if self.kind == "linear":
            return f"linear:{self.c0!r}"
        if self.kind == "osgood":
            return "osgood"
        return f"table[{len(self.table_r)}]"

    def scaled(self, factor):
        """The modulus ``r -> factor * rho(r)``, only closed for linear kinds."""
        if self.kind != "linear":
            raise DomainError("scaling is only closed for linear moduli")
        return linear(self.c0 * factor)


@dataclass(frozen=True)
class BihariBoundRequest:
    f0: float
    t: float

    def __post_init__(self):
        if not (self.f0 >= 0 and self.t >= 0):
            raise DomainError("Bihari request needs f0 >= 0 and t >= 0")


def linear(c0=1.0):
    return RhoModulus("linear", c0=float(c0))


def osgood():
    return RhoModulus("osgood")


def tabulated(r, values):
    return RhoModulus("tabulated", table_r=tuple(map(float, r)), table_rho=tuple(map(float, values)))


def load_table(path):
    """Read a two-column numeric text file of ``r rho`` pairs."""
    data = np.loadtxt(Path(path), delimiter=None, ndmin=2, comments="#")
    if data.shape[1] != 2:
        raise DomainError(f"{path}: expected two columns, found {data.shape[1]}")
    return tabulated(data[:, 0], data[:, 1])


def parse_rho(text, base_dir=None):
    """Parse ``"linear:1.0"``, ``"osgood"`` or ``"table:<path>"``."""
    kind, _, arg = text.strip().partition(":")
    if kind == "linear":
        return linear(float(arg) if arg else 1.0)
    if kind == "osgood" and not arg:
        return osgood()
    if kind == "table" and arg:
        path = Path(arg)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_table(path)
    raise DomainError(f"cannot parse modulus {text!r}")


def _g_quadrature(rho, r):
    # u = e^s turns the integrand into e^s / rho(e^s), bounded near u = 0
    s_end = math.log(r)

    def integrand(s):
        u = math.exp(s)
        return u / float(rho(u))

    # split long ranges so the absolute tolerance is met segment by segment
    n_seg = max(1, int(math.ceil(abs(s_end) / 4.0)))
    edges = np.linspace(0.0, s_end, n_seg + 1)
    tol = QUAD_TOL / n_seg
    return sum(integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=tol, limit=200)[0]
               for lo, hi in zip(edges[:-1], edges[1:]))


def _g_closed(rho, r):
    if rho.kind == "linear":
        return np.log(r) / rho.c0
    lr = np.log(r)
    return np.where(r <= 1.0, -np.log1p(-np.minimum(lr, 0.0)), lr)


def _g_inverse_closed(rho, v):
    if rho.kind == "linear":
        return np.exp(rho.c0 * v)
    with np.errstate(over="ignore"):
        neg = np.exp(-np.expm1(-np.minimum(v, 0.0)))
    return np.where(v <= 0.0, neg, np.exp(np.maximum(v, 0.0)))


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def g_rho(rho, r, method="auto"):
    """``G(r) = int_1^r du / rho(u)`` (negative for r < 1)."""
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("G is defined for r > 0 only")
    if method == "auto" and rho.has_closed_form:
        return _scalar(_g_closed(rho, arr))
    if arr.ndim == 0:
        return _g_quadrature(rho, float(arr))
    return np.array([_g_quadrature(rho, float(x)) for x in arr.ravel()]).reshape(arr.shape)


def _g_inverse_bisect(rho, v):
    g = lambda r: g_rho(rho, r, method="quadrature")
    if v == 0.0:
        return 1.0
    lo, hi = 1e-12, 1.0
    if v > 0:
        lo = 1.0
        while g(hi) < v:
            lo, hi = hi, hi * 2.0
            if hi > _R_CEIL:
                raise RangeError(f"G^-1({v}) exceeds the attainable range")
    else:
        hi = 1.0
        while g(lo) > v:
            if lo <= _R_FLOOR:
                return 0.0
            hi, lo = lo, max(lo * lo, _R_FLOOR)
    # root in log-space; G is strictly increasing on the bracket
    a, b = math.log(lo), math.log(hi)
    return math.exp(optimize.brentq(lambda s: g(math.exp(s)) - v, a, b, xtol=BISECT_RTOL))


def g_rho_inverse(rho, v, method="auto"):
    """Inverse of :func:`g_rho`; values below the range of G map to 0."""
    arr = np.asarray(v, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("G^-1 of NaN")
    if method == "auto" and rho.has_closed_form:
        return _scalar(_g_inverse_closed(rho, arr))
    if arr.ndim == 0:
        return _g_inverse_bisect(rho, float(arr))
    return np.array([_g_inverse_bisect(rho, float(x)) for x in arr.ravel()]).reshape(arr.shape)


def gamma_rho(rho, T, r, method="auto"):
    """Coupling scale ``r + T rho(G^{-1}(G(r) + T))``, equal to 0 at r = 0."""
    if not T > 0:
        raise DomainError("Gamma needs T > 0")
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr >= 0)):
        raise DomainError("Gamma needs r >= 0")
    if arr.ndim == 0:
        if arr == 0:
            return 0.0
        inner = g_rho_inverse(rho, g_rho(rho, float(arr), method) + T, method)
        return float(arr + T * rho(inner))
    out = np.zeros(arr.shape)
    pos = arr > 0
    if np.any(pos):
        inner = g_rho_inverse(rho, g_rho(rho, arr[pos], method) + T, method)
        out[pos] = arr[pos] + T * rho(inner)
    return out


def bihari_bound(rho, req, method="auto"):
    """``G^{-1}(G(f0) + t)``: the largest solution of f <= f0 + int rho(f)."""
    if req.f0 == 0:
        return 0.0
    return float(g_rho_inverse(rho, g_rho(rho, req.f0, method) + req.t, method))
