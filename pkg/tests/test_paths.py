import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from harnack_lab import paths as P
from harnack_lab.errors import ConfigError, DomainError, PreconditionError
from harnack_lab.montecarlo import derive_substream, mean_se


def rng(seed=0):
    return np.random.default_rng(seed)


# --- laws and sampling ----------------------------------------------------------

def test_parse_law():
    assert P.parse_law("stable:1.5") == P.StableLaw(1.5)
    assert P.parse_law("gamma:2:3") == P.GammaLaw(2.0, 3.0)
    assert P.parse_law("drift:2").deterministic
    assert not P.parse_law("cpoisson:1:0.5:0.1").deterministic
    for bad in ("stable", "cauchy:1", "gamma:1", "stable:x"):
        with pytest.raises(ConfigError):
            P.parse_law(bad)


def test_law_domains():
    with pytest.raises(DomainError):
        P.StableLaw(2.0)
    with pytest.raises(DomainError):
        P.StableLaw(0.0)
    with pytest.raises(DomainError):
        P.CompoundPoissonLaw(1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        P.SubordinatorSpec(())


def test_drift_clock_is_exact():
    ell = P.sample_subordinator(P.SubordinatorSpec.drift(2, 1.0), 1.0, 10, rng())
    assert np.array_equal(ell.values[:, 0], ell.grid)
    assert np.array_equal(ell.values[:, 1], ell.grid)


def test_stable_laplace_alpha1():
    s = P.sample_stable(0.5, 10**6, rng(1))
    for lam in (0.5, 1.0, 2.0):
        m, se = mean_se(np.exp(-lam * s))
        assert abs(m - math.exp(-math.sqrt(lam))) <= 3 * se


def test_stable_alpha1_ks_against_closed_density():
    # beta = 1/2, E e^{-lam S(t)} = e^{-t sqrt(lam)}: density t/(2 sqrt(pi)) s^{-3/2} e^{-t^2/(4s)},
    # whose CDF is erfc(t / (2 sqrt(s)))
    t = 1.0
    s = P.StableLaw(1.0).increments(t, 10**5, rng(2))
    res = stats.kstest(s, lambda x: special.erfc(t / (2.0 * np.sqrt(x))))
    assert res.pvalue > 1e-3
    median = t**2 / (4 * special.erfcinv(0.5) ** 2)
    assert abs(np.mean(s <= median) - 0.5) < 3 * math.sqrt(0.25 / s.size)


@pytest.mark.parametrize("law,lam,t", [(P.GammaLaw(2.0, 3.0), 1.0, 1.0), (P.CompoundPoissonLaw(2.0, 0.5, 0.3), 1.5, 1.0)])
def test_other_laws_laplace(law, lam, t):
    m, se = P.empirical_laplace(law, lam, t, 10**5, seed=4)
    assert abs(m - float(law.laplace(lam, t))) <= 3 * se


def test_sample_subordinator_batch_shapes():
    spec = P.SubordinatorSpec.stable(1.2, 1.8)
    ell = P.sample_subordinator(spec, 2.0, 50, rng(), size=7)
    assert ell.values.shape == (7, 51, 2)
    assert ell[3].values.shape == (51, 2)
    assert np.all(ell.values[:, 0, :] == 0)
    assert np.all(np.diff(ell.values, axis=1) >= 0)


@given(st.lists(st.floats(0.3, 1.95), min_size=1, max_size=3), st.integers(1, 40), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_clock_monotone_and_starts_at_zero(alphas, n_steps, seed):
    ell = P.sample_subordinator(P.SubordinatorSpec.stable(*alphas), 1.0, n_steps, rng(seed))
    assert np.all(ell.values[0] == 0)
    assert np.all(np.diff(ell.values, axis=0) >= 0)


def test_clockpath_validation():
    with pytest.raises(PreconditionError):
        P.ClockPath([0.0, 1.0], [[0.0], [-1.0]])
    with pytest.raises(PreconditionError):
        P.ClockPath([0.0, 1.0], [[0.5], [1.0]])
    with pytest.raises(PreconditionError):
        P.ClockPath([0.0, 0.0], [[0.0], [1.0]])


# --- regularization -------------------------------------------------------------

def test_regularize_zero_clock():
    grid = np.linspace(0, 1, 11)
    out = P.regularize_clock(P.ClockPath(grid, np.zeros((11, 1))), 5)
    assert np.allclose(out.values[:, 0], grid / 5, atol=1e-15)


def test_regularize_identity_clock():
    grid = np.linspace(0, 2, 41)
    n = 4
    out = P.regularize_clock(P.ClockPath(grid, grid[:, None], "linear"), n)
    inside = grid <= grid[-1] - 1.0 / n
    assert np.allclose(out.values[inside, 0], grid[inside] * (1 + 1 / n) + 1 / (2 * n), rtol=1e-14, atol=1e-14)


def test_regularize_step_clock():
    grid = np.linspace(0, 1, 9)
    ell = P.ClockPath(grid, (grid >= 0.5).astype(float)[:, None])
    out = P.regularize_clock(ell, 4)
    got = {t: out.values[i, 0] for i, t in enumerate(grid)}
    # 4 * |[t, t + 1/4] ∩ [0.5, inf)| + t / 4
    for t in (0.25, 0.375, 0.5):
        assert got[t] == pytest.approx(4 * max(0.0, t + 0.25 - 0.5) + t / 4, abs=1e-14)
    assert out.is_strictly_increasing()


def test_regularize_rejects_bad_n():
    ell = P.ClockPath([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(DomainError):
        P.regularize_clock(ell, 0)


@given(st.integers(0, 2**32), st.integers(1, 200))
@settings(max_examples=30, deadline=None)
def test_regularization_ordering(seed, n):
    ell = P.sample_subordinator(P.SubordinatorSpec.stable(0.8, 1.5), 1.0, 32, rng(seed))
    a, b = P.regularize_clock(ell, n), P.regularize_clock(ell, n + 1)
    assert np.all(b.values <= a.values + 1e-12)
    assert np.all(b.values >= ell.values - 1e-12)
    assert a.is_strictly_increasing()


def test_regularization_converges():
    ell = P.sample_subordinator(P.SubordinatorSpec.stable(1.5), 1.0, 64, rng(3))
    gaps = [np.max(P.regularize_clock(ell, n).values - ell.values) for n in (10, 100, 10**4, 10**6)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-4 * (1 + ell.values.max())


# --- Brownian store -------------------------------------------------------------

def test_store_basics():
    store = P.BrownianStore(2, rng(5))
    assert P.brownian_at(store, 0, 0.0) == 0.0
    w = P.brownian_at(store, 1, 1.3)
    assert P.brownian_at(store, 1, 1.3) == w
    with pytest.raises(IndexError):
        P.brownian_at(store, 2, 1.0)


def test_store_variance_over_fresh_stores():
    n = 10**5
    vals = np.array([P.brownian_at(P.BrownianStore(1, derive_substream(9, i)), 0, 2.0) for i in range(n)])
    var = vals.var(ddof=1)
    se = math.sqrt(2.0 / (n - 1)) * 2.0
    assert abs(var - 2.0) <= 3 * se


def test_store_bridge_law():
    # query 2 then 1: W(1) | W(2) ~ N(W(2)/2, 1/2), so Var W(1) = 1 and Cov(W(1), W(2)) = 1
    n = 40_000
    w = np.empty((n, 2))
    for i in range(n):
        s = P.BrownianStore(1, derive_substream(10, i))
        w[i, 1] = s.query(0, 2.0)
        w[i, 0] = s.query(0, 1.0)
    cov = np.cov(w.T)
    assert cov[0, 0] == pytest.approx(1.0, abs=4 * math.sqrt(2 / n))
    assert cov[0, 1] == pytest.approx(1.0, abs=4 * math.sqrt(3 / n))
    resid = w[:, 0] - w[:, 1] / 2
    assert resid.var() == pytest.approx(0.5, abs=4 * 0.5 * math.sqrt(2 / n))


def test_store_refinement_order_does_not_change_old_values():
    a = P.BrownianStore(1, rng(11))
    first = [a.query(0, u) for u in (1.0, 2.0, 3.0)]
    a.query(0, 2.5)
    a.query(0, 1.5)
    assert [a.query(0, u) for u in (1.0, 2.0, 3.0)] == first
    # same seed and same query sequence → identical values
    b = P.BrownianStore(1, rng(11))
    assert [b.query(0, u) for u in (1.0, 2.0, 3.0)] == first


# --- Lévy paths and characteristic functions --------------------------------------

def test_levy_path_drift_clock_is_brownian():
    n = 4000
    ends = np.array([P.levy_path(P.SubordinatorSpec.drift(2), 1.0, 4, derive_substream(12, i))[1][-1] for i in range(n)])
    var = ends.var(axis=0, ddof=1)
    assert np.all(np.abs(var - 1.0) <= 3 * math.sqrt(2 / (n - 1)))


def test_levy_path_uses_clock():
    ell, L = P.levy_path(P.SubordinatorSpec.stable(1.0, 1.5), 1.0, 20, rng(13))
    assert L.shape == (21, 2) and np.all(L[0] == 0)
    assert np.all(np.diff(ell.values, axis=0) >= 0)


def test_levy_components_independent_and_symmetric():
    x = P.levy_samples(P.SubordinatorSpec.stable(1.0, 1.0), 1.0, 10**5, seed=14)
    # heavy tails: use signs and ranks, which have finite moments
    r = stats.spearmanr(x[:, 0], x[:, 1]).correlation
    assert abs(r) <= 3 / math.sqrt(x.shape[0])
    m, se = mean_se(np.sign(x[:, 0]))
    assert abs(m) <= 3 * se


def test_char_function_exact_properties():
    x = P.levy_samples(P.SubordinatorSpec.stable(1.2, 0.7), 1.0, 1000, seed=15)
    assert P.empirical_char_function(x, [0.0, 0.0]) == 1
    z = np.array([0.3, -1.1])
    assert P.empirical_char_function(x, -z) == P.empirical_char_function(x, z).conjugate()
    with pytest.raises(DomainError):
        P.empirical_char_function(np.empty((0, 2)), z)


def test_char_function_alpha1_unit_vector():
    x = P.levy_samples(P.SubordinatorSpec.stable(1.0, 1.0), 1.0, 10**6, seed=16)
    mod, se = P.char_function_modulus(x, [1.0, 0.0])
    assert abs(mod - math.exp(-(2**-0.5))) <= 3 * se
    assert P.exact_char_function(P.SubordinatorSpec.stable(1.0, 1.0), 1.0, [1.0, 0.0]) == pytest.approx(0.493069, abs=1e-6)


# --- moments --------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.8, 1.0, 1.5])
def test_inverse_moment_oracle(alpha):
    spec = P.SubordinatorSpec.stable(alpha)
    for T in (1.0, 2.0):
        est = P.inverse_moment(spec, 0, T, 10**5, seed=17)
        assert est.exact == pytest.approx(math.gamma(1 + 2 / alpha) * T ** (-2 / alpha))
        assert est.within(3)


def test_inverse_moment_examples():
    spec = P.SubordinatorSpec.stable(1.0)
    assert spec.laws[0].inverse_moment(1.0) == 2.0
    assert spec.laws[0].inverse_moment(2.0) == 0.5
    det = P.inverse_moment(P.SubordinatorSpec.drift(1), 0, 4.0, 10, seed=0)
    assert det.estimate == 0.25 and det.se == 0


def test_inverse_moment_quadrature_oracle():
    # E S^-1 = int_0^inf E e^{-lam S} d lam, checked against scipy quadrature
    from scipy import integrate
    for law in (P.StableLaw(1.3), P.GammaLaw(3.0, 2.0), P.CompoundPoissonLaw(1.0, 2.0, 0.5)):
        q, _ = integrate.quad(lambda lam: float(law.laplace(lam, 1.0)), 0, np.inf, limit=200)
        assert law.inverse_moment(1.0) == pytest.approx(q, rel=1e-6)


def test_inverse_moment_cpoisson_mc():
    spec = P.SubordinatorSpec((P.CompoundPoissonLaw(1.0, 2.0, 0.5),))
    est = P.inverse_moment(spec, 0, 1.0, 10**5, seed=18)
    assert est.within(3)


def test_inverse_moment_preconditions():
    spec = P.SubordinatorSpec.stable(1.0)
    with pytest.raises(DomainError):
        P.inverse_moment(spec, 0, 1.0, 100, seed=0)
    with pytest.raises(IndexError):
        P.inverse_moment(spec, 1, 1.0, 10**4, seed=0)


def test_fit_scaling():
    c0, k = P.fit_scaling([1.0, 2.0, 4.0], [3.0, 0.75, 0.1875])
    assert c0 == pytest.approx(3.0) and k == pytest.approx(-2.0)


def test_exp_inverse_moment():
    spec = P.SubordinatorSpec.stable(1.5)
    small = P.exp_inverse_moment(spec, 0, 1.0, 1e-8, 10**4, seed=19)
    assert small.estimate == pytest.approx(1.0, abs=1e-6)
    det = P.exp_inverse_moment(P.SubordinatorSpec.drift(1), 0, 2.0, 0.5, 10, seed=0)
    assert det.estimate == math.exp(0.25)
    a = P.exp_inverse_moment(spec, 0, 1.0, 0.1, 10**5, seed=20)
    b = P.exp_inverse_moment(spec, 0, 1.0, 0.1, 2 * 10**5, seed=21)
    assert abs(a.estimate / b.estimate - 1) < 0.01
    with pytest.raises(DomainError):
        P.exp_inverse_moment(P.SubordinatorSpec.stable(1.0), 0, 1.0, 0.1, 10**4, seed=0)
    with pytest.raises(DomainError):
        P.exp_inverse_moment(P.SubordinatorSpec((P.GammaLaw(1.0, 1.0),)), 0, 1.0, 0.1, 10**4, seed=0)


def test_exp_inverse_moment_shape_fit():
    # log E exp(lam / S(T)) against lam T^{-2/alpha} + lam^{alpha/(2(alpha-1))} T^{-1/(alpha-1)};
    # a single fitted constant should bound all estimates
    alpha, spec = 1.5, P.SubordinatorSpec.stable(1.5)
    rows = []
    for lam in (0.1, 0.5, 1.0):
        for T in (0.5, 1.0, 2.0):
            e = P.exp_inverse_moment(spec, 0, T, lam, 10**5, seed=22)
            shape = lam * T ** (-2 / alpha) + lam ** (alpha / (2 * (alpha - 1))) * T ** (-1 / (alpha - 1))
            rows.append((e.log_estimate, shape))
    c2 = max(le / s for le, s in rows)
    assert 0 < c2 < 10
