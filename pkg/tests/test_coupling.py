import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnack_lab import coupling as C
from harnack_lab import paths as P
from harnack_lab import rho as R
from harnack_lab import sde as S
from harnack_lab.errors import DomainError, PreconditionError
from harnack_lab.harnack import TestFunction
from harnack_lab.sde import simulate_terminal


def rng(seed=0):
    return np.random.default_rng(seed)


def regularized(spec, T=1.0, n=400, seed=0, reg=10_000):
    return P.regularize_clock(P.sample_subordinator(spec, T, n, rng(seed)), reg)


# --- kappa ------------------------------------------------------------------------

def test_kappa_examples():
    ell = P.ClockPath([0.0, 0.9, 1.0], [[0.0], [2.0], [2.5]])
    assert C.kappa_T(R.linear(1), 1.0, [0.0], [0.0], ell, 0.9, 1) == 0.0
    k = C.kappa_T(R.linear(1), 1.0, [0.0], [1.0], ell, 0.9, 1)
    assert k == pytest.approx((math.e + 1) / 2, rel=1e-12)
    assert C.kappa_T(R.linear(1), 1.0, [0.0], [2.0], ell, 0.9, 1) == pytest.approx(2 * k, rel=1e-14)


def test_kappa_needs_positive_clock():
    ell = P.ClockPath([0.0, 0.5, 1.0], [[0.0], [0.0], [1.0]])
    with pytest.raises(PreconditionError):
        C.kappa_T(R.linear(1), 1.0, [0.0], [1.0], ell, 0.9, 1)


def test_kappa_uses_regularized_elapsed_time():
    ell = regularized(P.SubordinatorSpec.stable(1.5, 1.5))
    k = C.kappa_T(R.linear(1), 1.0, [0, 0], [0.1, 0], ell, 0.9, 2)
    assert k == pytest.approx(R.gamma_rho(R.linear(1), 2.0, 0.1) / ell.elapsed(0.9).min())


def test_config_validation():
    with pytest.raises(DomainError):
        C.CouplingConfig(1.0, [0.0], [1.0], epsilon=1.0)
    with pytest.raises(DomainError):
        C.CouplingConfig(0.0, [0.0], [1.0])
    with pytest.raises(DomainError):
        C.CouplingConfig(1.0, [0.0], [1.0, 2.0])
    assert C.CouplingConfig(1.0, [0.0], [2.0]).tol_meet == pytest.approx(3e-9)


# --- single trajectories ------------------------------------------------------------

def test_equal_starts_are_trivial():
    cfg = C.CouplingConfig(1.0, [0.2, -0.1], [0.2, -0.1])
    traj = C.simulate_coupled(S.ou_drift(2), cfg, regularized(P.SubordinatorSpec.stable(1.5, 1.5)),
                              P.BrownianStore(2, rng(1)))
    assert np.array_equal(traj.X, traj.Y)
    assert np.all(traj.tau == 0) and np.all(traj.M == 0) and traj.kappa == 0
    assert C.girsanov_weight(traj).R == 1.0


def test_deterministic_meeting_time():
    # b = 0, W = 0, ell(t) = t: |Z_t| = |Z_0| - kappa t, so tau = |x - y| / kappa
    grid = np.linspace(0, 1, 1001)
    ell = P.ClockPath(grid, grid[:, None], "linear")
    cfg = C.CouplingConfig(1.0, [0.0], [1.0], rho=R.linear(1))
    traj = C.simulate_coupled(S.zero_drift(1), cfg, ell, P.BrownianStore(1, zero=True))
    kappa = (math.e + 1) / 0.9
    assert traj.kappa == pytest.approx(kappa, rel=1e-12)
    assert traj.tau[0] == pytest.approx(1 / kappa, rel=1e-9)
    assert traj.Y[-1, 0] == traj.X[-1, 0] == 0.0
    assert traj.budget == pytest.approx(1.0, rel=1e-12)


def test_rejects_flat_clock():
    grid = np.linspace(0, 1, 51)
    ell = P.ClockPath(grid, np.minimum(grid, 0.5)[:, None], "linear")
    cfg = C.CouplingConfig(1.0, [0.0], [1.0])
    with pytest.raises(PreconditionError):
        C.simulate_coupled(S.zero_drift(1), cfg, ell, P.BrownianStore(1, rng(3)))


@given(st.integers(0, 2**32), st.sampled_from(["ou:1.0", "osgood", "rot-decay"]),
       st.floats(0.01, 1.0), st.floats(-1.0, 1.0))
@settings(max_examples=30, deadline=None)
def test_trajectory_invariants(seed, drift, y0, y1):
    b = S.parse_drift(drift, 2, R.linear(1.0) if drift != "osgood" else R.osgood())
    cfg = C.CouplingConfig(1.0, [0.0, 0.0], [y0, y1], rho=b.rho)
    ell = regularized(P.SubordinatorSpec.stable(1.5, 1.2), n=200, seed=seed)
    traj = C.simulate_coupled(b, cfg, ell, P.BrownianStore(2, rng(seed + 1)))
    # sticky: once met, equal forever, exactly
    for j in range(2):
        idx = np.flatnonzero(traj.met[:, j])
        if idx.size:
            assert np.all(traj.met[idx[0]:, j])
            assert np.array_equal(traj.X[idx[0]:, j], traj.Y[idx[0]:, j])
    assert traj.M[0] == 0 and traj.bracket[0] == 0
    assert np.all(np.diff(traj.bracket) >= 0)
    w = C.girsanov_weight(traj)
    assert w.R > 0 and w.R == math.exp(w.M_inf - 0.5 * w.bracket_inf)
    assert w.log_R == w.M_inf - 0.5 * w.bracket_inf
    assert w.bracket_inf <= w.bound + w.allowance * (1 + 1e-9) + 1e-12
    assert traj.budget <= traj.gamma + traj.kappa * traj.max_dl * 2 + 1e-12


# --- batches ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def ou_batch():
    cfg = C.CouplingConfig(1.0, [0.0, 0.0], [0.1, 0.0], rho=R.linear(1))
    return cfg, C.couple_batch(S.ou_drift(2), cfg, P.SubordinatorSpec.stable(1.5, 1.5), 1000, 3000, seed=4,
                               workers=2, keep=2)


def test_batch_diagnostics(ou_batch):
    _, batch = ou_batch
    diag = C.coupling_diagnostics(batch)
    assert diag["n_paths"] == 3000
    assert diag["success_rate"] >= 0.99
    assert abs(diag["mean_R"] - 1) <= 3 * diag["se_R"]
    assert diag["bracket_within_allowance"]
    assert diag["tau_le_T_rate"] >= 0.99
    assert diag["max_budget_excess"] == 0


def test_kept_trajectories_match_batch(ou_batch):
    _, batch = ou_batch
    assert len(batch.trajectories) == 2
    for i, traj in enumerate(batch.trajectories):
        assert np.array_equal(traj.X[-1], batch.X_T[i]) and np.array_equal(traj.Y[-1], batch.Y_T[i])
        assert traj.M[-1] == batch.M[i] and traj.bracket[-1] == batch.bracket[i]
    diag = C.coupling_diagnostics(batch.trajectories)
    assert diag["n_paths"] == 2


def test_law_identification(ou_batch):
    cfg, batch = ou_batch
    direct = simulate_terminal(S.ou_drift(2), [cfg.y], P.SubordinatorSpec.stable(1.5, 1.5), 1.0, 1000, 3000,
                               seed=5, workers=2, regularize_n=10_000)[0]
    for f in (TestFunction.shifted_gaussian_bump([0.3, 0.0], 0.7, 0.1), TestFunction.indicator_smooth([1.0, 1.0], 0.0, 2.0)):
        res = C.law_identification(batch, f, direct)
        assert res["agrees"], res


def test_trivial_batch_diagnostics():
    cfg = C.CouplingConfig(1.0, [0.3, 0.3], [0.3, 0.3])
    batch = C.couple_batch(S.rot_decay_drift(2), cfg, P.SubordinatorSpec.stable(1.5, 1.5), 50, 100, seed=6)
    diag = C.coupling_diagnostics(batch)
    assert diag["success_rate"] == 1 and diag["mean_R"] == 1 and diag["se_R"] == 0
    assert diag["max_bracket_violation"] == 0


def test_diagnostics_rejects_empty():
    with pytest.raises(DomainError):
        C.coupling_diagnostics([])


def test_batch_is_worker_invariant():
    cfg = C.CouplingConfig(1.0, [0.0], [0.2])
    spec = P.SubordinatorSpec.stable(1.5)
    a = C.couple_batch(S.ou_drift(1), cfg, spec, 100, 1200, seed=7, workers=1)
    b = C.couple_batch(S.ou_drift(1), cfg, spec, 100, 1200, seed=7, workers=3)
    assert np.array_equal(a.M, b.M) and np.array_equal(a.Y_T, b.Y_T)
