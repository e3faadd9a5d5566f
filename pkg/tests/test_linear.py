import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adagoal.envs import build_mixture_env, default_mixture, small_grid_kernel
from adagoal.linear import (GoalRegressors, LinearLearner, augmented_theta, confidence_radius,
                            psi, psi_all, rebuild_lin_tables, ridge_lambda, run_linear)
from adagoal.mdp import RngStream
from adagoal.oracle import finite_horizon_optimal
from adagoal.samplers import make_sampler
from adagoal.tabular import AdaGoalConfig


def test_confidence_radius_value():
    # 4 sqrt(2 log(3 (1 + 64 * 4) / 0.1)) + 1, evaluated at 30 digits
    assert confidence_radius(1, 2, 1.0, 4, 0.1) == pytest.approx(17.92361518499626, rel=1e-14)
    with pytest.raises(ValueError):
        confidence_radius(0, 2, 1.0, 4, 0.1)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 10**6), d=st.integers(1, 5), B=st.floats(0.1, 10), H=st.integers(1, 200))
def test_confidence_radius_monotone(k, d, B, H):
    assert confidence_radius(k + 1, d, B, H, 0.1) > confidence_radius(k, d, B, H, 0.1)
    assert confidence_radius(k, d, B, H, 0.01) > confidence_radius(k, d, B, H, 0.1)


def test_psi_structure():
    env = default_mixture()
    basis = env.model.basis
    V = np.arange(6, dtype=float)
    assert psi(basis, 2, V, 2, 1).tolist() == [0.0, 0.0, 2.0]
    ones = np.ones(6)
    f = psi(basis, 2, ones, 0, 1)
    assert np.allclose(f[:2], basis[:, 0, 1].sum(axis=1)) and f[2] == 0
    assert f @ augmented_theta(env.model) == pytest.approx(1.0, abs=1e-12)


def test_psi_all_matches_pointwise():
    env = default_mixture()
    rng = np.random.default_rng(0)
    goals = np.array([0, 2, 5])
    values = rng.random((3, 6))
    full = psi_all(env.model.basis, goals, values)
    for gi, g in enumerate(goals):
        for s in range(6):
            for a in range(5):
                assert np.allclose(full[gi, s, a], psi(env.model.basis, g, values[gi], s, a), atol=0)


def test_zero_targets_keep_theta_zero():
    reg = GoalRegressors(2, 3, 0.25)
    rng = np.random.default_rng(1)
    reg.update(rng.random((2, 10, 3)), np.zeros((2, 10)))
    assert np.all(reg.theta == 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), episodes=st.integers(1, 8), lam=st.floats(0.05, 2.0))
def test_sequential_updates_match_closed_form(seed, episodes, lam):
    rng = np.random.default_rng(seed)
    reg = GoalRegressors(3, 4, lam)
    Cs, ys = [], []
    for _ in range(episodes):
        C = rng.normal(size=(3, 7, 4)) * 5
        y = rng.normal(size=(3, 7)) * 10
        reg.update(C, y)
        Cs.append(C)
        ys.append(y)
    C = np.concatenate(Cs, axis=1)
    y = np.concatenate(ys, axis=1)
    for g in range(3):
        M = lam * np.eye(4) + C[g].T @ C[g]
        theta = np.linalg.solve(M, C[g].T @ y[g])
        assert np.linalg.norm(reg.theta[g] - theta) <= 1e-8 * max(1.0, np.linalg.norm(theta))
        assert np.min(np.linalg.eigvalsh(reg.Sigma[g])) >= lam - 1e-10
        assert np.allclose(reg.Sigma[g], reg.Sigma[g].T)


def test_refresh_rebuilds_from_history():
    reg = GoalRegressors(1, 2, 0.5)
    reg.update(np.array([[[1.0, 2.0]]]), np.array([[3.0]]))
    good = reg.theta.copy()
    reg.Sigma[:] = -1.0  # corrupt the running sum
    reg.refresh()
    assert reg.rebuilds == 1 and np.allclose(reg.theta, good)
    strict = GoalRegressors(1, 2, 0.5, keep_history=False)
    strict.Sigma[:] = -1.0
    with pytest.raises(np.linalg.LinAlgError):
        strict.refresh()


def test_deterministic_env_residuals_vanish():
    # a single deterministic kernel: targets are exact linear functions of the contexts
    env = build_mixture_env(1, [small_grid_kernel()], [1.0])
    basis = env.model.basis
    rng = np.random.default_rng(3)
    reg = GoalRegressors(1, 2, 1e-12)
    C, y = [], []
    for _ in range(200):
        V = rng.random(6)
        s, a = int(rng.integers(1, 6)), int(rng.integers(5))
        f = psi(basis, 0, V, s, a)
        C.append(f)
        y.append(env.mdp.P[s, a] @ V)
    C, y = np.array(C)[None], np.array(y)[None]
    reg.update(C, y)
    assert np.max(np.abs(C[0] @ reg.theta[0] - y[0])) < 1e-9


def test_first_episode_tables():
    env = default_mixture()
    H = 5
    lam = ridge_lambda(env.model.B)
    goals = np.arange(6)
    vreg, ureg = GoalRegressors(6, 3, lam), GoalRegressors(6, 3, lam)
    beta = confidence_radius(1, 2, env.model.B, H, 0.1)
    t = rebuild_lin_tables(env.model.basis, goals, vreg, ureg, beta, H, store=True)
    cost = 1.0 - np.eye(6)
    assert np.allclose(t.Q[:, H - 1], cost[:, :, None] * np.ones(5))
    for h in range(H - 1):
        feats = psi_all(env.model.basis, goals, t.V[:, h + 1])
        expect = np.clip(cost[:, :, None] - beta * np.linalg.norm(feats, axis=3) / math.sqrt(lam), 0, H)
        assert np.allclose(t.Q[:, h], expect, atol=1e-12)
    rows = np.arange(6)
    assert np.all(t.V[rows, :, rows] == 0) and np.all(t.U[rows, :, rows] == 0)
    assert np.all((t.U >= 0) & (t.U <= H)) and np.all((t.V >= 0) & (t.V <= H))


def test_contexts_match_pointwise_features():
    env = default_mixture()
    cfg = AdaGoalConfig(L=2, eps=0.5, delta=0.1, H=6)
    learner = LinearLearner(env, cfg)
    learner.tables.V[:] = np.random.default_rng(0).random(learner.tables.V.shape)
    learner.tables.V[np.arange(6), :, np.arange(6)] = 0.0
    states = np.array([0, 1, 2, 2, 5, 4])
    acts = np.array([1, 1, 4, 0, 3, 2])
    nxt = np.array([1, 2, 2, 5, 4, 0])
    (C, y), _ = learner.contexts((states, acts, nxt))
    for gi in range(6):
        for t in range(6):
            V = learner.tables.V[gi, t]
            assert np.allclose(C[gi, t], psi(env.model.basis, gi, V, states[t], acts[t]), atol=1e-15)
            assert y[gi, t] == V[nxt[t]]


def test_start_only_goal_space_stops():
    env = default_mixture()
    cfg = AdaGoalConfig(L=2, eps=0.5, delta=0.1, goal_space=[0])
    r, _ = run_linear(env, cfg, make_sampler("adagoal"), RngStream(0))
    assert (r.kappa, r.tau, r.stopped_by) == (1, 0, "rule")
    assert r.E[0] == pytest.approx(8 * 0.5 / 9)


def test_short_run_optimism_and_ellipsoid():
    env = default_mixture()
    cfg = AdaGoalConfig(L=2, eps=0.5, delta=0.1, H=20, max_episodes=30)
    D_star = np.array([finite_horizon_optimal(env.mdp, g, 20).distance(0) for g in range(6)])
    seen = []

    def monitor(k, learner):
        seen.append(np.all(learner.tables.V[:, 0, 0] <= D_star + 1e-9))

    r, learner = run_linear(env, cfg, make_sampler("adagoal"), RngStream(1), monitor=monitor)
    assert r.stopped_by == "cap" and all(seen) and len(seen) == 31
    assert learner.ellipsoid.holds and len(learner.ellipsoid.value) == 31
    assert learner.vreg.history and learner.k == 31


def test_radius_scale_recorded():
    env = default_mixture()
    cfg = AdaGoalConfig(L=2, eps=0.5, delta=0.1, H=4, max_episodes=2)
    r, _ = run_linear(env, cfg, make_sampler("adagoal"), RngStream(0), radius_scale=0.5)
    assert "confidence radius scaled by 0.5" in r.deviations
