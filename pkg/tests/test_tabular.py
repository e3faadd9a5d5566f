import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adagoal import kernels
from adagoal.envs import GridWorldSpec, build_two_room_grid
from adagoal.mdp import RngStream, TabularMdp
from adagoal.oracle import finite_horizon_optimal, finite_horizon_policy_value
from adagoal.samplers import make_sampler
from adagoal.tabular import (AdaGoalConfig, BonusParams, EmpiricalModel, TabularLearner,
                             greedy_policy_values, horizon_for, initial_tables, rebuild_tables,
                             run, sparse_kernel, stop_rule)

from conftest import random_mdp

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


def straight_line_tables(n_sa, n_sas, goals, H, delta, simplified):
    """Hand-rolled loops over the three recursions, one cell at a time."""
    S, A = n_sa.shape
    if simplified:
        c = (1.0, 1.0, 1.0, 1.0)
    else:
        c = (3.0, 14.0, 6.0, 36.0)
    out = []
    for g in goals:
        Vt = np.zeros((H + 1, S))
        Vp = np.zeros((H + 1, S))
        Up = np.zeros((H + 1, S))
        pi = np.zeros((H, S), dtype=int)
        for h in range(H - 1, -1, -1):
            for s in range(S):
                if s == g:
                    continue
                qts, qps, us = [], [], []
                for a in range(A):
                    n = n_sa[s, a]
                    if n == 0:
                        qts.append(1.0)
                        qps.append(float(H))
                        us.append(float(H))
                        continue
                    if simplified:
                        beta = beta_star = math.log(1 / delta) + math.log(n + 1)
                        second = beta / n
                    else:
                        base = math.log(3 * S * S * A * H / delta)
                        beta = base + S * math.log(8 * math.e * (n + 1))
                        beta_star = base + math.log(8 * math.e * (n + 1))
                        second = H * H * beta / n
                    p = n_sas[s, a] / n
                    mt = sum(p[t] * Vt[h + 1, t] for t in range(S))
                    mp = sum(p[t] * Vp[h + 1, t] for t in range(S))
                    mu = sum(p[t] * Up[h + 1, t] for t in range(S))
                    var = sum(p[t] * (Vt[h + 1, t] - mt) ** 2 for t in range(S))
                    sd = math.sqrt(var * beta_star / n)
                    corr = (mp - mt) / H
                    qts.append(min(max(1 - c[0] * sd - c[1] * second - corr + mt, 0.0), H))
                    qps.append(min(max(1 + c[0] * sd + c[1] * second + corr + mp, 0.0), H))
                    us.append(min(max(c[2] * sd + c[3] * second + (1 + 3 / H) * mu, 0.0), H))
                a_best = min(range(A), key=lambda a: (qts[a], a))
                pi[h, s] = a_best
                Vt[h, s] = qts[a_best]
                Vp[h, s] = min(qps)
                Up[h, s] = us[a_best]
        out.append((Vt, Vp, Up, pi))
    return out


def random_counts(rng, S, A, scale=30, p_zero=0.3):
    n_sas = rng.integers(0, scale, size=(S, A, S))
    n_sas[rng.random((S, A, S)) < 0.5] = 0
    n_sas[rng.random((S, A)) < p_zero] = 0
    model = EmpiricalModel(S, A)
    model.n_sas = n_sas.astype(np.int64)
    model.n_sa = n_sas.sum(axis=2)
    return model


def test_horizon_rule_values():
    assert horizon_for(10, 0.5) == 475
    assert horizon_for(2, 0.5) == 127
    assert horizon_for(40, 1.0) == math.ceil(5 * 42 * math.log(420) / math.log(2))
    with pytest.raises(ValueError):
        horizon_for(10, 0)
    with pytest.raises(ValueError):
        horizon_for(-1, 0.5)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("simplified", [False, True])
def test_rebuild_matches_straight_line(backend, simplified):
    rng = np.random.default_rng(4)
    S, A, H = 4, 3, 6
    model = random_counts(rng, S, A)
    bonuses = BonusParams(S, A, H, 0.1, simplified)
    goals = np.arange(S)
    tables = rebuild_tables(model, bonuses, goals, H, backend=backend)
    ref = straight_line_tables(model.n_sa, model.n_sas, goals, H, 0.1, simplified)
    for gi, (Vt, Vp, Up, pi) in enumerate(ref):
        assert np.allclose(tables.Vt[gi], Vt, atol=1e-12, rtol=1e-12)
        assert np.allclose(tables.Vp[gi], Vp, atol=1e-12, rtol=1e-12)
        assert np.allclose(tables.Upi[gi], Up, atol=1e-12, rtol=1e-12)
        assert np.array_equal(tables.pi[gi], pi)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), S=st.integers(2, 6), A=st.integers(2, 4),
       H=st.integers(1, 12), simplified=st.booleans())
def test_backends_agree(seed, S, A, H, simplified):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(seed)
    model = random_counts(rng, S, A, scale=int(rng.integers(1, 200)))
    bonuses = BonusParams(S, A, H, 0.1, simplified)
    goals = np.arange(S)
    a = rebuild_tables(model, bonuses, goals, H, backend="python")
    b = rebuild_tables(model, bonuses, goals, H, backend="compiled")
    for name in ("Vt", "Vp", "Upi"):
        assert np.allclose(getattr(a, name), getattr(b, name), atol=1e-10, rtol=0)
    # compare policies only where the argmin is unambiguous
    full = rebuild_tables(model, bonuses, goals, H, store=True, backend="python")
    srt = np.sort(full.Qt, axis=3)
    clear = (srt[..., 1] - srt[..., 0] > 1e-9) if A > 1 else np.ones(srt.shape[:3], bool)
    assert np.array_equal(a.pi[clear], b.pi[clear])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), S=st.integers(2, 6), A=st.integers(2, 4),
       H=st.integers(1, 10), simplified=st.booleans())
def test_table_invariants(seed, S, A, H, simplified):
    rng = np.random.default_rng(seed)
    model = random_counts(rng, S, A)
    goals = np.arange(S)
    t = rebuild_tables(model, BonusParams(S, A, H, 0.1, simplified), goals, H, store=True)
    for arr in (t.Qt, t.Qp, t.U, t.Vt, t.Vp, t.Upi):
        assert np.all(arr >= 0) and np.all(arr <= H)
    rows = np.arange(S)
    assert np.all(t.Qt[rows, :, goals] == 0) and np.all(t.U[rows, :, goals] == 0)
    assert np.all(t.Vt[:, H] == 0) and np.all(t.Upi[:, H] == 0)
    # stored action tables agree with the value layers
    assert np.allclose(t.Qt.min(axis=3), t.Vt[:, :H], atol=1e-12)
    assert np.allclose(t.Qp.min(axis=3), t.Vp[:, :H], atol=1e-12)
    chosen = np.take_along_axis(t.U, t.pi[..., None], 3)[..., 0]
    assert np.allclose(chosen, t.Upi[:, :H], atol=1e-12)
    # the optimistic table never exceeds the pessimistic one
    assert np.all(t.Vt <= t.Vp + 1e-12)


def test_initial_estimates():
    goals = np.arange(4)
    t = initial_tables(goals, 7, 4, 3)
    D, E = t.Vt[:, 0, 0], t.Upi[:, 0, 0] + 8 * 0.5 / 9
    assert D.tolist() == [0.0, 1.0, 1.0, 1.0]
    assert E[0] == pytest.approx(8 * 0.5 / 9) and np.allclose(E[1:], 7 + 8 * 0.5 / 9)


def test_bonus_coefficients():
    b = BonusParams(3, 2, 5, 0.1, simplified=True)
    first, second = b.coefficients(np.array([[0, 4], [9, 1], [2, 0]]))
    assert first[0] == 0 and second[0] == 0
    assert first[1] == pytest.approx((math.log(10) + math.log(5)) / 4)
    assert second[1] == first[1]
    exact = BonusParams(3, 2, 5, 0.1)
    f2, s2 = exact.coefficients(np.array([[4, 4], [4, 4], [4, 4]]))
    base = math.log(3 * 9 * 2 * 5 / 0.1)
    assert f2[0] == pytest.approx((base + math.log(8 * math.e * 5)) / 4)
    assert s2[0] == pytest.approx(25 * (base + 3 * math.log(8 * math.e * 5)) / 4)


def test_empirical_model_csr():
    m = EmpiricalModel(2, 2)
    m.record_episode(np.array([0, 0, 1]), np.array([1, 1, 0]), np.array([1, 0, 1]))
    m.record_transition(0, 1, 1)
    assert m.clock == 4 and m.n_sa[0, 1] == 3
    ptr, succ, prob = m.csr()
    assert ptr.tolist() == [0, 0, 2, 3, 3]
    assert succ.tolist() == [0, 1, 1] and np.allclose(prob, [1 / 3, 2 / 3, 1])
    assert np.allclose(m.phat(1, 1), [0.5, 0.5])


def test_stop_rule():
    assert stop_rule(np.array([0.0, 5.0]), np.array([0.4, 9.0]), 4, 0.5)
    assert not stop_rule(np.array([0.0, 3.0]), np.array([0.4, 0.6]), 4, 0.5)
    assert not stop_rule(np.array([5.0]), np.array([0.1]), 4, 0.5)


def test_goal_space_start_only_stops_immediately():
    mdp = random_mdp(np.random.default_rng(0), 4, 3)
    cfg = AdaGoalConfig(L=5, eps=0.5, delta=0.1, goal_space=[0])
    r = run(mdp, cfg, make_sampler("adagoal"), RngStream(0))
    assert (r.kappa, r.tau, r.episodes, r.stopped_by) == (1, 0, 0, "rule")
    assert r.X == [0] and r.E[0] == pytest.approx(8 * 0.5 / 9)


def test_cap_is_reported():
    mdp = build_two_room_grid(GridWorldSpec.open_grid(3)).mdp
    cfg = AdaGoalConfig(L=4, eps=0.5, delta=0.1, max_episodes=3, H=10)
    r = run(mdp, cfg, make_sampler("adagoal"), RngStream(0))
    assert r.stopped_by == "cap" and r.episodes == 3 and r.tau == 33
    assert "horizon overridden to 10" in r.deviations
    assert len(r.selections) == 3 and [rec["k"] for rec in r.records] == [1, 2, 3]


def test_run_requires_reset():
    P = np.ones((2, 2, 2)) / 2
    with pytest.raises(ValueError):
        run(TabularMdp(P, 0), AdaGoalConfig(L=2, eps=0.5, delta=0.1), make_sampler("adagoal"), RngStream(0))


def test_config_checks():
    with pytest.raises(ValueError):
        AdaGoalConfig(L=1, eps=0, delta=0.1)
    with pytest.raises(ValueError):
        AdaGoalConfig(L=1, eps=0.5, delta=1.0)
    with pytest.raises(ValueError):
        AdaGoalConfig(L=1, eps=0.5, delta=0.1, table_update_period=0)


def test_deterministic_chain_converges_within_bonus_budget():
    # three-state chain, right or reset
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, min(s + 1, 2)] = 1.0
        P[s, 1, 0] = 1.0
    mdp = TabularMdp(P, 0, 1)
    cfg = AdaGoalConfig(L=3, eps=0.5, delta=0.1, H=6, simplified_bonuses=True, max_episodes=1000)
    learner = TabularLearner(mdp, cfg)
    rng = RngStream(1)
    for k in range(1, 1001):
        learner.end_episode(k, (np.array([0, 1, 2, 2, 2, 2]), np.zeros(6, dtype=int),
                                np.array([1, 2, 2, 2, 2, 2])))
        learner.model.record_episode(np.array([0]), np.array([1]), np.array([0]))
    t = rebuild_tables(learner.model, learner.bonuses, learner.goals, 6, store=True)
    D_star = finite_horizon_optimal(mdp, 2, 6).distance(0)
    # single successors give zero variance, so per step the optimistic value
    # loses b = beta / n plus (V_ - V~) / H, and V_ - V~ grows at most like
    # d_h = (1 + 2/H) d_{h+1} + 2b
    first, second = learner.bonuses.coefficients(learner.model.n_sa)
    b, H = float(np.max(second)), 6
    budget = H * b * (1 + 2 * (1 + 2 / H) ** H)
    assert t.Vt[2, 0, 0] <= D_star + 1e-12
    assert D_star - t.Vt[2, 0, 0] <= budget


@pytest.mark.parametrize("backend", BACKENDS)
def test_greedy_policy_values_match_oracle(backend):
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, 5, 3)
    model = random_counts(rng, 5, 3)
    t = rebuild_tables(model, BonusParams(5, 3, 8, 0.1, True), np.arange(5), 8)
    vals = greedy_policy_values(mdp, t, sparse_kernel(mdp.P), backend=backend)
    for gi in range(5):
        ref = finite_horizon_policy_value(mdp, gi, t.policy(gi))[0, 0]
        assert vals[gi] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_rollout_matches_searchsorted(backend):
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, 6, 3)
    actions = rng.integers(0, 3, size=(20, 6))
    u = rng.random(21)
    states = np.empty(21, dtype=np.int64)
    acts = np.empty(20, dtype=np.int64)
    kernels.get_backend(backend).rollout(mdp.cumulative, actions, 0, u, states, acts)
    s = 0
    for h in range(20):
        a = actions[h, s]
        assert acts[h] == a
        s = min(int(np.searchsorted(mdp.cumulative[s, a], u[h], side="right")), 5)
        assert states[h + 1] == s


def test_backend_choice():
    assert kernels.get_backend("python").__name__.endswith("_kernels_py")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_run_is_deterministic():
    mdp = build_two_room_grid(GridWorldSpec.open_grid(3, p_f=0.1)).mdp
    cfg = AdaGoalConfig(L=4, eps=0.5, delta=0.1, H=12, simplified_bonuses=True, max_episodes=200)
    a = run(mdp, cfg, make_sampler("raregoal:0.1"), RngStream(5))
    b = run(mdp, cfg, make_sampler("raregoal:0.1"), RngStream(5))
    assert a.records == b.records and a.X == b.X and np.array_equal(a.E, b.E)
