"""Exact planning on known MDPs: finite-horizon and shortest-path values, resetting
policy evaluation, reachable sets and the PAC verdict."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import GoalAbsorbedView, NonStationaryPolicy, ResettingPolicy, TabularMdp

V_MAX = 1e9
SET_TOL = 1e-9
UNBOUNDED_TOL = 1e-15


@dataclass
class FiniteHorizonValues:
    """``values[h - 1]`` holds the layer-h value, h = 1..H+1."""

    goal: int
    horizon: int
    values: np.ndarray
    policy: NonStationaryPolicy

    def layer(self, h: int) -> np.ndarray:
        return self.values[h - 1]

    def distance(self, s0: int) -> float:
        return float(self.values[0, s0])


def finite_horizon_optimal(mdp: TabularMdp, g: int, H: int) -> FiniteHorizonValues:
    if H < 1:
        raise ValueError("horizon must be at least 1")
    S = mdp.S
    cost = np.ones(S)
    cost[g] = 0.0
    V = np.zeros((H + 1, S))
    actions = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        nxt = V[h + 1].copy()
        nxt[g] = 0.0
        Q = cost[:, None] + mdp.P @ nxt
        Q[g] = 0.0
        actions[h] = np.argmin(Q, axis=1)
        V[h] = Q[np.arange(S), actions[h]]
    return FiniteHorizonValues(g, H, V, NonStationaryPolicy(actions))


def finite_horizon_policy_value(mdp: TabularMdp, g: int, policy: NonStationaryPolicy) -> np.ndarray:
    """Layer values of ``policy`` in the H-step goal-absorbed model, shape (H+1, S)."""
    H, S = policy.horizon, mdp.S
    cost = np.ones(S)
    cost[g] = 0.0
    V = np.zeros((H + 1, S))
    idx = np.arange(S)
    for h in range(H - 1, -1, -1):
        V[h] = cost + mdp.P[idx, policy.actions[h]] @ V[h + 1]
        V[h, g] = 0.0
    return V


def reach_failure_prob(mdp: TabularMdp, g: int, policy: NonStationaryPolicy, H: int | None = None) -> float:
    """P(state after H policy steps is not g), starting from s0 in the absorbed model."""
    if H is not None and H != policy.horizon:
        raise ValueError("policy horizon does not match H")
    Pg = GoalAbsorbedView(mdp, g).kernel()
    idx = np.arange(mdp.S)
    dist = np.zeros(mdp.S)
    dist[mdp.s0] = 1.0
    for h in range(policy.horizon):
        dist = dist @ Pg[idx, policy.actions[h]]
    return float(max(0.0, 1.0 - dist[g]))


def evaluate_resetting_policy(mdp: TabularMdp, g: int, policy: ResettingPolicy) -> float:
    """Expected steps to reach g under the resetting policy; ``math.inf`` if it never does."""
    if g == mdp.s0:
        return 0.0
    vbar = float(finite_horizon_policy_value(mdp, g, policy.inner)[0, mdp.s0])
    q = reach_failure_prob(mdp, g, policy.inner)
    if q >= 1.0 - UNBOUNDED_TOL:
        return math.inf
    return (vbar + q) / (1.0 - q)


@dataclass
class SspValues:
    goal: int
    values: np.ndarray
    unreachable: np.ndarray
    tolerance: float = 1e-9
    used_fallback: bool = False

    def __getitem__(self, s):
        return self.values[s]

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "values": [None if u else float(v) for v, u in zip(self.values, self.unreachable)],
            "unreachable": [bool(u) for u in self.unreachable],
            "tolerance": self.tolerance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _almost_sure_set(Pg: np.ndarray, g: int):
    """States that can reach g with probability one, and the actions keeping them there."""
    S, A = Pg.shape[:2]
    support = Pg > 0
    alive = np.ones(S, dtype=bool)
    while True:
        safe = ~np.any(support & ~alive[None, None, :], axis=2) & alive[:, None]
        # backward search from g over safe actions
        hit = np.zeros(S, dtype=bool)
        hit[g] = True
        changed = True
        while changed:
            reach = np.any(safe & np.any(support & hit[None, None, :], axis=2), axis=1)
            new = hit | reach
            changed = bool(np.any(new != hit))
            hit = new
        if np.array_equal(hit, alive):
            return alive, safe
        alive = hit


def _proper_policy(Pg: np.ndarray, g: int, alive: np.ndarray, safe: np.ndarray) -> np.ndarray:
    S = Pg.shape[0]
    pi = np.zeros(S, dtype=np.int64)
    done = np.zeros(S, dtype=bool)
    done[g] = True
    frontier = deque([g])
    support = Pg > 0
    while frontier:
        frontier.popleft()
        for s in np.nonzero(alive & ~done)[0]:
            ok = safe[s] & np.any(support[s][:, done], axis=1)
            if ok.any():
                pi[s] = int(np.argmax(ok))
                done[s] = True
                frontier.append(s)
    return pi


def _truncated_vi(Pg, cost, safe, alive, horizon: int, V0=None) -> np.ndarray:
    S = Pg.shape[0]
    V = np.zeros(S) if V0 is None else V0.copy()
    for _ in range(horizon):
        Q = cost[:, None] + Pg @ V
        Q[~safe] = np.inf
        Vn = np.where(alive, Q.min(axis=1), np.inf)
        if np.allclose(Vn, V, rtol=1e-15, atol=0, equal_nan=False):
            return Vn
        V = Vn
    return V


def ssp_optimal(mdp: TabularMdp, g: int, v_max: float = V_MAX, tol: float = 1e-9) -> SspValues:
    """Optimal expected hitting times of g by policy iteration with exact solves."""
    view = GoalAbsorbedView(mdp, g)
    Pg = view.kernel()
    S = mdp.S
    cost = np.ones(S)
    cost[g] = 0.0
    alive, safe = _almost_sure_set(Pg, g)
    pi = _proper_policy(Pg, g, alive, safe)
    free = np.nonzero(alive & (np.arange(S) != g))[0]
    V = np.where(alive, 0.0, np.inf)
    used_fallback = False
    for _ in range(10 * S * mdp.A + 10):
        M = np.eye(len(free)) - Pg[free, pi[free]][:, free]
        try:
            sol = np.linalg.solve(M, np.ones(len(free)))
            if not np.all(np.isfinite(sol)) or np.any(sol < -tol):
                raise np.linalg.LinAlgError("improper policy")
            V[free] = sol
        except np.linalg.LinAlgError:
            used_fallback = True
            horizon = int(min(10 * v_max, 10**7))
            V = _truncated_vi(Pg, cost, safe, alive, horizon, np.where(alive, 0.0, np.inf))
            break
        V[g] = 0.0
        Q = cost[:, None] + Pg @ np.where(alive, V, 0.0)
        Q[~safe] = np.inf
        best = Q[free].min(axis=1)
        current = Q[free, pi[free]]
        improve = best < current - 1e-12 * np.maximum(1.0, np.abs(current))
        if not improve.any():
            break
        idx = free[improve]
        pi[idx] = np.argmin(Q[idx], axis=1)
    V[g] = 0.0
    unreachable = ~alive | (V > v_max)
    V = np.where(unreachable, np.inf, V)
    return SspValues(g, V, unreachable, tol, used_fallback)


def value_iteration_ssp(mdp: TabularMdp, g: int, iterations: int, tol: float = 0.0) -> np.ndarray:
    """Plain value iteration from zero, stopped early if successive sweeps agree to ``tol``."""
    Pg = GoalAbsorbedView(mdp, g).kernel()
    cost = np.ones(mdp.S)
    cost[g] = 0.0
    V = np.zeros(mdp.S)
    for _ in range(iterations):
        Vn = (cost[:, None] + Pg @ V).min(axis=1)
        if tol and np.max(np.abs(Vn - V)) <= tol:
            return Vn
        V = Vn
    return V


def ssp_distances(mdp: TabularMdp, goals) -> dict[int, float]:
    return {int(g): float(ssp_optimal(mdp, int(g))[mdp.s0]) for g in goals}


def reachable_set(mdp: TabularMdp, goal_space, L: float, slack: float = 0.0, distances=None) -> set[int]:
    dist = distances if distances is not None else ssp_distances(mdp, goal_space)
    return {int(g) for g in goal_space if dist[int(g)] <= L + slack + SET_TOL}


@dataclass
class PacVerdict:
    c1_holds: dict[int, bool] = field(default_factory=dict)
    c2_holds: bool = False
    gaps: dict[int, float] = field(default_factory=dict)
    missing: list[int] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.c2_holds and all(self.c1_holds.values()) and not self.missing

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "c1_holds": {str(g): v for g, v in sorted(self.c1_holds.items())},
            "c2_holds": self.c2_holds,
            "gaps": {str(g): (None if math.isinf(v) else v) for g, v in sorted(self.gaps.items())},
            "missing": list(self.missing),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def verify_pac(mdp: TabularMdp, goal_space, L: float, eps: float, X, policies: dict) -> PacVerdict:
    """Check per-goal eps-optimality (C1) and G_L <= X <= G_{L+eps} (C2)."""
    goal_space = [int(g) for g in goal_space]
    dist = ssp_distances(mdp, goal_space)
    X = {int(g) for g in X}
    verdict = PacVerdict()
    for g in sorted(X):
        if g not in dist:
            # outside the goal space, so it cannot belong to any reachable set
            verdict.c1_holds[g] = False
            verdict.gaps[g] = math.inf
            continue
        if g == mdp.s0:
            verdict.c1_holds[g] = True
            verdict.gaps[g] = 0.0
            continue
        pol = policies.get(g)
        if pol is None:
            verdict.missing.append(g)
            verdict.c1_holds[g] = False
            verdict.gaps[g] = math.inf
            continue
        value = evaluate_resetting_policy(mdp, g, pol)
        gap = value - dist[g]
        verdict.gaps[g] = gap
        verdict.c1_holds[g] = bool(gap <= eps + SET_TOL)
    inner = reachable_set(mdp, goal_space, L, distances=dist)
    outer = reachable_set(mdp, goal_space, L + eps, distances=dist)
    verdict.c2_holds = inner <= X <= outer
    return verdict
