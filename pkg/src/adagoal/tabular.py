"""Tabular AdaGoal with optimistic UCBVI-style goal-conditioned tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py, kernels
from .mdp import NonStationaryPolicy, ResettingPolicy, RngStream, TabularMdp


def horizon_for(L: float, eps: float) -> int:
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if L < 0:
        raise ValueError("L must be non-negative")
    return int(math.ceil(5 * (L + 2) * math.log(10 * (L + 2) / eps) / math.log(2)))


class EmpiricalModel:
    def __init__(self, S: int, A: int):
        self.S, self.A = S, A
        self.n_sa = np.zeros((S, A), dtype=np.int64)
        self.n_sas = np.zeros((S, A, S), dtype=np.int64)
        self.clock = 0

    def record_transition(self, s: int, a: int, s_next: int) -> None:
        self.n_sa[s, a] += 1
        self.n_sas[s, a, s_next] += 1
        self.clock += 1

    def record_episode(self, states, actions, next_states) -> None:
        np.add.at(self.n_sa, (states, actions), 1)
        np.add.at(self.n_sas, (states, actions, next_states), 1)
        self.clock += len(states)

    def phat(self, s: int, a: int) -> np.ndarray:
        n = self.n_sa[s, a]
        if n == 0:
            return np.full(self.S, 1.0 / self.S)
        return self.n_sas[s, a] / n

    def csr(self):
        """Observed successors of each (s, a) pair, flattened as ``s * A + a``."""
        flat = self.n_sas.reshape(self.S * self.A, self.S)
        rows, cols = np.nonzero(flat)
        counts = np.bincount(rows, minlength=self.S * self.A)
        ptr = np.zeros(self.S * self.A + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        n = self.n_sa.reshape(-1)
        prob = flat[rows, cols] / n[rows]
        return ptr, cols.astype(np.int64), prob.astype(np.float64)


@dataclass
class BonusParams:
    S: int
    A: int
    H: int
    delta: float
    simplified: bool = False

    def beta(self, n):
        n = np.asarray(n, dtype=np.float64)
        if self.simplified:
            return math.log(1 / self.delta) + np.log(n + 1)
        base = math.log(3 * self.S**2 * self.A * self.H / self.delta)
        return base + self.S * np.log(8 * math.e * (n + 1))

    def beta_star(self, n):
        n = np.asarray(n, dtype=np.float64)
        if self.simplified:
            return math.log(1 / self.delta) + np.log(n + 1)
        base = math.log(3 * self.S**2 * self.A * self.H / self.delta)
        return base + np.log(8 * math.e * (n + 1))

    @property
    def scales(self):
        """Multipliers (variance and second-order terms) for Q and for U."""
        if self.simplified:
            return 1.0, 1.0, 1.0, 1.0
        return 3.0, 14.0, 6.0, 36.0

    def coefficients(self, n_sa: np.ndarray):
        n = n_sa.reshape(-1).astype(np.float64)
        seen = n > 0
        safe_n = np.where(seen, n, 1.0)
        first = np.where(seen, self.beta_star(n) / safe_n, 0.0)
        second = np.where(seen, self.beta(n) / safe_n, 0.0)
        if not self.simplified:
            second = second * self.H**2
        return first, second


@dataclass
class OptimisticTables:
    """Per-goal tables, 0-based layers: index h holds step h+1, index H is the zero layer."""

    goals: np.ndarray
    H: int
    Vt: np.ndarray
    Vp: np.ndarray
    Upi: np.ndarray
    pi: np.ndarray
    Qt: np.ndarray | None = None
    Qp: np.ndarray | None = None
    U: np.ndarray | None = None

    def policy(self, gi: int) -> NonStationaryPolicy:
        return NonStationaryPolicy(self.pi[gi].copy())


def initial_tables(goals, H: int, S: int, A: int) -> OptimisticTables:
    return rebuild_tables(EmpiricalModel(S, A), BonusParams(S, A, H, 0.5), goals, H)


def rebuild_tables(model: EmpiricalModel, bonuses: BonusParams, goals, H: int,
                   store: bool = False, backend=None) -> OptimisticTables:
    """Backward induction over all goals. With ``store`` the full action tables
    are recomputed from the value layers and attached."""
    impl = kernels.get_backend(backend)
    goals = np.ascontiguousarray(goals, dtype=np.int64)
    G, S, A = len(goals), model.S, model.A
    ptr, succ, prob = model.csr()
    first, second = bonuses.coefficients(model.n_sa)
    consts = (*bonuses.scales, 1.0 / H, 1.0 + 3.0 / H)
    # every entry is written by the kernel
    Vt = np.empty((G, H + 1, S))
    Vp = np.empty((G, H + 1, S))
    Upi = np.empty((G, H + 1, S))
    pi = np.empty((G, H, S), dtype=np.int64)
    visits = model.n_sa.reshape(-1).copy()
    impl.rebuild(goals, H, S, A, ptr, succ, prob, visits, first, second, *consts, Vt, Vp, Upi, pi)
    tables = OptimisticTables(goals, H, Vt, Vp, Upi, pi)
    if store:
        Phat = _kernels_py.dense_model(S, A, ptr, succ, prob)
        full = [_kernels_py.backup(Phat, visits > 0, first, second, *consts, H, goals,
                                   Vt[:, h + 1], Vp[:, h + 1], Upi[:, h + 1]) for h in range(H)]
        tables.Qt, tables.Qp, tables.U = (np.stack([f[i] for f in full], axis=1) for i in range(3))
    return tables


def sparse_kernel(P: np.ndarray):
    """Flattened sparse rows of a dense (S, A, S) kernel, in the kernels' layout."""
    S, A = P.shape[:2]
    flat = P.reshape(S * A, S)
    rows, cols = np.nonzero(flat)
    ptr = np.zeros(S * A + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=S * A), out=ptr[1:])
    return ptr, cols.astype(np.int64), np.ascontiguousarray(flat[rows, cols])


def greedy_policy_values(mdp: TabularMdp, tables: OptimisticTables, csr=None, backend=None) -> np.ndarray:
    """True H-step value at s0 of every goal's greedy policy."""
    impl = kernels.get_backend(backend)
    ptr, succ, prob = csr if csr is not None else sparse_kernel(mdp.P)
    out = np.empty(len(tables.goals))
    impl.policy_values(ptr, succ, prob, mdp.A, mdp.s0, tables.goals, tables.pi, out)
    return out


def distance_estimate(tables: OptimisticTables, gi: int, s0: int) -> float:
    return float(tables.Vt[gi, 0, s0])


def error_estimate(tables: OptimisticTables, gi: int, s0: int, eps: float) -> float:
    return float(tables.Upi[gi, 0, s0]) + 8 * eps / 9


def estimates(tables: OptimisticTables, s0: int, eps: float):
    return tables.Vt[:, 0, s0].copy(), tables.Upi[:, 0, s0] + 8 * eps / 9


@dataclass
class AdaGoalConfig:
    L: float
    eps: float
    delta: float
    H: int | None = None
    goal_space: list[int] | None = None
    max_episodes: int = 10_000
    table_update_period: int = 1
    simplified_bonuses: bool = False

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.table_update_period < 1:
            raise ValueError("table_update_period must be positive")

    @property
    def horizon(self) -> int:
        return self.H if self.H is not None else horizon_for(self.L, self.eps)

    def goals(self, S: int) -> np.ndarray:
        if self.goal_space is None:
            return np.arange(S)
        return np.array(sorted({int(g) for g in self.goal_space}), dtype=np.int64)


@dataclass
class SamplerInput:
    goal_space: np.ndarray
    D: np.ndarray
    E: np.ndarray
    counts: np.ndarray
    L: float
    s0: int
    rng: RngStream


@dataclass
class RunResult:
    kappa: int
    tau: int
    episodes: int
    stopped_by: str
    H: int
    goals: np.ndarray
    X: list[int]
    D: np.ndarray
    E: np.ndarray
    policies: dict[int, ResettingPolicy]
    selections: list[int] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    deviations: list[str] = field(default_factory=list)


def stop_rule(D: np.ndarray, E: np.ndarray, L: float, eps: float) -> bool:
    feasible = D <= L
    return bool(feasible.any()) and float(E[feasible].max()) <= eps


class TabularLearner:
    """Empirical model plus optimistic tables, rebuilt at episode ends."""

    def __init__(self, mdp: TabularMdp, config: AdaGoalConfig, backend=None):
        self.S, self.A, self.s0 = mdp.S, mdp.A, mdp.s0
        self.H = config.horizon
        self.goals = config.goals(mdp.S)
        self.eps = config.eps
        self.period = config.table_update_period
        self.bonuses = BonusParams(mdp.S, mdp.A, self.H, config.delta, config.simplified_bonuses)
        self.model = EmpiricalModel(mdp.S, mdp.A)
        self.backend = backend
        self.tables = rebuild_tables(self.model, self.bonuses, self.goals, self.H, backend=backend)

    def estimates(self):
        return estimates(self.tables, self.s0, self.eps)

    def actions(self, gi: int) -> np.ndarray:
        return self.tables.pi[gi]

    def end_episode(self, k: int, trajectory) -> None:
        self.model.record_episode(*trajectory)
        if k % self.period == 0:
            self.tables = rebuild_tables(self.model, self.bonuses, self.goals, self.H,
                                         backend=self.backend)


def explore(mdp: TabularMdp, config: AdaGoalConfig, sampler, rng: RngStream, learner,
            monitor=None) -> RunResult:
    """Episode loop shared by the tabular and linear learners.

    ``monitor(k, learner)`` is called with the learner state driving episode k,
    before the stopping check.
    """
    if mdp.reset_action is None:
        raise ValueError("the exploration algorithm needs an MDP with a reset action")
    S, s0, H = mdp.S, mdp.s0, learner.H
    goals = learner.goals
    state_counts = np.zeros(S, dtype=np.int64)
    env_rng = rng.spawn(2 * rng.stream_id)
    sampler_rng = rng.spawn(2 * rng.stream_id + 1)
    deviations = []
    if config.H is not None:
        deviations.append(f"horizon overridden to {H}")
    if config.simplified_bonuses:
        deviations.append("simplified bonuses")
    if config.table_update_period > 1:
        deviations.append(f"tables rebuilt every {config.table_update_period} episodes")
    selections, records = [], []
    k, tau = 1, 0
    pos = {int(g): i for i, g in enumerate(goals)}
    while True:
        D, E = learner.estimates()
        if monitor is not None:
            monitor(k, learner)
        if stop_rule(D, E, config.L, config.eps):
            stopped_by = "rule"
            break
        if k > config.max_episodes:
            stopped_by = "cap"
            break
        g = int(sampler(SamplerInput(goals, D, E, state_counts, config.L, s0, sampler_rng)))
        gi = pos.get(g)
        if gi is not None:
            actions = np.ascontiguousarray(learner.actions(gi), dtype=np.int64)
        else:
            actions = np.full((H, S), mdp.reset_action, dtype=np.int64)
        u = env_rng.random(H + 1)
        states = np.empty(H + 1, dtype=np.int64)
        acts = np.empty(H, dtype=np.int64)
        kernels.get_backend(learner.backend).rollout(mdp.cumulative, actions, s0, u, states, acts)
        np.add.at(state_counts, states, 1)
        trajectory = (states[:-1], acts, states[1:])
        # the reset step (draw u[H]) is taken but carries no information
        tau += H + 1
        selections.append(g)
        records.append({
            "k": k, "goal": g,
            "D": float(D[gi]) if gi is not None else 0.0,
            "E": float(E[gi]) if gi is not None else 0.0,
            "steps": tau,
        })
        learner.end_episode(k, trajectory)
        k += 1
    X = [int(g) for g, d in zip(goals, D) if d <= config.L]
    policies = {
        g: ResettingPolicy(NonStationaryPolicy(learner.actions(pos[g]).copy()), mdp.reset_action)
        for g in X
    }
    return RunResult(k, tau, k - 1, stopped_by, H, goals, X, D, E, policies,
                     selections, records, deviations)


def run(mdp: TabularMdp, config: AdaGoalConfig, sampler, rng: RngStream, monitor=None,
        backend=None) -> RunResult:
    """Tabular AdaGoal: explore until every goal estimated within L has error at most eps."""
    if mdp.reset_action is None:
        raise ValueError("the exploration algorithm needs an MDP with a reset action")
    return explore(mdp, config, sampler, rng, TabularLearner(mdp, config, backend), monitor)
