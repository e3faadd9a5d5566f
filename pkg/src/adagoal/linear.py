"""AdaGoal on linear mixture MDPs: value- and error-targeted ridge regressions
per goal, with optimistic goal-conditioned tables built from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import LinearMixtureModel, MixtureEnv
from .mdp import RngStream
from .tabular import AdaGoalConfig, RunResult, explore


def confidence_radius(k: int, d: int, B: float, H: int, delta: float) -> float:
    if k < 1:
        raise ValueError("episode index starts at 1")
    return H * math.sqrt(d * math.log(3 * (1 + k * H**3 * (B + 1) ** 2) / delta)) + 1


def ridge_lambda(B: float) -> float:
    return 1.0 / (B + 1) ** 2


def psi(basis: np.ndarray, g: int, value: np.ndarray, s: int, a: int) -> np.ndarray:
    """Augmented aggregated feature of (s, a) for goal ``g`` and a value vector."""
    d = basis.shape[0]
    out = np.zeros(d + 1)
    if s == g:
        out[d] = value[g]
    else:
        out[:d] = basis[:, s, a, :] @ value
    return out


def psi_all(basis: np.ndarray, goals: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Features of every (goal, s, a) for per-goal value vectors ``values`` (G, S): (G, S, A, d+1)."""
    d, S, A, _ = basis.shape
    G = len(goals)
    out = np.empty((G, S, A, d + 1))
    out[..., :d] = np.einsum("isat,gt->gsai", basis, values)
    out[..., d] = 0.0
    rows = np.arange(G)
    out[rows, goals, :, :d] = 0.0
    out[rows, goals, :, d] = values[rows, goals][:, None]
    return out


def augmented_theta(model: LinearMixtureModel) -> np.ndarray:
    return np.append(model.theta_star, 1.0)


class GoalRegressors:
    """Ridge-regression state of all goals for one target kind (values or errors).

    Episodes are folded in as batches of rank-1 updates; the solution is
    refreshed from a Cholesky factorization at each episode end.
    """

    def __init__(self, n_goals: int, dim: int, lam: float, keep_history: bool = True):
        self.lam = lam
        self.Sigma = np.repeat(lam * np.eye(dim)[None], n_goals, axis=0)
        self.b = np.zeros((n_goals, dim))
        self.theta = np.zeros((n_goals, dim))
        self.Sigma_inv = np.repeat(np.eye(dim)[None] / lam, n_goals, axis=0)
        self.keep_history = keep_history
        self.history: list[tuple[np.ndarray, np.ndarray]] = []
        self.rebuilds = 0

    @property
    def dim(self) -> int:
        return self.b.shape[1]

    def update(self, contexts: np.ndarray, targets: np.ndarray) -> None:
        """``contexts`` (G, n, dim) and ``targets`` (G, n) from one episode."""
        self.Sigma += np.einsum("gni,gnj->gij", contexts, contexts)
        self.b += np.einsum("gni,gn->gi", contexts, targets)
        if self.keep_history:
            self.history.append((contexts.copy(), targets.copy()))
        self.refresh()

    def _from_scratch(self):
        dim = self.dim
        Sigma = np.repeat(self.lam * np.eye(dim)[None], len(self.b), axis=0)
        b = np.zeros_like(self.b)
        for C, y in self.history:
            Sigma += np.einsum("gni,gnj->gij", C, C)
            b += np.einsum("gni,gn->gi", C, y)
        return 0.5 * (Sigma + Sigma.transpose(0, 2, 1)), b

    def refresh(self) -> None:
        try:
            chol = np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            if not self.keep_history:
                raise
            # accumulated round-off: rebuild the sums and factor again
            self.Sigma, self.b = self._from_scratch()
            self.rebuilds += 1
            chol = np.linalg.cholesky(self.Sigma)
        eye = np.broadcast_to(np.eye(self.dim), self.Sigma.shape)
        inv_chol = np.linalg.solve(chol, eye)
        self.Sigma_inv = inv_chol.transpose(0, 2, 1) @ inv_chol
        self.theta = np.einsum("gij,gj->gi", self.Sigma_inv, self.b)

    def ellipsoid_radius(self, theta_star: np.ndarray) -> np.ndarray:
        """||Sigma^(1/2) (theta - theta_star)|| for every goal."""
        diff = self.theta - theta_star[None]
        return np.sqrt(np.maximum(np.einsum("gi,gij,gj->g", diff, self.Sigma, diff), 0.0))


@dataclass
class LinTables:
    """0-based layers as in the tabular tables: index h is step h+1, index H is zero."""

    goals: np.ndarray
    H: int
    V: np.ndarray     # (G, H+1, S)
    U: np.ndarray     # (G, H+1, S)
    pi: np.ndarray    # (G, H, S)
    Q: np.ndarray | None = None  # (G, H, S, A)


def _norms(features: np.ndarray, Sigma_inv: np.ndarray) -> np.ndarray:
    quad = np.einsum("gsai,gij,gsaj->gsa", features, Sigma_inv, features)
    return np.sqrt(np.maximum(quad, 0.0))


def rebuild_lin_tables(basis: np.ndarray, goals, vreg: GoalRegressors, ureg: GoalRegressors,
                       beta: float, H: int, store: bool = False) -> LinTables:
    goals = np.asarray(goals, dtype=np.int64)
    d, S, A, _ = basis.shape
    G = len(goals)
    rows = np.arange(G)
    cost = np.ones((G, S, 1))
    cost[rows, goals] = 0.0
    V = np.zeros((G, H + 1, S))
    U = np.zeros((G, H + 1, S))
    pi = np.zeros((G, H, S), dtype=np.int64)
    Qs = np.zeros((G, H, S, A)) if store else None
    sidx = np.arange(S)
    for h in range(H - 1, -1, -1):
        fv = psi_all(basis, goals, V[:, h + 1])
        wv = _norms(fv, vreg.Sigma_inv)
        Q = np.clip(cost + np.einsum("gsai,gi->gsa", fv, vreg.theta) - beta * wv, 0.0, H)
        act = np.argmin(Q, axis=2)
        pi[:, h] = act
        V[:, h] = np.take_along_axis(Q, act[..., None], 2)[..., 0]
        fu = psi_all(basis, goals, U[:, h + 1])
        fu_pi = fu[rows[:, None], sidx[None, :], act]          # (G, S, d+1)
        wu_pi = np.sqrt(np.maximum(np.einsum("gsi,gij,gsj->gs", fu_pi, ureg.Sigma_inv, fu_pi), 0.0))
        wv_pi = np.take_along_axis(wv, act[..., None], 2)[..., 0]
        U[:, h] = np.clip(2 * beta * wv_pi + np.einsum("gsi,gi->gs", fu_pi, ureg.theta)
                          + beta * wu_pi, 0.0, H)
        if store:
            Qs[:, h] = Q
    return LinTables(goals, H, V, U, pi, Qs)


@dataclass
class EllipsoidLog:
    """Worst ratio radius / beta_k seen per episode, for both regressions."""

    value: list[float] = field(default_factory=list)
    error: list[float] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(r <= 1.0 for r in self.value)


class LinearLearner:
    """Regressors plus tables for every goal; the interface used by ``explore``."""

    backend = None

    def __init__(self, env: MixtureEnv, config: AdaGoalConfig, radius_scale: float = 1.0,
                 track_ellipsoid: bool = False, keep_history: bool = True):
        mdp = env.mdp
        self.model = env.model
        self.basis = np.ascontiguousarray(env.model.basis)
        self.S, self.A, self.s0 = mdp.S, mdp.A, mdp.s0
        self.H = config.horizon
        self.goals = config.goals(mdp.S)
        self.eps, self.delta = config.eps, config.delta
        self.radius_scale = radius_scale
        dim = self.model.d + 1
        lam = ridge_lambda(self.model.B)
        self.vreg = GoalRegressors(len(self.goals), dim, lam, keep_history)
        self.ureg = GoalRegressors(len(self.goals), dim, lam, keep_history)
        self.k = 1
        self.ellipsoid = EllipsoidLog() if track_ellipsoid else None
        self.tables = self._rebuild()

    def beta(self, k: int) -> float:
        return self.radius_scale * confidence_radius(k, self.model.d, self.model.B, self.H, self.delta)

    def _rebuild(self) -> LinTables:
        beta = self.beta(self.k)
        if self.ellipsoid is not None:
            star = augmented_theta(self.model)
            self.ellipsoid.value.append(float(self.vreg.ellipsoid_radius(star).max() / beta))
            self.ellipsoid.error.append(float(self.ureg.ellipsoid_radius(star).max() / beta))
        return rebuild_lin_tables(self.basis, self.goals, self.vreg, self.ureg, beta, self.H)

    def estimates(self):
        return self.tables.V[:, 0, self.s0].copy(), self.tables.U[:, 0, self.s0] + 8 * self.eps / 9

    def actions(self, gi: int) -> np.ndarray:
        return self.tables.pi[gi]

    def contexts(self, trajectory):
        """Regression data of one episode for every goal, from the tables that drove it."""
        states, actions, nxt = (np.asarray(x) for x in trajectory)
        T = len(states)
        layers = np.arange(T)
        goals = self.goals
        d = self.model.d
        rows = self.basis[:, states, actions, :]                # (d, T, S)
        out = []
        for table in (self.tables.V, self.tables.U):
            vals = table[:, layers, :]                          # (G, T, S): layer of step t+1
            C = np.zeros((len(goals), T, d + 1))
            C[..., :d] = np.einsum("its,gts->gti", rows, vals)
            at_goal = states[None, :] == goals[:, None]         # (G, T)
            C[..., :d][at_goal] = 0.0
            C[..., d] = np.where(at_goal, vals[np.arange(len(goals)), :, goals], 0.0)
            y = vals[:, layers, nxt]
            out.append((C, y))
        return out

    def end_episode(self, k: int, trajectory) -> None:
        (cv, yv), (cu, yu) = self.contexts(trajectory)
        self.vreg.update(cv, yv)
        self.ureg.update(cu, yu)
        self.k = k + 1
        self.tables = self._rebuild()


def run_linear(env: MixtureEnv, config: AdaGoalConfig, sampler, rng: RngStream, monitor=None,
               radius_scale: float = 1.0, track_ellipsoid: bool = True) -> tuple[RunResult, LinearLearner]:
    """Linear-mixture AdaGoal with the same episode loop and outputs as the tabular run."""
    learner = LinearLearner(env, config, radius_scale, track_ellipsoid)
    result = explore(env.mdp, config, sampler, rng, learner, monitor)
    result.deviations = [x for x in result.deviations if x != "simplified bonuses"]
    if radius_scale != 1.0:
        result.deviations.append(f"confidence radius scaled by {radius_scale}")
    return result, learner
