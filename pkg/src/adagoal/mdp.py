"""Tabular MDPs with a reset action, goal-absorbed views, policies and seeded sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12


class InvalidMdpError(ValueError):
    pass


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


class TabularMdp:
    """Finite MDP given by a dense kernel ``P[s, a, s']``.

    ``reset_action`` may be ``None`` only for reset-free instances, which the
    exploration algorithms refuse.
    """

    def __init__(self, P, s0: int = 0, reset_action: int | None = None, *, validate: bool = True):
        P = np.array(P, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidMdpError(f"transition table must have shape (S, A, S), got {P.shape}")
        self.S, self.A = P.shape[0], P.shape[1]
        self.s0 = int(s0)
        self.reset_action = None if reset_action is None else int(reset_action)
        self.P = P
        if validate:
            report = validate_mdp(self)
            if not report.ok:
                raise InvalidMdpError("; ".join(report.violations))
            # renormalize rows that passed the tolerance check
            self.P = self.P / self.P.sum(axis=2, keepdims=True)
        self.P.setflags(write=False)
        self._cum = None

    @property
    def cumulative(self) -> np.ndarray:
        if self._cum is None:
            cum = np.cumsum(self.P, axis=2)
            cum[..., -1] = 1.0
            self._cum = cum
        return self._cum

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "A": self.A,
            "s0": self.s0,
            "reset_action": self.reset_action,
            "P": self.P.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        mdp = cls(data["P"], s0=data["s0"], reset_action=data.get("reset_action"))
        if mdp.S != data["S"] or mdp.A != data["A"]:
            raise InvalidMdpError("declared S/A do not match the transition table")
        return mdp

    def __repr__(self):
        return f"TabularMdp(S={self.S}, A={self.A}, s0={self.s0}, reset_action={self.reset_action})"


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    report = ValidationReport()
    P = mdp.P
    S, A = mdp.S, mdp.A
    if not 0 <= mdp.s0 < S:
        report.violations.append(f"index-range: start state {mdp.s0} not in [0, {S})")
    if mdp.reset_action is not None and not 0 <= mdp.reset_action < A:
        report.violations.append(f"index-range: reset action {mdp.reset_action} not in [0, {A})")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        for s, a in zip(*np.nonzero(~np.isfinite(P).all(axis=2) | (P < 0).any(axis=2))):
            report.violations.append(f"row-sum: negative or non-finite entry at (s={s}, a={a})")
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        report.violations.append(f"row-sum: row (s={s}, a={a}) sums to {sums[s, a]!r}")
    if report.ok and mdp.reset_action is not None:
        rows = P[:, mdp.reset_action, mdp.s0]
        for s in np.nonzero(rows != 1.0)[0]:
            # exact equality is required, up to the row-sum tolerance of the row
            if abs(rows[s] - 1.0) > ROW_SUM_TOL:
                report.violations.append(
                    f"reset-row: P[{s}][reset][s0] = {rows[s]!r}, expected 1"
                )
    return report


def load_mdp(path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def apply_transition_operator(mdp: TabularMdp, value, s: int, a: int) -> float:
    """Expectation of ``value`` under ``P(. | s, a)``."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != (mdp.S,):
        raise ValueError(f"value must have length {mdp.S}")
    _check_sa(mdp, s, a)
    return float(mdp.P[s, a] @ value)


@dataclass(frozen=True)
class GoalAbsorbedView:
    """``base`` with a self-loop at ``goal`` and unit cost off the goal.

    No kernel copy is made; ``row`` materializes a single row on demand.
    """

    base: TabularMdp
    goal: int

    def __post_init__(self):
        if not 0 <= self.goal < self.base.S:
            raise IndexError(f"goal {self.goal} out of range")

    def row(self, s: int, a: int) -> np.ndarray:
        if s == self.goal:
            r = np.zeros(self.base.S)
            r[self.goal] = 1.0
            return r
        return self.base.P[s, a]

    def cost(self, s: int, a: int | None = None) -> float:
        return 0.0 if s == self.goal else 1.0

    def kernel(self) -> np.ndarray:
        P = np.array(self.base.P)
        P[self.goal] = 0.0
        P[self.goal, :, self.goal] = 1.0
        return P


def goal_apply(view: GoalAbsorbedView, value, s: int, a: int) -> float:
    """``p_g Y(s, a)`` for a vector with ``Y(g) = 0``.

    Such vectors see no difference between the absorbed and the base kernel,
    so the base row is used directly.
    """
    value = np.asarray(value, dtype=np.float64)
    if value[view.goal] != 0.0:
        raise ValueError("value must vanish at the goal state")
    if s == view.goal:
        _check_sa(view.base, s, a)
        return 0.0
    return apply_transition_operator(view.base, value, s, a)


def absorbed_kernel(mdp: TabularMdp, goal: int) -> np.ndarray:
    return GoalAbsorbedView(mdp, goal).kernel()


def _check_sa(mdp: TabularMdp, s: int, a: int) -> None:
    if not 0 <= s < mdp.S:
        raise IndexError(f"state {s} out of range")
    if not 0 <= a < mdp.A:
        raise IndexError(f"action {a} out of range")


class RngStream:
    """Seeded generator; the pair (seed, stream_id) fixes the draw sequence."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, a, p=None):
        return self.generator.choice(a, p=p)

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def sample_step(mdp: TabularMdp, s: int, a: int, rng: RngStream) -> int:
    u = rng.random()
    nxt = int(np.searchsorted(mdp.cumulative[s, a], u, side="right"))
    # guard against u landing beyond a cumulative sum below 1 by round-off
    return min(nxt, mdp.S - 1)


@dataclass
class NonStationaryPolicy:
    """Deterministic policy ``actions[h, s]`` for steps h = 0..H-1 (0-based)."""

    actions: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.actions.ndim != 2:
            raise ValueError("policy table must have shape (H, S)")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def __call__(self, h: int, s: int) -> int:
        return int(self.actions[h, s])

    def check(self, num_actions: int) -> bool:
        return bool(np.all((self.actions >= 0) & (self.actions < num_actions)))


@dataclass
class ResettingPolicy:
    """Runs ``inner`` for H steps, then the reset action, and repeats.

    Global steps are counted from 1: step i plays the reset action when
    ``i % (H + 1) == 0`` and the inner action for step ``i % (H + 1)`` otherwise.
    """

    inner: NonStationaryPolicy
    reset_action: int

    @property
    def horizon(self) -> int:
        return self.inner.horizon

    def action(self, i: int, s: int) -> int:
        r = i % (self.horizon + 1)
        if r == 0:
            return self.reset_action
        return self.inner(r - 1, s)

    def to_dict(self) -> dict:
        return {"reset_action": self.reset_action, "actions": self.inner.actions.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ResettingPolicy":
        return cls(NonStationaryPolicy(np.asarray(data["actions"])), int(data["reset_action"]))
