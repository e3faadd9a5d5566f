"""Goal selection rules. Each sampler is a plain function of a SamplerInput."""
from __future__ import annotations

import numpy as np

from .tabular import SamplerInput

__all__ = ["SamplerInput", "adagoal_select", "unigoal_select", "raregoal_select",
           "raregoal_weights", "make_sampler"]


def adagoal_select(inp: SamplerInput) -> int:
    """Goal with the largest error estimate among those estimated within L."""
    goals = np.asarray(inp.goal_space)
    feasible = np.asarray(inp.D) <= inp.L
    if not feasible.any():
        return int(inp.s0)
    E = np.where(feasible, np.asarray(inp.E, dtype=np.float64), -np.inf)
    order = np.argsort(goals, kind="stable")
    # argmax returns the first maximiser, so scan goals in index order
    return int(goals[order][int(np.argmax(E[order]))])


def _candidates(inp: SamplerInput) -> np.ndarray:
    goals = np.asarray(inp.goal_space)
    return np.sort(goals[goals != inp.s0])


def unigoal_select(inp: SamplerInput) -> int:
    cand = _candidates(inp)
    if len(cand) == 0:
        return int(inp.s0)
    return int(cand[inp.rng.integers(len(cand))])


def raregoal_weights(counts, candidates, alpha: float) -> np.ndarray:
    n = np.maximum(np.asarray(counts, dtype=np.float64)[candidates], alpha)
    w = 1.0 / n
    return w / w.sum()


def raregoal_select(inp: SamplerInput, alpha: float) -> int:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    cand = _candidates(inp)
    if len(cand) == 0:
        return int(inp.s0)
    w = raregoal_weights(inp.counts, cand, alpha)
    u = inp.rng.random()
    i = int(np.searchsorted(np.cumsum(w), u, side="right"))
    return int(cand[min(i, len(cand) - 1)])


def make_sampler(name: str):
    """Sampler from its config name: "adagoal", "unigoal" or "raregoal:<alpha>"."""
    if name == "adagoal":
        return adagoal_select
    if name == "unigoal":
        return unigoal_select
    if name.startswith("raregoal"):
        _, _, arg = name.partition(":")
        alpha = float(arg) if arg else 0.1
        if not 0 < alpha <= 1:
            raise ValueError("raregoal alpha must lie in (0, 1]")

        def sampler(inp):
            return raregoal_select(inp, alpha)

        sampler.__name__ = f"raregoal_{alpha}"
        return sampler
    raise ValueError(f"unknown sampler {name!r}")
