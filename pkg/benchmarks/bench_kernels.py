"""Compiled vs numpy kernel timings on the 5x5 open grid (L = 10, eps = 0.5).

    python3 benchmarks/bench_kernels.py [--repeat N] [--episodes N]
"""
import argparse
import time
import timeit

import numpy as np

from adagoal import kernels
from adagoal.envs import GridWorldSpec, build_two_room_grid
from adagoal.mdp import RngStream
from adagoal.samplers import make_sampler
from adagoal.tabular import (AdaGoalConfig, TabularLearner, explore, greedy_policy_values,
                             rebuild_tables, sparse_kernel)


def trained_learner(mdp, cfg, episodes):
    cfg_short = AdaGoalConfig(L=cfg.L, eps=cfg.eps, delta=cfg.delta, simplified_bonuses=True,
                              max_episodes=episodes)
    learner = TabularLearner(mdp, cfg_short)
    explore(mdp, cfg_short, make_sampler("adagoal"), RngStream(0), learner)
    return learner


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--episodes", type=int, default=200, help="episodes played before timing")
    args = parser.parse_args()

    mdp = build_two_room_grid(GridWorldSpec.open_grid(5)).mdp
    cfg = AdaGoalConfig(L=10, eps=0.5, delta=0.1, simplified_bonuses=True)
    learner = trained_learner(mdp, cfg, args.episodes)
    csr = sparse_kernel(mdp.P)
    print(f"S={mdp.S} A={mdp.A} H={cfg.horizon} goals={len(learner.goals)} "
          f"active backend={kernels.BACKEND}")

    timings = {}
    for name in ("compiled", "python"):
        try:
            kernels.get_backend(name)
        except ImportError:
            print(f"{name:9s} unavailable")
            continue
        t_rebuild = min(timeit.repeat(
            lambda: rebuild_tables(learner.model, learner.bonuses, learner.goals, cfg.horizon, backend=name),
            number=1, repeat=args.repeat))
        tables = rebuild_tables(learner.model, learner.bonuses, learner.goals, cfg.horizon, backend=name)
        t_eval = min(timeit.repeat(lambda: greedy_policy_values(mdp, tables, csr, backend=name),
                                   number=1, repeat=args.repeat))
        short = AdaGoalConfig(L=10, eps=0.5, delta=0.1, simplified_bonuses=True, max_episodes=100)
        t0 = time.perf_counter()
        explore(mdp, short, make_sampler("adagoal"), RngStream(0), TabularLearner(mdp, short, backend=name))
        t_run = time.perf_counter() - t0
        timings[name] = (t_rebuild, t_eval, t_run)
        print(f"{name:9s} rebuild {t_rebuild * 1e3:8.2f} ms   policy values {t_eval * 1e3:7.2f} ms   "
              f"100 episodes {t_run:6.2f} s")
    if len(timings) == 2:
        ratio = np.array(timings["python"]) / np.array(timings["compiled"])
        print("speedup   rebuild {:.1f}x   policy values {:.1f}x   100 episodes {:.1f}x".format(*ratio))


if __name__ == "__main__":
    main()
