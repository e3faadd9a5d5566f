"""Batch runner: config validation, seed sweeps, curriculum over L, output files
and offline verification."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .linear import run_linear
from .mdp import ResettingPolicy, RngStream, TabularMdp
from .oracle import PacVerdict, verify_pac
from .samplers import make_sampler
from .tabular import AdaGoalConfig, RunResult, run

ALGORITHMS = ("adagoal-ucbvi", "adagoal-ucrlvtr")
ENV_KINDS = ("grid", "open-grid", "reset-free", "bpi-ssp", "mixture")


class ConfigError(ValueError):
    pass


def build_env(kind: str, params: dict | None = None):
    """TabularMdp or MixtureEnv from a constructor name and its parameters."""
    params = dict(params or {})
    if kind == "grid":
        return envs.build_two_room_grid(envs.GridWorldSpec.from_dict(params)).mdp
    if kind == "open-grid":
        return envs.build_two_room_grid(envs.GridWorldSpec.open_grid(**params)).mdp
    if kind == "reset-free":
        reset_free = bool(params.pop("reset_free", False))
        return envs.build_hard_reset_free(envs.HardResetFreeSpec(**params), reset_free=reset_free)
    if kind == "bpi-ssp":
        return envs.build_bpi_ssp_hard(envs.BpiSspHardSpec(**params))
    if kind == "mixture":
        if "kernels" in params:
            kernels = [envs.small_grid_kernel(**k) for k in params["kernels"]]
            return envs.build_mixture_env(len(kernels), kernels, params["weights"],
                                          s0=params.get("s0", 0), B=params.get("B"))
        return envs.default_mixture(tuple(params.get("weights", (0.7, 0.3))))
    raise ConfigError(f"unknown env kind {kind!r}; expected one of {ENV_KINDS}")


def env_to_dict(env) -> dict:
    return env.to_dict()


def env_from_dict(data: dict):
    if "basis" in data:
        return envs.MixtureEnv.from_dict(data)
    return TabularMdp.from_dict(data)


def resolve_env(spec, base_dir: Path | None = None):
    """Env from a config entry: a file path, {"file": path}, {"kind", "params"} or an inline MDP."""
    if isinstance(spec, str):
        spec = {"file": spec}
    if not isinstance(spec, dict):
        raise ConfigError("env must be a path or an object")
    if "file" in spec:
        path = Path(spec["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read env file {path}: {exc}") from exc
        return env_from_dict(data)
    if "kind" in spec:
        try:
            return build_env(spec["kind"], spec.get("params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid env parameters: {exc}") from exc
    if "P" in spec or "basis" in spec:
        return env_from_dict(spec)
    raise ConfigError("env needs one of: file, kind, or an inline MDP")


@dataclass
class RunConfig:
    env: object
    algorithm: str = "adagoal-ucbvi"
    sampler: str = "adagoal"
    L: float = 10.0
    eps: float = 0.5
    delta: float = 0.1
    H: int | None = None
    simplified_bonuses: bool = False
    max_episodes: int = 10_000
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    goal_space: list[int] | None = None
    table_update_period: int = 1
    buckets: int = 3
    verify: bool = False
    workers: int = 1

    # fields that do not change what a run computes
    _NOT_HASHED = ("seeds", "output_dir", "verify", "workers", "env")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "env" not in data:
            raise ConfigError("config needs an env")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}")
        try:
            make_sampler(self.sampler)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        need(isinstance(self.L, (int, float)) and self.L >= 0, "L must be a non-negative number")
        need(isinstance(self.eps, (int, float)) and 0 < self.eps <= 1, "eps must lie in (0, 1]")
        need(isinstance(self.delta, (int, float)) and 0 < self.delta < 1, "delta must lie in (0, 1)")
        need(self.H is None or (isinstance(self.H, int) and self.H >= 1), "H must be a positive integer")
        need(isinstance(self.simplified_bonuses, bool), "simplified_bonuses must be a boolean")
        need(isinstance(self.max_episodes, int) and self.max_episodes >= 0, "max_episodes must be >= 0")
        need(isinstance(self.seeds, list) and len(self.seeds) > 0
             and all(isinstance(s, int) and s >= 0 for s in self.seeds),
             "seeds must be a non-empty list of non-negative integers")
        need(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        need(self.goal_space is None or (isinstance(self.goal_space, list)
                                         and all(isinstance(g, int) for g in self.goal_space)),
             "goal_space must be a list of state indices")
        need(isinstance(self.table_update_period, int) and self.table_update_period >= 1,
             "table_update_period must be a positive integer")
        need(isinstance(self.buckets, int) and self.buckets >= 1, "buckets must be a positive integer")
        need(isinstance(self.workers, int) and self.workers >= 1, "workers must be a positive integer")

    def adagoal_config(self) -> AdaGoalConfig:
        return AdaGoalConfig(L=float(self.L), eps=float(self.eps), delta=float(self.delta), H=self.H,
                             goal_space=self.goal_space, max_episodes=self.max_episodes,
                             table_update_period=self.table_update_period,
                             simplified_bonuses=self.simplified_bonuses)

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(cfg: RunConfig, env) -> str:
    """Hash of every field that changes the computation; the env enters by content."""
    payload = {k: v for k, v in cfg.to_dict().items() if k not in RunConfig._NOT_HASHED}
    payload["L"], payload["eps"], payload["delta"] = float(cfg.L), float(cfg.eps), float(cfg.delta)
    if payload["goal_space"] is not None:
        payload["goal_space"] = sorted(set(payload["goal_space"]))
    payload["env"] = env_to_dict(env)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def frequency_table(selections, goal_states, buckets: int) -> np.ndarray:
    """Selection counts, goal x episode bucket; buckets split the episodes as evenly as possible."""
    goal_states = list(goal_states)
    row = {g: i for i, g in enumerate(goal_states)}
    table = np.zeros((len(goal_states), buckets), dtype=np.int64)
    for b, chunk in enumerate(np.array_split(np.asarray(selections, dtype=np.int64), buckets)):
        for g in chunk:
            table[row[int(g)], b] += 1
    return table


def frequencies_csv(table: np.ndarray, goal_states) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["goal_state"] + [f"bucket_{b}" for b in range(table.shape[1])])
    for g, counts in zip(goal_states, table):
        writer.writerow([int(g)] + [int(c) for c in counts])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _mdp_of(env) -> TabularMdp:
    return env.mdp if isinstance(env, envs.MixtureEnv) else env


def execute(cfg: RunConfig, env, seed: int, L: float | None = None) -> RunResult:
    acfg = cfg.adagoal_config()
    if L is not None:
        acfg.L = float(L)
    sampler = make_sampler(cfg.sampler)
    rng = RngStream(seed)
    if cfg.algorithm == "adagoal-ucrlvtr":
        if not isinstance(env, envs.MixtureEnv):
            raise ConfigError("the linear algorithm needs a mixture env")
        result, _ = run_linear(env, acfg, sampler, rng, track_ellipsoid=False)
        return result
    return run(_mdp_of(env), acfg, sampler, rng)


def summary_dict(cfg: RunConfig, chash: str, seed: int, result: RunResult, L: float | None = None) -> dict:
    goals = [int(g) for g in result.goals]
    return {
        "config_hash": chash,
        "seed": seed,
        "algorithm": cfg.algorithm,
        "sampler": cfg.sampler,
        "L": float(cfg.L if L is None else L),
        "eps": float(cfg.eps),
        "delta": float(cfg.delta),
        "H": result.H,
        "tau": result.tau,
        "kappa": result.kappa,
        "episodes": result.episodes,
        "stopped_by": result.stopped_by,
        "X": sorted(result.X),
        "goal_space": goals,
        "D": {str(g): float(d) for g, d in zip(goals, result.D)},
        "E": {str(g): float(e) for g, e in zip(goals, result.E)},
        "deviations": list(result.deviations),
    }


def policies_dict(result: RunResult) -> dict:
    return {str(g): pol.to_dict() for g, pol in sorted(result.policies.items())}


def write_run(run_dir: Path, cfg: RunConfig, env, chash: str, seed: int, result: RunResult) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    summary = summary_dict(cfg, chash, seed, result)
    goal_states = list(range(_mdp_of(env).S))
    table = frequency_table(result.selections, goal_states, cfg.buckets)
    (run_dir / "config.json").write_text(_dump(cfg.to_dict()))
    (run_dir / "env.json").write_text(json.dumps(env_to_dict(env), sort_keys=True) + "\n")
    (run_dir / "policies.json").write_text(_dump(policies_dict(result)))
    (run_dir / "frequencies.csv").write_text(frequencies_csv(table, goal_states))
    if cfg.verify:
        summary["pac"] = verify_result(env, cfg, result).to_dict()
    (run_dir / "summary.json").write_text(_dump(summary))
    return summary


def verify_result(env, cfg: RunConfig, result: RunResult) -> PacVerdict:
    mdp = _mdp_of(env)
    return verify_pac(mdp, result.goals, cfg.L, cfg.eps, result.X, result.policies)


def _seed_job(args):
    cfg, env, chash, seed = args
    run_dir = Path(cfg.output_dir) / chash / f"seed_{seed}"
    try:
        result = execute(cfg, env, seed)
        summary = write_run(run_dir, cfg, env, chash, seed, result)
        return {"seed": seed, "dir": str(run_dir), "stopped_by": summary["stopped_by"],
                "kappa": summary["kappa"], "tau": summary["tau"],
                **({"pac": summary["pac"]["holds"]} if "pac" in summary else {})}
    except Exception as exc:  # isolate per-seed failures
        return {"seed": seed, "dir": str(run_dir), "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("env"), str):
        data["env"] = str((path.parent / data["env"]).resolve()) if not Path(data["env"]).is_absolute() \
            else data["env"]
    return RunConfig.from_dict(data)


def prepare(cfg: RunConfig):
    """Validate the config and env before any run; returns (env, hash)."""
    cfg.validate()
    env = resolve_env(cfg.env)
    mdp = _mdp_of(env)
    if mdp.reset_action is None:
        raise ConfigError("env has no reset action")
    if cfg.goal_space is not None and any(not 0 <= g < mdp.S for g in cfg.goal_space):
        raise ConfigError("goal_space contains an out-of-range state")
    if cfg.algorithm == "adagoal-ucrlvtr" and not isinstance(env, envs.MixtureEnv):
        raise ConfigError("the linear algorithm needs a mixture env")
    return env, config_hash(cfg, env)


def run_experiment(cfg: RunConfig) -> dict:
    """Run every seed; returns the index written to ``output_dir/<hash>/index.json``."""
    env, chash = prepare(cfg)
    jobs = [(cfg, env, chash, seed) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(_seed_job, jobs))
    else:
        entries = [_seed_job(j) for j in jobs]
    index = {"config_hash": chash, "runs": entries,
             "failed": [e["seed"] for e in entries if "error" in e]}
    root = Path(cfg.output_dir) / chash
    root.mkdir(parents=True, exist_ok=True)
    (root / "index.json").write_text(_dump({**index, "runs": [
        {k: v for k, v in e.items() if k != "traceback"} for e in entries]}))
    return index


def run_curriculum(cfg: RunConfig, f: int) -> dict:
    """Tabular runs for L = 2, 4, ..., 2^f on the same env and seeds, with cumulative step counts."""
    if f < 1:
        raise ConfigError("curriculum exponent must be at least 1")
    if cfg.algorithm != "adagoal-ucbvi":
        raise ConfigError("the curriculum runs the tabular algorithm")
    env, chash = prepare(cfg)
    report = {"config_hash": chash, "f": f, "seeds": {}, "aborted": []}
    for seed in cfg.seeds:
        stages, total = [], 0
        for i in range(1, f + 1):
            L = float(2**i)
            result = execute(cfg, env, seed, L=L)
            total += result.tau
            stage = summary_dict(cfg, chash, seed, result, L=L)
            stage["cumulative_tau"] = total
            stages.append(stage)
            if result.stopped_by != "rule":
                report["aborted"].append({"seed": seed, "L": L})
                break
        report["seeds"][str(seed)] = {
            "stages": stages,
            "cumulative_tau": total,
            "final_X": stages[-1]["X"],
            "completed": stages[-1]["stopped_by"] == "rule" and len(stages) == f,
        }
    root = Path(cfg.output_dir) / chash
    root.mkdir(parents=True, exist_ok=True)
    (root / f"curriculum_f{f}.json").write_text(_dump(report))
    return report


def verify(run_dir) -> PacVerdict:
    """Check the stored output of one run and attach the verdict to its summary."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    summary = json.loads(summary_path.read_text())
    env = env_from_dict(json.loads((run_dir / "env.json").read_text()))
    mdp = _mdp_of(env)
    stored = json.loads((run_dir / "policies.json").read_text()) if (run_dir / "policies.json").exists() else {}
    policies = {int(g): ResettingPolicy.from_dict(p) for g, p in stored.items()}
    verdict = verify_pac(mdp, summary["goal_space"], summary["L"], summary["eps"], summary["X"], policies)
    summary["pac"] = verdict.to_dict()
    summary_path.write_text(_dump(summary))
    return verdict
