"""Command line entry point: run, curriculum, verify and gen-env."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.verify:
        cfg.verify = True
    if args.workers:
        cfg.workers = args.workers
    index = harness.run_experiment(cfg)
    for entry in index["runs"]:
        if "error" in entry:
            print(f"seed {entry['seed']}: FAILED {entry['error']}")
        else:
            pac = f" pac={entry['pac']}" if "pac" in entry else ""
            print(f"seed {entry['seed']}: {entry['stopped_by']} kappa={entry['kappa']} "
                  f"tau={entry['tau']}{pac} -> {entry['dir']}")
    return 1 if index["failed"] else 0


def _cmd_curriculum(args) -> int:
    cfg = harness.load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    report = harness.run_curriculum(cfg, args.f)
    for seed, info in report["seeds"].items():
        print(f"seed {seed}: stages={len(info['stages'])} cumulative_tau={info['cumulative_tau']} "
              f"X={info['final_X']}")
    for item in report["aborted"]:
        print(f"seed {item['seed']}: aborted at L={item['L']} (episode cap)")
    return 1 if report["aborted"] else 0


def _cmd_verify(args) -> int:
    verdict = harness.verify(args.run_dir)
    print(verdict.to_json())
    return 0 if verdict.holds else 2


def _cmd_gen_env(args) -> int:
    params = json.loads(args.params) if args.params else {}
    env = harness.build_env(args.kind, params)
    text = json.dumps(harness.env_to_dict(env), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adagoal", description="Multi-goal exploration experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every seed of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--verify", action="store_true", help="check the PAC conditions after each run")
    p.add_argument("--workers", type=int, help="seeds run in parallel processes")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("curriculum", help="successive runs for L = 2, 4, ..., 2^f")
    p.add_argument("--config", required=True)
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_curriculum)

    p = sub.add_parser("verify", help="check a stored run against the exact oracle")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("gen-env", help="write an environment as JSON")
    p.add_argument("--kind", required=True, choices=harness.ENV_KINDS)
    p.add_argument("--params", help="constructor parameters as a JSON object")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=_cmd_gen_env)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
