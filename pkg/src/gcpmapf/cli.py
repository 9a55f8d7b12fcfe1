"""Command-line entry point: solve, bench, validate, gen, oracle."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from .bench import ConfigError, ExperimentConfig, emit_results, parse_cp, run_experiment, solve_instance
from .dlc_executor import Trajectory, trajectories_from_csv, trajectories_to_csv
from .grid_world import (
    SAMPLERS,
    Instance,
    InstanceError,
    ParseError,
    generate_instance,
    instance_from_scen,
    instance_to_scen,
    parse_scen,
    serialize_scen,
)
from .maps import resolve_map
from .validator_metrics import (
    AssumptionViolation,
    MalformedTrajectory,
    OracleLimits,
    OracleRefused,
    brute_force_optimal,
    lower_bound,
    sequential_upper_bound,
    validate,
)

POLICIES = ("spf", "lpf", "cf", "cl", "random")


def _write(text: str, out: Optional[str]) -> None:
    if out and out != "-":
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_instance(args: argparse.Namespace) -> Instance:
    grid = resolve_map(args.map)
    if args.scen:
        entries = parse_scen(Path(args.scen).read_text())
        return instance_from_scen(grid, entries, args.agents)
    if args.agents is None:
        raise ConfigError("--agents is required without --scen")
    return generate_instance(grid, args.agents, args.seed, sampler=args.sampler)


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map", required=True, help="map file or builtin name")
    p.add_argument("--scen", help="MovingAI scenario file (first --agents entries are used)")
    p.add_argument("--agents", type=int, help="number of agents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=SAMPLERS, default="uniform")


def cmd_solve(args: argparse.Namespace) -> int:
    instance = _load_instance(args)
    outcome = solve_instance(instance, seed=args.seed, policy=args.policy, cp=args.cp, mode=args.mode,
                             solver=args.solver, tick_limit=args.tick_limit, time_limit=args.time_limit)
    metrics = asdict(outcome.row)
    metrics["lower_bound"] = lower_bound(instance)
    if outcome.deadlock is not None:
        ids = [p.agent_id for p in outcome.paths]
        metrics["deadlock"] = outcome.deadlock.to_json(ids)
    if outcome.failed_agent is not None:
        metrics["failed_agent"] = outcome.failed_agent
    print(json.dumps(metrics, indent=2))
    if args.out:
        trajectories = outcome.trajectories or ()
        if args.format == "csv":
            if not trajectories:
                raise ConfigError("no trajectories to write")
            _write(trajectories_to_csv(trajectories), args.out)
        else:
            solution = {
                "instance": instance.to_json(),
                "ordering": outcome.ordering,
                "paths": [p.to_json() for p in outcome.paths or ()],
                "trajectories": [t.to_json() for t in trajectories],
            }
            _write(json.dumps(solution) + "\n", args.out)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    rows, summary = run_experiment(config, workers=args.workers)
    fmt = args.format or config.format
    out = args.out or config.output_path
    text = emit_results(rows, fmt)
    _write(text, out)
    for s in summary:
        mean = "-" if s.mean_soc is None else f"{s.mean_soc:.1f}"
        print(f"k={s.k} policy={s.policy} C_p={s.C_p}: SR {s.success_rate:.1f}% "
              f"({s.successes}/{s.runs}) mean SOC {mean} failures {s.failures}", file=sys.stderr)
    return 0


def load_trajectories(path: str) -> tuple[Trajectory, ...]:
    text = Path(path).read_text()
    if path.endswith(".csv") or text.startswith("tick,"):
        return trajectories_from_csv(text)
    data = json.loads(text)
    if isinstance(data, dict):
        data = data["trajectories"]
    return tuple(Trajectory.from_json(t) for t in data)


def cmd_validate(args: argparse.Namespace) -> int:
    grid = resolve_map(args.map) if args.map else None
    try:
        trajectories = load_trajectories(args.trajectories)
        report = validate(trajectories, grid)
    except (MalformedTrajectory, ValueError, KeyError) as exc:
        print(f"error: malformed trajectory file: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report.to_json(), indent=2))
    return 0 if report.ok else 1


def cmd_gen(args: argparse.Namespace) -> int:
    instance = _load_instance(args)
    if args.format == "json":
        _write(json.dumps(instance.to_json(), indent=2) + "\n", args.out)
    else:
        _write(serialize_scen(instance_to_scen(instance)), args.out)
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    instance = _load_instance(args)
    limits = OracleLimits(max_free_cells=args.max_free_cells, max_agents=args.max_agents)
    result = brute_force_optimal(instance, limits)
    out = {"optimal_soc": result.optimal_soc, "explored_states": result.explored_states,
           "lower_bound": lower_bound(instance) if result.feasible else None}
    try:
        out["sequential_bound"] = sequential_upper_bound(instance)
    except AssumptionViolation:
        out["sequential_bound"] = None
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcpmapf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance and print JSON metrics")
    _add_instance_args(p)
    p.add_argument("--policy", choices=POLICIES, default="cl")
    p.add_argument("--cp", type=parse_cp, default=parse_cp(1), help="penalty weight, e.g. 1 or 1/2")
    p.add_argument("--mode", choices=("literal", "strict"), default="strict")
    p.add_argument("--solver", choices=("gcp-dlc", "ca-star"), default="gcp-dlc")
    p.add_argument("--tick-limit", type=int)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--out", help="write the solution (paths and trajectories) here")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run an experiment sweep from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help="result file (default: config output_path, else stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--workers", type=int, help="worker processes (default: $GCPMAPF_WORKERS or 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="check a trajectory file for conflicts")
    p.add_argument("trajectories", help="JSON (solve --out) or CSV trajectory file")
    p.add_argument("--map", help="also check every position is passable on this map")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="emit a random instance")
    _add_instance_args(p)
    p.add_argument("--out")
    p.add_argument("--format", choices=("scen", "json"), default="scen")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="exact optimal sum of costs for a tiny instance")
    _add_instance_args(p)
    p.add_argument("--max-free-cells", type=int, default=14)
    p.add_argument("--max-agents", type=int, default=3)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, InstanceError, OracleRefused, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
