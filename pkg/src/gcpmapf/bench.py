"""Experiment harness: single-instance solve pipeline, parameter sweeps and result files."""
from __future__ import annotations

import csv
import io
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Sequence

from .ca_star import plan_ca_star
from .dlc_executor import BlockingReport, ExecMode, ExecOutcome, Trajectory, execute
from .gcp_planner import GeometricPath, PlannerConfig, TimeLimitExceeded, plan_all
from .grid_world import (
    SAMPLERS,
    GridMap,
    Instance,
    check_residual_reachability,
    check_well_formed,
    generate_instance,
)
from .maps import resolve_map
from .priority_policies import Policy, order
from .validator_metrics import conflict_counts, trajectories_to_array

SOLVERS = ("gcp_dlc", "ca_star")
FAIL_REASONS = ("assumption1_violation", "deadlock", "tick_limit", "time_limit", "planner_fail", "conflicts")
WORKERS_ENV = "GCPMAPF_WORKERS"


class ConfigError(ValueError):
    pass


def parse_cp(value: Any) -> Fraction:
    """Penalty weight from an int, a float or a rational string such as ``"1/2"``."""
    try:
        cp = Fraction(str(value)) if not isinstance(value, Fraction) else value
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"invalid penalty weight {value!r}") from None
    if cp < 0:
        raise ConfigError("penalty weight must be nonnegative")
    return cp


def normalize_solver(name: str) -> str:
    name = name.replace("-", "_").lower()
    if name not in SOLVERS:
        raise ConfigError(f"unknown solver {name!r}; expected one of {', '.join(SOLVERS)}")
    return name


def _as_list(value: Any) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep depends on. Two runs of one config produce the same rows.

    ``densities`` (fractions of free cells) may replace ``agent_counts``.
    ``timing`` controls whether wall-clock runtimes are written; with it off the
    CSV output is byte-for-byte reproducible.
    """

    map_path: str
    agent_counts: tuple[int, ...] = ()
    densities: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)
    policy: tuple[str, ...] = ("cl",)
    C_p: tuple[Fraction, ...] = (Fraction(1),)
    exec_mode: str = "strict"
    solver: str = "gcp_dlc"
    sampler: str = "uniform"
    time_limit_seconds: float = 60.0
    tick_limit: Optional[int] = None
    output_path: Optional[str] = None
    format: str = "csv"
    timing: bool = False

    def __post_init__(self) -> None:
        if not self.agent_counts and not self.densities:
            raise ConfigError("config needs agent_counts or densities")
        if any(k < 1 for k in self.agent_counts):
            raise ConfigError("agent counts must be positive")
        if any(not 0 < d < 1 for d in self.densities):
            raise ConfigError("densities must lie strictly between 0 and 1")
        if not self.seeds:
            raise ConfigError("config needs at least one seed")
        for p in self.policy:
            Policy(p)
        ExecMode(self.exec_mode)
        normalize_solver(self.solver)
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.time_limit_seconds <= 0:
            raise ConfigError("time_limit_seconds must be positive")
        if self.tick_limit is not None and self.tick_limit < 1:
            raise ConfigError("tick_limit must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "map_path" not in data:
            raise ConfigError("config needs map_path")
        kw = dict(data)
        for key in ("agent_counts", "densities", "seeds", "policy"):
            if key in kw:
                kw[key] = tuple(_as_list(kw[key]))
        kw["agent_counts"] = tuple(int(k) for k in kw.get("agent_counts", ()))
        kw["densities"] = tuple(float(d) for d in kw.get("densities", ()))
        kw["seeds"] = tuple(int(s) for s in kw.get("seeds", (0,)))
        kw["policy"] = tuple(str(p).lower() for p in kw.get("policy", ("cl",)))
        kw["C_p"] = tuple(parse_cp(c) for c in _as_list(kw.get("C_p", 1)))
        kw["solver"] = normalize_solver(kw.get("solver", "gcp_dlc"))
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def resolved_counts(self, grid: GridMap) -> list[int]:
        counts = set(self.agent_counts)
        counts.update(max(1, round(d * grid.num_free)) for d in self.densities)
        return sorted(counts)


@dataclass(frozen=True)
class ResultRow:
    map: str
    k: int
    seed: int
    policy: str
    C_p: str
    solver: str
    success: bool
    fail_reason: str
    runtime_seconds: Optional[float]
    soc: Optional[int]
    spatial: Optional[int]
    temporal: Optional[int]
    makespan: Optional[int]
    wait_events: Optional[int]
    assumption1_holds: bool
    well_formed: bool
    exec_mode: str = ""
    vertex_conflicts: Optional[int] = None
    edge_swap_conflicts: Optional[int] = None

    def __post_init__(self) -> None:
        if self.success and (self.vertex_conflicts or self.edge_swap_conflicts):
            raise ValueError("a run with conflicts cannot be a success")


COLUMNS = tuple(f.name for f in fields(ResultRow))


@dataclass
class SolveOutcome:
    """Full output of one pipeline run on one instance."""

    row: ResultRow
    ordering: list[int]
    paths: Optional[tuple[GeometricPath, ...]] = None
    execution: Optional[ExecOutcome] = None
    ca_trajectories: Optional[tuple[Trajectory, ...]] = None
    failed_agent: Optional[int] = None

    @property
    def trajectories(self) -> Optional[tuple[Trajectory, ...]]:
        if self.execution is not None:
            return self.execution.trajectories
        return self.ca_trajectories

    @property
    def deadlock(self) -> Optional[BlockingReport]:
        return self.execution.deadlock if self.execution is not None else None


def solve_instance(instance: Instance, *, seed: int = 0, policy: str = "cl", cp: Any = 1,
                   mode: str = "strict", solver: str = "gcp_dlc", tick_limit: Optional[int] = None,
                   time_limit: float = 60.0, timing: bool = True) -> SolveOutcome:
    """order -> plan -> execute -> validate -> measure, for one instance.

    Wall time covers ordering, planning and execution only. A run whose
    execution finishes is marked successful only if the validator finds no
    conflicts; its costs are reported either way.
    """
    solver = normalize_solver(solver)
    mode = ExecMode(mode).value
    cp = parse_cp(cp)
    grid = instance.map
    base = dict(map=grid.name, k=instance.k, seed=seed, policy=Policy(policy).value, C_p=str(cp),
                solver=solver, exec_mode=mode if solver == "gcp_dlc" else "")
    clock = time.perf_counter()
    deadline = clock + time_limit
    ordering = order(instance, policy, seed)
    elapsed = time.perf_counter() - clock
    a1 = check_residual_reachability(instance, ordering)
    wf = check_well_formed(instance).holds
    base.update(assumption1_holds=a1.holds, well_formed=wf)

    def finish(reason: str, runtime: float, **extra: Any) -> SolveOutcome:
        row = ResultRow(success=reason == "", fail_reason=reason,
                        runtime_seconds=runtime if timing else None,
                        soc=extra.pop("soc", None), spatial=extra.pop("spatial", None),
                        temporal=extra.pop("temporal", None), makespan=extra.pop("makespan", None),
                        wait_events=extra.pop("wait_events", None),
                        vertex_conflicts=extra.pop("vertex_conflicts", None),
                        edge_swap_conflicts=extra.pop("edge_swap_conflicts", None), **base)
        return SolveOutcome(row, ordering, **extra)

    if solver == "gcp_dlc" and not a1.holds:
        return finish("assumption1_violation", elapsed, failed_agent=a1.failing_agent)

    clock = time.perf_counter() - elapsed
    try:
        if solver == "gcp_dlc":
            plan = plan_all(instance, ordering, PlannerConfig(cp), deadline=deadline)
            if not plan.ok:
                return finish("planner_fail", time.perf_counter() - clock, failed_agent=plan.failure.agent_id)
            outcome = execute(plan.paths, mode=mode, tick_limit=tick_limit, deadline=deadline)
            runtime = time.perf_counter() - clock
        else:
            result = plan_ca_star(instance, ordering, horizon=tick_limit, deadline=deadline)
            runtime = time.perf_counter() - clock
            if not result.ok:
                return finish("planner_fail", runtime, failed_agent=result.failed_agent)
    except TimeLimitExceeded:
        return finish("time_limit", time.perf_counter() - clock)
    if runtime > time_limit:
        return finish("time_limit", runtime)

    if solver == "gcp_dlc":
        arr = outcome.position_array(grid.width)
        extra: dict[str, Any] = dict(paths=plan.paths, execution=outcome)
        status = outcome.status
        if status == "success":
            arrivals = outcome.arrivals
            spatial = sum(p.length for p in plan.paths)
            waits = outcome.wait_events
    else:
        arr, _ = trajectories_to_array(result.trajectories)
        extra = dict(ca_trajectories=result.trajectories)
        status = "success"
        arrivals = [t.arrival for t in result.trajectories]
        spatial = sum(sum(a != b for a, b in zip(t.positions[:T], t.positions[1:T + 1]))
                      for t, T in zip(result.trajectories, arrivals))
        waits = sum(arrivals) - spatial
    vertex, swaps = conflict_counts(arr)
    extra.update(vertex_conflicts=vertex, edge_swap_conflicts=swaps)
    if status != "success":
        return finish(status, runtime, **extra)
    total = sum(arrivals)
    extra.update(soc=total, spatial=spatial, temporal=total - spatial,
                 makespan=max(arrivals, default=0), wait_events=waits)
    return finish("conflicts" if vertex or swaps else "", runtime, **extra)


@lru_cache(maxsize=8)
def _cached_map(map_path: str) -> GridMap:
    return resolve_map(map_path)


def _run_one(config: ExperimentConfig, k: int, seed: int, policy: str, cp: Fraction) -> ResultRow:
    grid = _cached_map(config.map_path)
    instance = generate_instance(grid, k, seed, sampler=config.sampler)
    return solve_instance(instance, seed=seed, policy=policy, cp=cp, mode=config.exec_mode,
                          solver=config.solver, tick_limit=config.tick_limit,
                          time_limit=config.time_limit_seconds, timing=config.timing).row


def _run_job(args: tuple) -> ResultRow:
    return _run_one(*args)


@dataclass(frozen=True)
class Summary:
    k: int
    policy: str
    C_p: str
    runs: int
    successes: int
    success_rate: float
    mean_soc: Optional[float]
    median_soc: Optional[float]
    mean_runtime: Optional[float]
    failures: dict = field(default_factory=dict)


def summarize(rows: Sequence[ResultRow]) -> list[Summary]:
    """SR%, mean/median SOC over successful runs, and mean runtime, per (k, policy, C_p)."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.k, r.policy, r.C_p), []).append(r)
    out = []
    for (k, policy, cp), group in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], Fraction(kv[0][2]))):
        socs = [r.soc for r in group if r.success]
        times = [r.runtime_seconds for r in group if r.runtime_seconds is not None]
        failures: dict[str, int] = {}
        for r in group:
            if r.fail_reason:
                failures[r.fail_reason] = failures.get(r.fail_reason, 0) + 1
        out.append(Summary(
            k, policy, cp, len(group), len(socs), 100.0 * len(socs) / len(group),
            statistics.fmean(socs) if socs else None, statistics.median(socs) if socs else None,
            statistics.fmean(times) if times else None, dict(sorted(failures.items())),
        ))
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> tuple[list[ResultRow], list[Summary]]:
    """Run every (k, seed, policy, C_p) combination; rows come back in canonical order."""
    grid = _cached_map(config.map_path)
    jobs = [(config, k, seed, policy, cp)
            for k in config.resolved_counts(grid)
            for seed in config.seeds
            for policy in config.policy
            for cp in config.C_p]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    rows.sort(key=lambda r: (r.k, r.seed, r.policy, Fraction(r.C_p)))
    return rows, summarize(rows)


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_results(rows: Sequence[ResultRow], fmt: str = "csv") -> str:
    if not rows:
        raise ValueError("no result rows to emit")
    if fmt == "json":
        return json.dumps([asdict(r) for r in rows], indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow([_csv_cell(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def emit_results(rows: Sequence[ResultRow], fmt: str = "csv", path: Optional[str | Path] = None) -> str:
    """Serialize rows as CSV (fixed column order) or a JSON array; write to ``path`` if given."""
    text = format_results(rows, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


_BOOL = {"true": True, "false": False}
_INTS = {"k", "seed", "soc", "spatial", "temporal", "makespan", "wait_events",
         "vertex_conflicts", "edge_swap_conflicts"}


def read_results_csv(text: str) -> list[ResultRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw: dict[str, Any] = {}
        for name in COLUMNS:
            raw = rec[name]
            if name in ("success", "assumption1_holds", "well_formed"):
                kw[name] = _BOOL[raw]
            elif name in _INTS:
                kw[name] = int(raw) if raw != "" else None
            elif name == "runtime_seconds":
                kw[name] = float(raw) if raw != "" else None
            else:
                kw[name] = raw
        rows.append(ResultRow(**kw))
    return rows
