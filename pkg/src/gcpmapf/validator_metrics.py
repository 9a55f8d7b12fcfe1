"""Conflict checking, sum-of-costs accounting, sequential bound and a tiny-instance optimal oracle."""
from __future__ import annotations

import heapq
import itertools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dlc_executor import Trajectory
from .gcp_planner import GeometricPath
from .grid_world import GridMap, Instance, Vertex, bfs_distances, shortest_distance


class MalformedTrajectory(ValueError):
    pass


class AssumptionViolation(ValueError):
    def __init__(self, agent_id: int, reason: str):
        self.agent_id = agent_id
        self.reason = reason
        super().__init__(f"residual reachability fails for agent {agent_id} ({reason})")


@dataclass(frozen=True)
class Conflict:
    kind: str  # vertex | edge_swap
    t: int  # for edge_swap, the move happens between t and t+1
    agents: tuple[int, int]
    location: tuple

    def to_json(self) -> dict:
        d = asdict(self)
        d["agents"] = list(self.agents)
        d["location"] = [list(x) for x in self.location] if self.kind == "edge_swap" else list(self.location)
        return d


@dataclass(frozen=True)
class ConflictReport:
    conflicts: tuple[Conflict, ...]

    @property
    def ok(self) -> bool:
        return not self.conflicts

    def count(self, kind: str) -> int:
        return sum(c.kind == kind for c in self.conflicts)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "vertex_conflicts": self.count("vertex"),
            "edge_swap_conflicts": self.count("edge_swap"),
            "conflicts": [c.to_json() for c in self.conflicts],
        }


def _check_moves(traj: Trajectory, grid: Optional[GridMap]) -> None:
    pos = traj.positions
    for t, (a, b) in enumerate(zip(pos, pos[1:])):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) > 1:
            raise MalformedTrajectory(f"agent {traj.agent_id} jumps {a} -> {b} at tick {t}")
    if grid is not None:
        for t, v in enumerate(pos):
            if not grid.is_passable(v):
                raise MalformedTrajectory(f"agent {traj.agent_id} is on blocked cell {v} at tick {t}")


_CHUNK_CELLS = 4_000_000


def _vertex_groups(arr: np.ndarray, t0: int):
    """Yield (tick, code, agent rows) for every cell shared by two or more agents."""
    k, c = arr.shape
    if k < 2 or c == 0:
        return
    keys = (np.arange(c, dtype=np.int64)[None, :] * (int(arr.max()) + 1) + arr).ravel(order="F")
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    dup = np.flatnonzero(sk[1:] == sk[:-1])
    if not len(dup):
        return
    starts = dup[np.r_[True, np.diff(dup) > 1]]
    for st in starts:
        en = st + 1
        while en < len(sk) and sk[en] == sk[st]:
            en += 1
        flat = order[st:en]
        tick = int(flat[0] // k)
        yield t0 + tick, int(arr[flat[0] % k, tick]), sorted(int(f % k) for f in flat)


def _swap_pairs(arr: np.ndarray, t0: int):
    """Yield (tick, agent a, agent b) for opposite traversals of one edge between t and t+1."""
    k, c = arr.shape
    if k < 2 or c < 2:
        return
    m = int(arr.max()) + 1
    u, v = arr[:, :-1], arr[:, 1:]
    moving = u != v
    if not moving.any():
        return
    ticks = np.broadcast_to(np.arange(c - 1, dtype=np.int64)[None, :], u.shape)
    agents = np.broadcast_to(np.arange(k)[:, None], u.shape)
    fwd = (ticks * m + u) * m + v
    rev = (ticks * m + v) * m + u
    fwd_m, rev_m = fwd[moving], rev[moving]
    hit = np.isin(fwd_m, rev_m)
    if not hit.any():
        return
    by_key: dict[int, list[int]] = {}
    for key, a in zip(fwd_m[hit].tolist(), agents[moving][hit].tolist()):
        by_key.setdefault(key, []).append(a)
    for key, group in by_key.items():
        tick = key // (m * m)
        back = (tick * m + key % m) * m + (key // m) % m
        for a in group:
            for b in by_key.get(back, ()):
                if a < b:
                    yield t0 + tick, a, b


def _chunks(arr: np.ndarray, overlap: int):
    k, horizon = arr.shape
    width = max(2, _CHUNK_CELLS // max(k, 1))
    t0 = 0
    while t0 < horizon:
        t1 = min(horizon, t0 + width)
        yield t0, arr[:, t0:min(horizon, t1 + overlap)], t1 - t0
        t0 = t1


def _vertex_pair_count(arr: np.ndarray) -> int:
    k, c = arr.shape
    if k < 2 or c == 0:
        return 0
    keys = np.arange(c, dtype=np.int64)[None, :] * (int(arr.max()) + 1) + arr
    _, counts = np.unique(keys, return_counts=True)
    counts = counts[counts > 1]
    return int((counts * (counts - 1) // 2).sum())


def conflict_counts(arr: np.ndarray) -> tuple[int, int]:
    """Numbers of (vertex, edge-swap) conflicting agent pairs in a position array."""
    vertex = sum(_vertex_pair_count(chunk) for _, chunk, _ in _chunks(arr, overlap=0))
    swaps = sum(sum(1 for _ in _swap_pairs(chunk, t0)) for t0, chunk, _ in _chunks(arr, overlap=1))
    return vertex, swaps


def trajectories_to_array(trajectories: Sequence[Trajectory]) -> tuple[np.ndarray, int]:
    """Pad to the common horizon and encode positions as ``row * stride + col``."""
    horizon = max((len(t.positions) for t in trajectories), default=0)
    stride = 1 + max((c for t in trajectories for _, c in t.positions), default=0)
    arr = np.empty((len(trajectories), horizon), dtype=np.int64)
    for i, traj in enumerate(trajectories):
        codes = [r * stride + c for r, c in traj.positions]
        arr[i, : len(codes)] = codes
        arr[i, len(codes):] = codes[-1]
    return arr, stride


def validate(trajectories: Sequence[Trajectory], grid: Optional[GridMap] = None) -> ConflictReport:
    """Every vertex and edge-swap conflict, ordered by tick, then agent pair.

    Trajectories shorter than the common horizon are padded with their final
    position (agents park at their goals). Agent pairs are reported by agent id.
    """
    for traj in trajectories:
        _check_moves(traj, grid)
    if not trajectories:
        return ConflictReport(())
    arr, stride = trajectories_to_array(trajectories)
    ids = [t.agent_id for t in trajectories]
    conflicts: list[Conflict] = []
    for t0, chunk, width in _chunks(arr, overlap=0):
        for t, code, group in _vertex_groups(chunk, t0):
            v = divmod(code, stride)
            for i, j in itertools.combinations(group, 2):
                a, b = sorted((ids[i], ids[j]))
                conflicts.append(Conflict("vertex", t, (a, b), v))
    for t0, chunk, width in _chunks(arr, overlap=1):
        for t, i, j in _swap_pairs(chunk, t0):
            if t >= t0 + width:
                continue
            if ids[i] > ids[j]:
                i, j = j, i
            u = trajectories[i].at(t)
            conflicts.append(Conflict("edge_swap", t, (ids[i], ids[j]), (u, trajectories[i].at(t + 1))))
    conflicts.sort(key=lambda c: (c.t, c.agents, c.kind))
    return ConflictReport(tuple(conflicts))


@dataclass(frozen=True)
class CostBreakdown:
    soc: int
    spatial: int
    temporal: int
    pct_spatial: float
    pct_temporal: float

    def to_json(self) -> dict:
        return asdict(self)


def arrival_times(trajectories: Sequence[Trajectory]) -> list[int]:
    out = []
    for traj in trajectories:
        t = traj.arrival
        if t is None:
            raise ValueError(f"agent {traj.agent_id} never settles at its goal {traj.goal}")
        out.append(t)
    return out


def soc(trajectories: Sequence[Trajectory], paths: Optional[Sequence[GeometricPath]] = None) -> CostBreakdown:
    """Sum of arrival times split into path length (spatial) and waiting (temporal).

    Without ``paths`` the spatial term counts each trajectory's moves before arrival.
    """
    arrivals = arrival_times(trajectories)
    total = sum(arrivals)
    if paths is not None:
        spatial = sum(p.length for p in paths)
    else:
        spatial = sum(
            sum(a != b for a, b in zip(tr.positions[:T], tr.positions[1:T + 1]))
            for tr, T in zip(trajectories, arrivals)
        )
    temporal = total - spatial
    if temporal < 0:
        raise ValueError("spatial cost exceeds sum of costs; paths do not match trajectories")
    if total == 0:
        return CostBreakdown(0, 0, 0, 100.0, 0.0)
    return CostBreakdown(total, spatial, temporal, 100.0 * spatial / total, 100.0 * temporal / total)


def lower_bound(instance: Instance) -> int:
    """Sum of unconstrained shortest distances."""
    total = 0
    for a in instance.agents:
        d = shortest_distance(instance.map, a.start, a.goal)
        if d is None:
            raise ValueError(f"agent {a.id}: goal unreachable")
        total += d
    return total


def sequential_upper_bound(instance: Instance, ordering: Optional[Sequence[int]] = None) -> int:
    """Sum of residual-graph shortest-path lengths (higher-priority goals removed)."""
    removed: list[Vertex] = []
    total = 0
    for a in instance.ordered(ordering):
        if a.start in removed:
            raise AssumptionViolation(a.id, "start_blocked")
        if a.goal in removed:
            raise AssumptionViolation(a.id, "goal_blocked")
        d = shortest_distance(instance.map, a.start, a.goal, blocked=removed)
        if d is None:
            raise AssumptionViolation(a.id, "unreachable")
        total += d
        removed.append(a.goal)
    return total


@dataclass(frozen=True)
class OracleLimits:
    max_free_cells: int = 14
    max_agents: int = 3
    max_soc: Optional[int] = None


@dataclass(frozen=True)
class OracleResult:
    optimal_soc: Optional[int]  # None means infeasible
    explored_states: int

    @property
    def feasible(self) -> bool:
        return self.optimal_soc is not None


class OracleRefused(ValueError):
    pass


def brute_force_optimal(instance: Instance, limits: OracleLimits = OracleLimits()) -> OracleResult:
    """Exact minimum sum-of-costs by search over joint configurations.

    A state is (positions, finished flags). Each unfinished agent either moves,
    waits, or, when standing on its goal, finishes: it then stays there forever
    at no further cost. A step costs the number of agents still unfinished
    after it. Vertex and swap conflicts are rejected, including with finished
    agents. States are expanded in order of accumulated cost plus the sum of
    remaining distances, which never overestimates.
    """
    grid = instance.map
    k = instance.k
    if grid.num_free > limits.max_free_cells:
        raise OracleRefused(f"map has {grid.num_free} free cells (limit {limits.max_free_cells})")
    if k > limits.max_agents:
        raise OracleRefused(f"{k} agents exceeds the limit of {limits.max_agents}")

    agents = instance.agents
    goals = tuple(a.goal for a in agents)
    dist = []
    for a in agents:
        field = bfs_distances(grid, a.goal)
        dist.append({v: field[v] for v in grid.free_cells})
    if any(dist[i][a.start] is None for i, a in enumerate(agents)):
        return OracleResult(None, 0)
    options = {v: [v] + [grid.vertex(i) for i in grid.adjacency[grid.index(v)]] for v in grid.free_cells}

    def h(pos, done):
        return sum(dist[i][p] or 0 for i, p in enumerate(pos) if not done[i])

    start = (tuple(a.start for a in agents), (False,) * k)
    best = {start: 0}
    heap = [(h(*start), 0, start)]
    explored = 0
    while heap:
        f, g, state = heapq.heappop(heap)
        if best.get(state, None) != g:
            continue
        explored += 1
        pos, done = state
        if all(done):
            return OracleResult(g, explored)
        per_agent = []
        for i in range(k):
            if done[i]:
                per_agent.append([(pos[i], True)])
                continue
            choices = [(v, False) for v in options[pos[i]] if dist[i][v] is not None]
            if pos[i] == goals[i]:
                choices.append((pos[i], True))
            per_agent.append(choices)
        for combo in itertools.product(*per_agent):
            nxt = tuple(c[0] for c in combo)
            if len(set(nxt)) < k:
                continue
            if any(nxt[i] == pos[j] and nxt[j] == pos[i] and nxt[i] != pos[i]
                   for i in range(k) for j in range(i + 1, k)):
                continue
            ndone = tuple(c[1] for c in combo)
            ng = g + sum(not d for d in ndone)
            if limits.max_soc is not None and ng > limits.max_soc:
                continue
            ns = (nxt, ndone)
            if ng < best.get(ns, ng + 1):
                best[ns] = ng
                heapq.heappush(heap, (ng + h(nxt, ndone), ng, ns))
    return OracleResult(None, explored)
