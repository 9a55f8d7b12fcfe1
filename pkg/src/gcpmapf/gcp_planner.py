"""Geometric Conflict Preemption: prioritized A* with penalty-inflated vertex entries.

Agents are planned one after another on the residual graph (goals of
higher-priority agents removed). Each planned path adds its first-visit indices
to a per-vertex penalty field; entering vertex ``v`` then costs
``1 + penalty_weight * P(v)`` for every later agent.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .grid_world import GridMap, Instance, Vertex


class TimeLimitExceeded(RuntimeError):
    """A wall-clock deadline passed during planning or execution."""


@dataclass(frozen=True)
class GeometricPath:
    agent_id: int
    vertices: tuple[Vertex, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(tuple(v) for v in self.vertices))
        if not self.vertices:
            raise ValueError("a path contains at least its start vertex")

    @property
    def length(self) -> int:
        return len(self.vertices) - 1

    @property
    def start(self) -> Vertex:
        return self.vertices[0]

    @property
    def goal(self) -> Vertex:
        return self.vertices[-1]

    @property
    def nodes(self) -> frozenset[Vertex]:
        return frozenset(self.vertices)

    def to_json(self) -> dict:
        return {"agent_id": self.agent_id, "vertices": [list(v) for v in self.vertices]}

    @classmethod
    def from_json(cls, data: dict) -> "GeometricPath":
        return cls(int(data["agent_id"]), tuple(tuple(v) for v in data["vertices"]))


def first_visit_index(path: GeometricPath, v: Vertex) -> int:
    """Earliest position of ``v`` on ``path``; 0 when ``v`` is not on it."""
    for r, u in enumerate(path.vertices):
        if u == v:
            return r
    return 0


class PenaltyField:
    """Per-vertex sum of first-visit indices over the accumulated paths."""

    def __init__(self, grid: GridMap, values: Optional[np.ndarray] = None):
        self.map = grid
        if values is None:
            self.values = np.zeros(grid.size, dtype=np.int64)
        else:
            self.values = np.array(values, dtype=np.int64).reshape(grid.size)

    def __getitem__(self, v: Vertex) -> int:
        return int(self.values[self.map.index(v)])

    def copy(self) -> "PenaltyField":
        return PenaltyField(self.map, self.values)

    def add_path(self, path: GeometricPath) -> None:
        """In-place accumulation; each vertex counts once per path, at its first visit."""
        seen = set()
        for r, v in enumerate(path.vertices):
            idx = self.map.index(v)
            if idx not in seen:
                seen.add(idx)
                self.values[idx] += r

    def nonzero(self) -> dict[Vertex, int]:
        return {self.map.vertex(int(i)): int(self.values[i]) for i in np.flatnonzero(self.values)}


def accumulate_penalties(field: PenaltyField, path: GeometricPath) -> PenaltyField:
    out = field.copy()
    out.add_path(path)
    return out


def _normalize_weight(cp: Real) -> Real:
    if cp < 0:
        raise ValueError("penalty weight must be nonnegative")
    if isinstance(cp, Fraction) and cp.denominator == 1:
        return int(cp)
    if isinstance(cp, float) and cp.is_integer():
        return int(cp)
    return cp


def entry_cost(grid: GridMap, field: PenaltyField, cp: Real, u: Vertex, v: Vertex) -> Real:
    """Cost of moving ``u -> v``: unit base cost plus the weighted penalty of ``v``."""
    if not (grid.is_passable(u) and grid.is_passable(v)):
        raise ValueError(f"edge {u}->{v} touches an impassable cell")
    if abs(u[0] - v[0]) + abs(u[1] - v[1]) != 1:
        raise ValueError(f"{u} and {v} are not grid-adjacent")
    return 1 + _normalize_weight(cp) * field[v]


@njit(cache=True)
def _astar_kernel(nbrs, blocked, penalty, cp, s, g, width):
    """A* over flat cell indices; returns the path as an index array (empty if unreachable).

    Heap entries are (f, -g, push order, cell): f ties prefer larger g, then
    earlier pushes, which follow the (up, down, left, right) neighbour order.
    """
    n = nbrs.shape[0]
    best = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    gr, gc = g // width, g % width
    best[s] = 0.0
    heap = [(float(abs(s // width - gr) + abs(s % width - gc)), 0.0, 0, s)]
    seq = 1
    while len(heap) > 0:
        item = heapq.heappop(heap)
        u = item[3]
        if closed[u]:
            continue
        gu = -item[1]
        if u == g:
            length = 1
            x = u
            while x != s:
                x = parent[x]
                length += 1
            out = np.empty(length, dtype=np.int64)
            x = u
            for i in range(length - 1, -1, -1):
                out[i] = x
                x = parent[x]
            return out
        closed[u] = True
        for j in range(4):
            v = nbrs[u, j]
            if v < 0 or blocked[v] or closed[v]:
                continue
            gv = gu + 1.0 + cp * penalty[v]
            if gv < best[v]:
                best[v] = gv
                parent[v] = u
                hv = abs(v // width - gr) + abs(v % width - gc)
                heapq.heappush(heap, (gv + hv, -gv, seq, v))
                seq += 1
    return np.empty(0, dtype=np.int64)


def neighbor_table(grid: GridMap) -> np.ndarray:
    table = grid.__dict__.get("_nbr_table")
    if table is None:
        table = np.full((grid.size, 4), -1, dtype=np.int64)
        for i, nb in enumerate(grid.adjacency):
            table[i, : len(nb)] = nb
        grid.__dict__["_nbr_table"] = table
    return table


def _astar_flat(grid: GridMap, blocked: np.ndarray, penalty: np.ndarray, cp: Real,
                s: int, g: int) -> Optional[list[int]]:
    path = _astar_kernel(neighbor_table(grid), blocked, penalty, float(cp), s, g, grid.width)
    return path.tolist() if len(path) else None


def path_cost(grid: GridMap, field: PenaltyField, cp: Real, vertices: Sequence[Vertex]) -> Real:
    return sum((entry_cost(grid, field, cp, u, v) for u, v in zip(vertices, vertices[1:])), 0)


def astar_inflated(grid: GridMap, blocked: Iterable[Vertex], field: PenaltyField,
                   s: Vertex, g: Vertex, cp: Real = 1, agent_id: int = -1) -> Optional[GeometricPath]:
    """Minimum inflated-cost path from ``s`` to ``g`` avoiding ``blocked``.

    Returns None when ``g`` is unreachable; raises ValueError when ``s`` or
    ``g`` is impassable or blocked. Manhattan distance is admissible because
    every entry costs at least 1.
    """
    mask = np.zeros(grid.size, dtype=np.uint8)
    for v in blocked:
        if grid.in_bounds(v):
            mask[grid.index(v)] = 1
    for v in (s, g):
        if not grid.is_passable(v) or mask[grid.index(v)]:
            raise ValueError(f"vertex {v} is impassable or blocked")
    found = _astar_flat(grid, mask, field.values, _normalize_weight(cp), grid.index(s), grid.index(g))
    if found is None:
        return None
    return GeometricPath(agent_id, tuple(grid.vertex(i) for i in found))


@dataclass(frozen=True)
class PlannerConfig:
    penalty_weight: Real = 1

    def __post_init__(self) -> None:
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")


@dataclass(frozen=True)
class PlanFailure:
    agent_id: int
    reason: str  # start_blocked | goal_blocked | unreachable


@dataclass(frozen=True)
class PlanResult:
    paths: Optional[tuple[GeometricPath, ...]] = None
    failure: Optional[PlanFailure] = None
    penalties: Optional[PenaltyField] = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def plan_all(instance: Instance, ordering: Optional[Sequence[int]] = None,
             config: PlannerConfig = PlannerConfig(), deadline: Optional[float] = None) -> PlanResult:
    """Plan every agent in priority order; stop at the first one that cannot be planned.

    ``deadline`` is an absolute ``time.perf_counter()`` value; passing it raises
    :class:`TimeLimitExceeded`.
    """
    grid = instance.map
    cp = _normalize_weight(config.penalty_weight)
    field = PenaltyField(grid)
    removed = np.zeros(grid.size, dtype=np.uint8)
    paths = []
    for agent in instance.ordered(ordering):
        if deadline is not None and time.perf_counter() > deadline:
            raise TimeLimitExceeded("planning exceeded the time limit")
        si, gi = grid.index(agent.start), grid.index(agent.goal)
        if removed[si]:
            return PlanResult(failure=PlanFailure(agent.id, "start_blocked"), penalties=field)
        if removed[gi]:
            return PlanResult(failure=PlanFailure(agent.id, "goal_blocked"), penalties=field)
        found = _astar_flat(grid, removed, field.values, cp, si, gi)
        if found is None:
            return PlanResult(failure=PlanFailure(agent.id, "unreachable"), penalties=field)
        path = GeometricPath(agent.id, tuple(grid.vertex(i) for i in found))
        paths.append(path)
        field.add_path(path)
        removed[gi] = 1
    return PlanResult(paths=tuple(paths), penalties=field)
