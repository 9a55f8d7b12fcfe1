"""Cooperative A*: prioritized space-time A* against a reservation table."""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .dlc_executor import Trajectory
from .gcp_planner import TimeLimitExceeded
from .grid_world import GridMap, Instance, Vertex, shortest_distance


class ReservationTable:
    """Vertex/tick, directed edge/tick and permanent goal-parking reservations (flat indices)."""

    def __init__(self) -> None:
        self.vertices: set[tuple[int, int]] = set()
        self.edges: set[tuple[int, int, int]] = set()  # (u, v, t): u -> v between t and t+1
        self.parked: dict[int, int] = {}  # vertex -> first tick of permanent occupation
        self.last_tick: dict[int, int] = {}  # vertex -> last transient reservation
        self.horizon = 0  # no transient reservation at or after this tick

    def can_move(self, u: int, v: int, t: int) -> bool:
        """Whether an agent at ``u`` at tick ``t`` may be at ``v`` at ``t + 1`` (``u == v`` waits)."""
        if (v, t + 1) in self.vertices:
            return False
        park = self.parked.get(v)
        if park is not None and park <= t + 1:
            return False
        return u == v or (v, u, t) not in self.edges

    def can_park(self, v: int, t: int) -> bool:
        return self.last_tick.get(v, -1) < t and v not in self.parked

    def reserve(self, flat_path: Sequence[int]) -> None:
        for t, v in enumerate(flat_path):
            self.vertices.add((v, t))
            if self.last_tick.get(v, -1) < t:
                self.last_tick[v] = t
            if t + 1 < len(flat_path):
                self.edges.add((v, flat_path[t + 1], t))
        self.parked[flat_path[-1]] = len(flat_path) - 1
        self.horizon = max(self.horizon, len(flat_path))


def space_time_astar(grid: GridMap, table: ReservationTable, s: int, g: int, horizon: int,
                     deadline: Optional[float] = None) -> Optional[list[int]]:
    """Earliest-arrival space-time path from ``s`` at tick 0 to a permanent stay at ``g``."""
    adj = grid.adjacency
    w = grid.width
    gr, gc = divmod(g, w)

    def h(v: int) -> int:
        r, c = divmod(v, w)
        return abs(r - gr) + abs(c - gc)

    if (s, 0) in table.vertices or s in table.parked:
        return None
    static_from = table.horizon  # beyond this, waiting changes nothing
    heap = [(h(s), 0, 0, s)]
    parent: dict[tuple[int, int], Optional[tuple[int, int]]] = {(s, 0): None}
    closed: set[tuple[int, int]] = set()
    seq = 1
    while heap:
        _, t, _, u = heapq.heappop(heap)
        key = (u, min(t, static_from))
        if key in closed:
            continue
        closed.add(key)
        if u == g and table.can_park(g, t):
            path = [u]
            node = (u, t)
            while parent[node] is not None:
                node = parent[node]
                path.append(node[0])
            path.reverse()
            return path
        if t >= horizon:
            continue
        if deadline is not None and seq % 4096 == 0 and time.perf_counter() > deadline:
            raise TimeLimitExceeded("CA* exceeded the time limit")
        for v in (*adj[u], u):
            if not table.can_move(u, v, t):
                continue
            nkey = (v, min(t + 1, static_from))
            if nkey in closed:
                continue
            node = (v, t + 1)
            if node not in parent:
                parent[node] = (u, t)
            else:
                continue
            heapq.heappush(heap, (t + 1 + h(v), t + 1, seq, v))
            seq += 1
    return None


@dataclass(frozen=True)
class CAStarResult:
    trajectories: Optional[tuple[Trajectory, ...]] = None
    failed_agent: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.failed_agent is None


def default_horizon(instance: Instance) -> int:
    total = 0
    for a in instance.agents:
        d = shortest_distance(instance.map, a.start, a.goal)
        total += d or 0
    return instance.map.num_free + total


def plan_ca_star(instance: Instance, ordering: Optional[Sequence[int]] = None,
                 horizon: Optional[int] = None, deadline: Optional[float] = None) -> CAStarResult:
    """Plan agents in priority order, reserving each trajectory and its goal forever after arrival.

    Lower-priority starts are reserved at tick 0 so that earlier agents do not
    plan through cells that are still occupied.
    """
    grid = instance.map
    if horizon is None:
        horizon = default_horizon(instance)
    table = ReservationTable()
    agents = instance.ordered(ordering)
    pending_starts = {grid.index(a.start) for a in agents}
    trajectories = []
    for a in agents:
        s, g = grid.index(a.start), grid.index(a.goal)
        pending_starts.discard(s)
        for v in pending_starts:
            table.vertices.add((v, 0))
        flat = space_time_astar(grid, table, s, g, horizon, deadline)
        for v in pending_starts:
            table.vertices.discard((v, 0))
        if flat is None:
            return CAStarResult(failed_agent=a.id)
        table.reserve(flat)
        trajectories.append(Trajectory(a.id, tuple(grid.vertex(v) for v in flat), a.goal))
    return CAStarResult(trajectories=tuple(trajectories))
