"""Decentralized Local Controller: FIFO authorization queues and a tick-based executor.

Two execution modes are provided:

* ``literal`` moves an agent as soon as it heads the queue of its next vertex and
  consumes the authorization on entry.
* ``strict`` additionally requires the next vertex to be unoccupied, and keeps the
  authorization at the head of the queue until the agent departs (goal entries
  are consumed at once). This makes vertex and swap conflicts structurally
  impossible, at the price of possible deadlocks.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .gcp_planner import GeometricPath, TimeLimitExceeded
from .grid_world import Vertex


class ExecMode(str, Enum):
    LITERAL = "literal"
    STRICT = "strict"


MOVE, WAIT, PARK = "move", "wait", "park"


@dataclass(frozen=True)
class Trajectory:
    agent_id: int
    positions: tuple[Vertex, ...]
    goal: Optional[Vertex] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(tuple(p) for p in self.positions))
        if not self.positions:
            raise ValueError("a trajectory has at least one position")
        if self.goal is None:
            object.__setattr__(self, "goal", self.positions[-1])
        else:
            object.__setattr__(self, "goal", tuple(self.goal))

    def at(self, t: int) -> Vertex:
        """Position at tick ``t``; the agent stays at its last position afterwards."""
        return self.positions[min(t, len(self.positions) - 1)]

    @property
    def arrival(self) -> Optional[int]:
        """First tick from which the agent stays at its goal, or None if it never settles."""
        if self.positions[-1] != self.goal:
            return None
        t = len(self.positions) - 1
        while t > 0 and self.positions[t - 1] == self.goal:
            t -= 1
        return t

    def to_json(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "T": self.arrival,
            "goal": list(self.goal),
            "positions": [list(p) for p in self.positions],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Trajectory":
        goal = tuple(data["goal"]) if data.get("goal") is not None else None
        return cls(int(data["agent_id"]), tuple(tuple(p) for p in data["positions"]), goal)


class QueueTable:
    """Per-vertex FIFO queues of priority indices (0 = highest priority)."""

    def __init__(self, queues: Optional[dict[Vertex, deque]] = None):
        self.queues: dict[Vertex, deque] = queues if queues is not None else {}

    def head(self, v: Vertex) -> Optional[int]:
        q = self.queues.get(v)
        return q[0] if q else None

    def pop(self, v: Vertex, expected: int) -> None:
        q = self.queues[v]
        if q[0] != expected:
            raise AssertionError(f"queue at {v} is headed by {q[0]}, not {expected}")
        q.popleft()

    def __getitem__(self, v: Vertex) -> list[int]:
        return list(self.queues.get(v, ()))

    def copy(self) -> "QueueTable":
        return QueueTable({v: deque(q) for v, q in self.queues.items()})

    def is_priority_consistent(self) -> bool:
        return all(list(q) == sorted(q) for q in self.queues.values())

    def total(self) -> int:
        return sum(len(q) for q in self.queues.values())


def build_queues(paths: Sequence[GeometricPath]) -> QueueTable:
    """Append each agent, in priority order, to the queue of every non-start vertex of its path."""
    queues: dict[Vertex, deque] = {}
    for i, path in enumerate(paths):
        if len(set(path.vertices)) != len(path.vertices):
            raise ValueError(f"path of agent {path.agent_id} revisits a vertex")
        for v in path.vertices[1:]:
            queues.setdefault(v, deque()).append(i)
    return QueueTable(queues)


@dataclass
class ExecState:
    paths: Sequence[GeometricPath]
    queues: QueueTable
    tick: int = 0
    r: list[int] = field(default_factory=list)
    occupant: dict[Vertex, int] = field(default_factory=dict)
    history: list[list[Vertex]] = field(default_factory=list)
    waits: list[int] = field(default_factory=list)

    @classmethod
    def initial(cls, paths: Sequence[GeometricPath], queues: QueueTable) -> "ExecState":
        starts = [p.start for p in paths]
        return cls(
            paths=paths,
            queues=queues,
            r=[0] * len(paths),
            occupant={v: i for i, v in enumerate(starts)},
            history=[[v] for v in starts],
            waits=[0] * len(paths),
        )

    def position(self, i: int) -> Vertex:
        return self.paths[i].vertices[self.r[i]]

    def finished(self, i: int) -> bool:
        return self.r[i] == self.paths[i].length

    def all_finished(self) -> bool:
        return all(self.finished(i) for i in range(len(self.paths)))

    def progress(self) -> int:
        return sum(self.r)


def step(state: ExecState, mode: ExecMode = ExecMode.STRICT) -> list[str]:
    """Advance one tick in place, processing agents by ascending priority.

    Returns the action taken by each agent (``move``, ``wait`` or ``park``).
    """
    mode = ExecMode(mode)
    strict = mode is ExecMode.STRICT
    state.tick += 1
    actions = []
    for i, path in enumerate(state.paths):
        r = state.r[i]
        if r == path.length:
            state.history[i].append(path.goal)
            actions.append(PARK)
            continue
        u, v = path.vertices[r], path.vertices[r + 1]
        allowed = state.queues.head(v) == i
        if strict and allowed:
            allowed = v not in state.occupant
        if not allowed:
            state.history[i].append(u)
            state.waits[i] += 1
            actions.append(WAIT)
            continue
        state.r[i] = r + 1
        state.history[i].append(v)
        actions.append(MOVE)
        if strict:
            del state.occupant[u]
            state.occupant[v] = i
            if r >= 1:
                state.queues.pop(u, i)
            if r + 1 == path.length:
                state.queues.pop(v, i)
        else:
            if state.occupant.get(u) == i:
                del state.occupant[u]
            state.occupant[v] = i
            state.queues.pop(v, i)
    return actions


@dataclass(frozen=True)
class BlockingReport:
    tick: int
    stuck_agents: tuple[int, ...]
    waits_for: dict[int, tuple[int, str]]  # agent -> (blocker, "queue" | "occupied")
    cycle: tuple[int, ...]

    def to_json(self, ids: Optional[Sequence[int]] = None) -> dict:
        name = (lambda i: ids[i]) if ids is not None else (lambda i: i)
        return {
            "tick": self.tick,
            "stuck_agents": [name(i) for i in self.stuck_agents],
            "waits_for": {str(name(a)): [name(b), why] for a, (b, why) in self.waits_for.items()},
            "cycle": [name(i) for i in self.cycle],
        }


def detect_deadlock(state: ExecState, previous_progress: int) -> Optional[BlockingReport]:
    """Wait-for structure of the unfinished agents, if none advanced during the last tick."""
    if state.progress() != previous_progress or state.all_finished():
        return None
    waits_for: dict[int, tuple[int, str]] = {}
    stuck = []
    for i, path in enumerate(state.paths):
        if state.finished(i):
            continue
        stuck.append(i)
        v = path.vertices[state.r[i] + 1]
        head = state.queues.head(v)
        if head is not None and head != i:
            waits_for[i] = (head, "queue")
        elif v in state.occupant:
            waits_for[i] = (state.occupant[v], "occupied")
    return BlockingReport(state.tick, tuple(stuck), waits_for, _find_cycle(waits_for))


def _find_cycle(waits_for: dict[int, tuple[int, str]]) -> tuple[int, ...]:
    done: set[int] = set()
    for start in sorted(waits_for):
        trail: list[int] = []
        pos: dict[int, int] = {}
        a = start
        while a in waits_for and a not in done and a not in pos:
            pos[a] = len(trail)
            trail.append(a)
            a = waits_for[a][0]
        if a in pos:
            return tuple(trail[pos[a]:])
        done.update(trail)
    return ()


@dataclass
class ExecOutcome:
    """Result of an execution.

    ``entries[i][r]`` is the tick at which agent ``i`` (priority index) entered
    the ``r``-th vertex of its path; ``entries[i][0]`` is 0. Trajectories are
    derived from these on demand.
    """

    status: str  # success | deadlock | tick_limit
    tick: int
    paths: Sequence[GeometricPath]
    entries: tuple[tuple[int, ...], ...]
    waits: tuple[int, ...]
    deadlock: Optional[BlockingReport] = None
    actions: list[list[str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "success"

    @property
    def arrivals(self) -> list[Optional[int]]:
        return [e[-1] if len(e) == p.length + 1 else None for p, e in zip(self.paths, self.entries)]

    @property
    def makespan(self) -> int:
        return max((t or 0 for t in self.arrivals), default=0)

    @property
    def wait_events(self) -> int:
        return sum(self.waits)

    @cached_property
    def trajectories(self) -> tuple[Trajectory, ...]:
        """On success each trajectory ends at its own arrival; otherwise at the final tick."""
        out = []
        for path, times in zip(self.paths, self.entries):
            end = times[-1] if self.ok else self.tick
            pos: list[Vertex] = []
            for r, t0 in enumerate(times):
                t1 = times[r + 1] if r + 1 < len(times) else end + 1
                pos.extend([path.vertices[r]] * (t1 - t0))
            out.append(Trajectory(path.agent_id, tuple(pos), path.goal))
        return tuple(out)

    def position_array(self, stride: int) -> np.ndarray:
        """Positions encoded as ``row * stride + col``, shape (agents, ticks + 1)."""
        horizon = self.tick + 1
        arr = np.empty((len(self.paths), horizon), dtype=np.int64)
        for i, (path, times) in enumerate(zip(self.paths, self.entries)):
            codes = np.array([r * stride + c for r, c in path.vertices[: len(times)]], dtype=np.int64)
            bounds = np.append(np.asarray(times, dtype=np.int64), horizon)
            arr[i] = np.repeat(codes, np.diff(bounds))
        return arr


def default_tick_limit(paths: Sequence[GeometricPath]) -> int:
    lengths = [p.length for p in paths] or [0]
    return max(1, 4 * (sum(lengths) + len(lengths) * max(lengths)))


def execute(paths: Sequence[GeometricPath], queues: Optional[QueueTable] = None,
            mode: ExecMode = ExecMode.STRICT, tick_limit: Optional[int] = None,
            deadline: Optional[float] = None, record_actions: bool = False,
            engine: str = "auto") -> ExecOutcome:
    """Run the tick loop until every agent is parked, a deadlock, or the tick limit.

    ``queues`` defaults to ``build_queues(paths)`` and is copied, never mutated.
    With ``engine="auto"``, literal mode on default queues is computed by
    :func:`literal_schedule`, which gives the same outcome as the tick loop.
    """
    mode = ExecMode(mode)
    if tick_limit is None:
        tick_limit = default_tick_limit(paths)
    if engine == "auto" and mode is ExecMode.LITERAL and queues is None and not record_actions:
        return literal_schedule(paths, tick_limit)
    queues = build_queues(paths) if queues is None else queues.copy()
    state = ExecState.initial(paths, queues)
    entries = [[0] for _ in paths]
    actions: list[list[str]] = []
    status, report = "success", None
    while not state.all_finished():
        if state.tick >= tick_limit:
            status = "tick_limit"
            break
        if deadline is not None and state.tick % 64 == 0 and time.perf_counter() > deadline:
            raise TimeLimitExceeded("execution exceeded the time limit")
        before = state.progress()
        acts = step(state, mode)
        for i, act in enumerate(acts):
            if act == MOVE:
                entries[i].append(state.tick)
        if record_actions:
            actions.append(acts)
        report = detect_deadlock(state, before)
        if report is not None:
            status = "deadlock"
            break
    return ExecOutcome(status, state.tick, paths, tuple(map(tuple, entries)), tuple(state.waits),
                       report, actions)


def literal_schedule(paths: Sequence[GeometricPath], tick_limit: Optional[int] = None) -> ExecOutcome:
    """Literal-mode execution in O(total path length).

    In literal mode an agent enters ``v`` at the first tick at which it stands
    next to ``v`` and its queue predecessor at ``v`` has already entered, so
    ``entry = max(own previous entry + 1, predecessor's entry)``. Agents are
    resolved in priority order, which is also queue order.
    """
    if tick_limit is None:
        tick_limit = default_tick_limit(paths)
    last_entry: dict[Vertex, int] = {}
    full = []
    for path in paths:
        if len(set(path.vertices)) != len(path.vertices):
            raise ValueError(f"path of agent {path.agent_id} revisits a vertex")
        t = 0
        times = [0]
        for v in path.vertices[1:]:
            t = max(t + 1, last_entry.get(v, 0))
            last_entry[v] = t
            times.append(t)
        full.append(times)
    end = max((e[-1] for e in full), default=0)
    if end <= tick_limit:
        waits = tuple(e[-1] - p.length for p, e in zip(paths, full))
        return ExecOutcome("success", end, paths, tuple(map(tuple, full)), waits)
    entries = tuple(tuple(t for t in e if t <= tick_limit) for e in full)
    waits = tuple(
        (e[-1] if len(e) == p.length + 1 else tick_limit) - (len(e) - 1) for p, e in zip(paths, entries)
    )
    return ExecOutcome("tick_limit", tick_limit, paths, entries, waits)


def trajectories_to_csv(trajectories: Sequence[Trajectory]) -> str:
    """Compact ``tick,agent,row,col,action`` listing over the common horizon."""
    horizon = max(len(t.positions) for t in trajectories) if trajectories else 0
    lines = ["tick,agent,row,col,action"]
    for tick in range(horizon):
        for traj in trajectories:
            pos = traj.at(tick)
            if tick == 0:
                action = "start"
            elif traj.arrival is not None and tick > traj.arrival:
                action = PARK
            elif pos == traj.at(tick - 1):
                action = WAIT
            else:
                action = MOVE
            lines.append(f"{tick},{traj.agent_id},{pos[0]},{pos[1]},{action}")
    return "\n".join(lines) + "\n"


def trajectories_from_csv(text: str) -> tuple[Trajectory, ...]:
    """Inverse of :func:`trajectories_to_csv`; each goal is taken as the final position."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split(",")[:4] != ["tick", "agent", "row", "col"]:
        raise ValueError("trajectory CSV needs a 'tick,agent,row,col' header")
    per_agent: dict[int, dict[int, Vertex]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            tick, agent, row, col = (int(x) for x in parts[:4])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer field in {line!r}") from None
        per_agent.setdefault(agent, {})[tick] = (row, col)
    out = []
    for agent, ticks in sorted(per_agent.items()):
        if sorted(ticks) != list(range(len(ticks))):
            raise ValueError(f"agent {agent}: ticks are not contiguous from 0")
        out.append(Trajectory(agent, tuple(ticks[t] for t in range(len(ticks)))))
    return tuple(out)
