"""Grid environment: maps, adjacency, MovingAI parsing, distances and instances."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

Vertex = tuple[int, int]  # (row, col)

PASSABLE_TERRAIN = frozenset(".GS")
BLOCKED_TERRAIN = frozenset("@OTW")

# up, down, left, right
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ParseError(ValueError):
    """Malformed map or scenario text."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class InstanceError(ValueError):
    """Instance violates its invariants or cannot be generated."""


@dataclass(frozen=True, eq=False)
class GridMap:
    width: int
    height: int
    passable: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map dimensions must be positive")
        grid = np.array(self.passable, dtype=bool)
        if grid.shape != (self.height, self.width):
            raise ValueError(
                f"passable grid has shape {grid.shape}, expected {(self.height, self.width)}"
            )
        grid.setflags(write=False)
        object.__setattr__(self, "passable", grid)

    @classmethod
    def from_rows(cls, rows: Sequence[str], name: str = "") -> "GridMap":
        """Build from terrain strings, e.g. ``["..@", "..."]``."""
        return parse_map(_body_to_text(rows), name=name)

    def in_bounds(self, v: Vertex) -> bool:
        return 0 <= v[0] < self.height and 0 <= v[1] < self.width

    def is_passable(self, v: Vertex) -> bool:
        return self.in_bounds(v) and bool(self.passable[v[0], v[1]])

    def index(self, v: Vertex) -> int:
        return v[0] * self.width + v[1]

    def vertex(self, idx: int) -> Vertex:
        return divmod(idx, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    @cached_property
    def free_cells(self) -> list[Vertex]:
        rows, cols = np.nonzero(self.passable)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    @property
    def num_free(self) -> int:
        return int(self.passable.sum())

    @cached_property
    def adjacency(self) -> list[tuple[int, ...]]:
        """Flat-index neighbor lists in (up, down, left, right) order; empty for walls."""
        w, h = self.width, self.height
        flat = self.passable.ravel()
        adj: list[tuple[int, ...]] = []
        for idx in range(w * h):
            if not flat[idx]:
                adj.append(())
                continue
            r, c = divmod(idx, w)
            nbrs = []
            for dr, dc in _OFFSETS:
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and flat[rr * w + cc]:
                    nbrs.append(rr * w + cc)
            adj.append(tuple(nbrs))
        return adj

    def __repr__(self) -> str:
        return f"GridMap(name={self.name!r}, {self.height}x{self.width}, free={self.num_free})"


def _body_to_text(rows: Sequence[str]) -> str:
    height, width = len(rows), len(rows[0]) if rows else 0
    return f"type octile\nheight {height}\nwidth {width}\nmap\n" + "\n".join(rows) + "\n"


def parse_map(text: str, name: str = "") -> GridMap:
    """Parse MovingAI ``.map`` text into a :class:`GridMap`."""
    lines = text.splitlines()
    header: dict[str, str] = {}
    body_start = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.lower() == "map":
            body_start = lineno
            break
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"malformed header line {raw!r}", lineno)
        header[parts[0].lower()] = parts[1]
    if body_start is None:
        raise ParseError("missing 'map' section marker")
    try:
        height = int(header["height"])
        width = int(header["width"])
    except KeyError as exc:
        raise ParseError(f"missing header field {exc.args[0]!r}") from None
    except ValueError:
        raise ParseError("non-integer height/width in header") from None
    if height <= 0 or width <= 0:
        raise ParseError("height and width must be positive")

    body = lines[body_start:body_start + height]
    if len(body) < height:
        raise ParseError(f"expected {height} grid lines, found {len(body)}", body_start + len(body) + 1)
    extra = [ln for ln in lines[body_start + height:] if ln.strip()]
    if extra:
        raise ParseError("grid has more lines than declared height", body_start + height + 1)

    grid = np.zeros((height, width), dtype=bool)
    for r, raw in enumerate(body):
        lineno = body_start + r + 1
        row = raw.rstrip("\r\n")
        if len(row) != width:
            raise ParseError(f"grid line has {len(row)} characters, expected {width}", lineno)
        for c, ch in enumerate(row):
            if ch in PASSABLE_TERRAIN:
                grid[r, c] = True
            elif ch not in BLOCKED_TERRAIN:
                raise ParseError(f"unknown terrain character {ch!r}", lineno, c + 1)
    return GridMap(width=width, height=height, passable=grid, name=name)


def serialize_map(grid: GridMap) -> str:
    rows = ["".join("." if p else "@" for p in row) for row in grid.passable]
    return _body_to_text(rows)


def load_map(path: str | Path) -> GridMap:
    path = Path(path)
    return parse_map(path.read_text(), name=path.stem)


@dataclass(frozen=True)
class ScenEntry:
    bucket: int
    map_name: str
    map_width: int
    map_height: int
    start: Vertex
    goal: Vertex
    optimal_length: float


def parse_scen(text: str) -> list[ScenEntry]:
    """Parse MovingAI ``.scen`` text. Coordinates are stored as (row=y, col=x)."""
    lines = text.splitlines()
    if not lines or not lines[0].strip().lower().startswith("version"):
        raise ParseError("missing version line", 1)
    entries = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.rstrip("\r\n").split("\t")
        if len(fields) != 9:
            raise ParseError(f"expected 9 tab-separated fields, got {len(fields)}", lineno)
        try:
            bucket = int(fields[0])
            mw, mh = int(fields[2]), int(fields[3])
            sx, sy, gx, gy = (int(f) for f in fields[4:8])
            opt = float(fields[8])
        except ValueError as exc:
            raise ParseError(f"bad numeric field ({exc})", lineno) from None
        for x, y in ((sx, sy), (gx, gy)):
            if not (0 <= x < mw and 0 <= y < mh):
                raise ParseError(f"coordinate ({x}, {y}) outside {mw}x{mh}", lineno)
        entries.append(ScenEntry(bucket, fields[1], mw, mh, (sy, sx), (gy, gx), opt))
    return entries


def serialize_scen(entries: Iterable[ScenEntry], version: str = "1") -> str:
    out = [f"version {version}"]
    for e in entries:
        out.append("\t".join([
            str(e.bucket), e.map_name, str(e.map_width), str(e.map_height),
            str(e.start[1]), str(e.start[0]), str(e.goal[1]), str(e.goal[0]),
            repr(float(e.optimal_length)),
        ]))
    return "\n".join(out) + "\n"


def neighbors(grid: GridMap, v: Vertex) -> list[Vertex]:
    if not grid.is_passable(v):
        raise ValueError(f"vertex {v} is out of bounds or impassable")
    return [grid.vertex(i) for i in grid.adjacency[grid.index(v)]]


UNREACHABLE = -1


@dataclass(frozen=True, eq=False)
class DistField:
    """Unit-cost distances from ``source``; ``UNREACHABLE`` (-1) marks cut-off cells."""

    source: Vertex
    dist: np.ndarray

    def __getitem__(self, v: Vertex) -> Optional[int]:
        d = int(self.dist[v[0], v[1]])
        return None if d == UNREACHABLE else d

    def reachable(self, v: Vertex) -> bool:
        return self.dist[v[0], v[1]] != UNREACHABLE


def _blocked_mask(grid: GridMap, blocked: Optional[Iterable[Vertex]]) -> bytearray:
    mask = bytearray(grid.size)
    for v in blocked or ():
        if grid.in_bounds(v):
            mask[grid.index(v)] = 1
    return mask


def _bfs_flat(grid: GridMap, source: int, mask: bytearray, target: int = -1) -> list[int]:
    dist = [UNREACHABLE] * grid.size
    dist[source] = 0
    adj = grid.adjacency
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if u == target:
            break
        du = dist[u] + 1
        for w in adj[u]:
            if dist[w] == UNREACHABLE and not mask[w]:
                dist[w] = du
                queue.append(w)
    return dist


def bfs_distances(grid: GridMap, source: Vertex, blocked: Optional[Iterable[Vertex]] = None) -> DistField:
    """Exact shortest unit-cost distances with ``blocked`` vertices removed."""
    mask = _blocked_mask(grid, blocked)
    if not grid.is_passable(source) or mask[grid.index(source)]:
        raise ValueError(f"source {source} is impassable or blocked")
    dist = np.array(_bfs_flat(grid, grid.index(source), mask), dtype=np.int64)
    return DistField(source, dist.reshape(grid.height, grid.width))


def shortest_distance(grid: GridMap, s: Vertex, g: Vertex, blocked: Optional[Iterable[Vertex]] = None) -> Optional[int]:
    """Distance from ``s`` to ``g`` avoiding ``blocked``, or None. Stops early at ``g``."""
    mask = _blocked_mask(grid, blocked)
    si, gi = grid.index(s), grid.index(g)
    if mask[si] or mask[gi] or not grid.is_passable(s) or not grid.is_passable(g):
        return None
    d = _bfs_flat(grid, si, mask, target=gi)[gi]
    return None if d == UNREACHABLE else d


@dataclass(frozen=True)
class Agent:
    id: int
    start: Vertex
    goal: Vertex


@dataclass(frozen=True, eq=False)
class Instance:
    map: GridMap
    agents: tuple[Agent, ...]

    def __post_init__(self) -> None:
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise InstanceError("agent ids must be unique")
        starts = [a.start for a in agents]
        goals = [a.goal for a in agents]
        if len(set(starts)) != len(starts):
            raise InstanceError("starts must be pairwise distinct")
        if len(set(goals)) != len(goals):
            raise InstanceError("goals must be pairwise distinct")
        for a in agents:
            for v in (a.start, a.goal):
                if not self.map.is_passable(v):
                    raise InstanceError(f"agent {a.id}: vertex {v} is not passable")

    @property
    def k(self) -> int:
        return len(self.agents)

    def agent(self, agent_id: int) -> Agent:
        return self._by_id[agent_id]

    @cached_property
    def _by_id(self) -> dict[int, Agent]:
        return {a.id: a for a in self.agents}

    def ordered(self, ordering: Optional[Sequence[int]] = None) -> list[Agent]:
        """Agents in priority order; ``ordering`` is a permutation of agent ids."""
        if ordering is None:
            return list(self.agents)
        if sorted(ordering) != sorted(self._by_id):
            raise ValueError("ordering is not a permutation of the agent ids")
        return [self._by_id[i] for i in ordering]

    def to_json(self) -> dict:
        return {
            "map_name": self.map.name,
            "width": self.map.width,
            "height": self.map.height,
            "agents": [
                {"id": a.id, "start": list(a.start), "goal": list(a.goal)} for a in self.agents
            ],
        }

    @classmethod
    def from_json(cls, data: dict, grid: GridMap) -> "Instance":
        if (data["width"], data["height"]) != (grid.width, grid.height):
            raise InstanceError("instance dimensions do not match the map")
        agents = tuple(
            Agent(int(a["id"]), tuple(a["start"]), tuple(a["goal"])) for a in data["agents"]
        )
        return cls(grid, agents)


def instance_from_scen(grid: GridMap, entries: Sequence[ScenEntry], k: Optional[int] = None) -> Instance:
    entries = list(entries)[:k] if k is not None else list(entries)
    for e in entries:
        if (e.map_width, e.map_height) != (grid.width, grid.height):
            raise InstanceError(f"scen entry for {e.map_width}x{e.map_height} map does not fit {grid!r}")
    return Instance(grid, tuple(Agent(i, e.start, e.goal) for i, e in enumerate(entries)))


def instance_to_scen(instance: Instance, bucket: int = 0) -> list[ScenEntry]:
    grid = instance.map
    out = []
    for a in instance.agents:
        d = shortest_distance(grid, a.start, a.goal)
        out.append(ScenEntry(bucket, grid.name + ".map", grid.width, grid.height, a.start, a.goal,
                             float(d) if d is not None else 0.0))
    return out


SAMPLERS = ("uniform", "feasible")


def generate_instance(grid: GridMap, k: int, seed: int, sampler: str = "uniform") -> Instance:
    """Sample ``k`` agents with pairwise-distinct starts and goals.

    ``uniform`` draws starts and goals independently and uniformly from the free
    cells. ``feasible`` keeps the free graph connected once every goal is
    removed (each goal keeps a free neighbour) and draws starts among the
    remaining cells, so residual reachability holds under every priority
    ordering. It works on the largest connected component of the map.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    free = grid.free_cells
    if k < 0 or k > len(free):
        raise InstanceError(f"cannot place {k} agents on {len(free)} free cells")
    rng = np.random.default_rng(seed)
    if sampler == "uniform":
        starts = rng.choice(len(free), size=k, replace=False)
        goals = rng.choice(len(free), size=k, replace=False)
        agents = tuple(Agent(i, free[int(s)], free[int(g)]) for i, (s, g) in enumerate(zip(starts, goals)))
        return Instance(grid, agents)
    return _feasible_instance(grid, k, rng)


def _largest_component(grid: GridMap) -> list[int]:
    seen = bytearray(grid.size)
    best: list[int] = []
    adj = grid.adjacency
    for v in free_indices(grid):
        if seen[v]:
            continue
        comp = [v]
        seen[v] = 1
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = 1
                    comp.append(w)
                    queue.append(w)
        if len(comp) > len(best):
            best = comp
    return sorted(best)


def free_indices(grid: GridMap) -> list[int]:
    return [int(i) for i in np.flatnonzero(grid.passable.ravel())]


def _stays_connected(adj: list[tuple[int, ...]], removed: bytearray, c: int) -> bool:
    """Whether removing ``c`` keeps its remaining neighbours in one component."""
    nbrs = [w for w in adj[c] if not removed[w]]
    if len(nbrs) <= 1:
        return True
    targets = set(nbrs[1:])
    seen = {c, nbrs[0]}
    queue = deque([nbrs[0]])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen and not removed[w]:
                if w in targets:
                    targets.discard(w)
                    if not targets:
                        return True
                seen.add(w)
                queue.append(w)
    return False


def _feasible_instance(grid: GridMap, k: int, rng: np.random.Generator) -> Instance:
    adj = grid.adjacency
    comp = _largest_component(grid)
    if 2 * k > len(comp) - 1:
        raise InstanceError(f"feasible sampler cannot place {k} agents on {len(comp)} connected cells")
    removed = bytearray(grid.size)
    for v in range(grid.size):
        removed[v] = 1
    for v in comp:
        removed[v] = 0
    is_goal = bytearray(grid.size)
    goals: list[int] = []
    for c in rng.permutation(comp):
        if len(goals) == k:
            break
        c = int(c)
        if not any(not removed[w] for w in adj[c]):
            continue
        # goals already next to c must keep another free neighbour
        if any(is_goal[w] and not any(not removed[x] and x != c for x in adj[w]) for w in adj[c]):
            continue
        if not _stays_connected(adj, removed, c):
            continue
        removed[c] = 1
        is_goal[c] = 1
        goals.append(c)
    if len(goals) < k:
        raise InstanceError(f"feasible sampler placed only {len(goals)} of {k} goals")
    remaining = [v for v in comp if not removed[v]]
    starts = rng.choice(len(remaining), size=k, replace=False)
    agents = tuple(
        Agent(i, grid.vertex(remaining[int(s)]), grid.vertex(g)) for i, (s, g) in enumerate(zip(starts, goals))
    )
    return Instance(grid, agents)


@dataclass(frozen=True)
class ReachabilityReport:
    holds: bool
    failing_agent: Optional[int] = None
    reason: str = ""


def check_residual_reachability(instance: Instance, ordering: Optional[Sequence[int]] = None) -> ReachabilityReport:
    """Check that each agent reaches its goal once higher-priority goals are removed."""
    grid = instance.map
    mask = bytearray(grid.size)
    for a in instance.ordered(ordering):
        si, gi = grid.index(a.start), grid.index(a.goal)
        if mask[si]:
            return ReachabilityReport(False, a.id, "start_blocked")
        if mask[gi]:
            return ReachabilityReport(False, a.id, "goal_blocked")
        if _bfs_flat(grid, si, mask, target=gi)[gi] == UNREACHABLE:
            return ReachabilityReport(False, a.id, "unreachable")
        mask[gi] = 1
    return ReachabilityReport(True)


def check_well_formed(instance: Instance) -> ReachabilityReport:
    """Endpoints are pairwise distinct across agents, and every agent reaches its
    goal while avoiding all other starts and goals."""
    grid = instance.map
    endpoints = bytearray(grid.size)
    owner: dict[Vertex, int] = {}
    for a in instance.agents:
        for v in {a.start, a.goal}:
            if owner.setdefault(v, a.id) != a.id:
                return ReachabilityReport(False, a.id, "shared_endpoint")
        endpoints[grid.index(a.start)] = 1
        endpoints[grid.index(a.goal)] = 1
    for a in instance.agents:
        si, gi = grid.index(a.start), grid.index(a.goal)
        mask = bytearray(endpoints)
        mask[si] = 0
        mask[gi] = 0
        if _bfs_flat(grid, si, mask, target=gi)[gi] == UNREACHABLE:
            return ReachabilityReport(False, a.id, "unreachable")
    return ReachabilityReport(True)


def dump_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance.to_json(), indent=2))
