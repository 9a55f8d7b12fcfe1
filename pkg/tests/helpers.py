"""Shared fixtures and deliberately naive reference implementations."""
from __future__ import annotations

import heapq
from collections import deque

import numpy as np
from hypothesis import strategies as st

from gcpmapf.grid_world import Agent, GridMap, Instance


def open_grid(h: int, w: int) -> GridMap:
    return GridMap.from_rows(["." * w] * h)


def random_grid(rng: np.random.Generator, h: int, w: int, wall_p: float = 0.25) -> GridMap:
    mask = rng.random((h, w)) >= wall_p
    return GridMap(w, h, mask)


@st.composite
def grids(draw, min_side=2, max_side=8):
    h = draw(st.integers(min_side, max_side))
    w = draw(st.integers(min_side, max_side))
    cells = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    mask = np.array(cells, dtype=bool).reshape(h, w)
    if not mask.any():
        mask[0, 0] = True
    return GridMap(w, h, mask)


def make_instance(grid: GridMap, pairs) -> Instance:
    return Instance(grid, tuple(Agent(i, tuple(s), tuple(g)) for i, (s, g) in enumerate(pairs)))


def flood_fill(grid: GridMap, source, blocked=()):
    """Distances by repeated relaxation over the whole grid until nothing changes."""
    blocked = set(blocked)
    INF = float("inf")
    dist = {(r, c): INF for r in range(grid.height) for c in range(grid.width)
            if grid.passable[r, c] and (r, c) not in blocked}
    dist[source] = 0
    changed = True
    while changed:
        changed = False
        for (r, c), d in list(dist.items()):
            for v in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if v in dist and dist[v] + 1 < d:
                    d = dist[v] + 1
                    dist[(r, c)] = d
                    changed = True
    return {v: (None if d == INF else d) for v, d in dist.items()}


def dijkstra_cost(grid: GridMap, blocked, penalty, cp, s, g):
    """Plain Dijkstra on entry costs 1 + cp * penalty[v], no heuristic."""
    blocked = set(blocked)
    best = {s: 0}
    heap = [(0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == g:
            return d
        if d > best[u]:
            continue
        r, c = u
        for v in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if not grid.is_passable(v) or v in blocked:
                continue
            nd = d + 1 + cp * penalty[v]
            if nd < best.get(v, float("inf")):
                best[v] = nd
                heapq.heappush(heap, (nd, v))
    return None


def naive_conflicts(trajectories):
    """Exhaustive pairwise check over the padded horizon: (vertex count, swap count)."""
    horizon = max(len(t.positions) for t in trajectories)
    vertex = swaps = 0
    for a in range(len(trajectories)):
        for b in range(a + 1, len(trajectories)):
            ta, tb = trajectories[a], trajectories[b]
            for t in range(horizon):
                if ta.at(t) == tb.at(t):
                    vertex += 1
                if t + 1 < horizon and ta.at(t) != ta.at(t + 1) \
                        and ta.at(t) == tb.at(t + 1) and ta.at(t + 1) == tb.at(t):
                    swaps += 1
    return vertex, swaps


def bfs_len(grid: GridMap, s, g, blocked=()):
    blocked = set(blocked)
    if s in blocked or g in blocked:
        return None
    seen = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        if u == g:
            return seen[u]
        r, c = u
        for v in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if grid.is_passable(v) and v not in blocked and v not in seen:
                seen[v] = seen[u] + 1
                q.append(v)
    return None


# Two-row fixture: a u v b along the top, e below u.
#   a u v b
#   @ e @ @
HEAD_ON_ROWS = ["....", "@.@@"]
A, U, V, B, E = (0, 0), (0, 1), (0, 2), (0, 3), (1, 1)


ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion} ({name}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
