"""Static priority orderings: SPF, LPF, CF, CL and Random."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .grid_world import UNREACHABLE, GridMap, Instance, Vertex, _bfs_flat


class Policy(str, Enum):
    SPF = "spf"  # shortest path first
    LPF = "lpf"  # longest path first
    CF = "cf"  # most conflicting first
    CL = "cl"  # least conflicting first
    RANDOM = "random"


class UnreachableGoal(ValueError):
    pass


@dataclass(frozen=True)
class CorridorSet:
    agent_id: int
    distance: int
    vertices: frozenset[Vertex]


def _corridor_mask(grid: GridMap, s: Vertex, g: Vertex) -> tuple[int, np.ndarray]:
    empty = bytearray(grid.size)
    gi = grid.index(g)
    from_s = np.array(_bfs_flat(grid, grid.index(s), empty), dtype=np.int64)
    d = int(from_s[gi])
    if d == UNREACHABLE:
        raise UnreachableGoal(f"goal {g} is unreachable from {s}")
    from_g = np.array(_bfs_flat(grid, gi, empty), dtype=np.int64)
    mask = (from_s >= 0) & (from_g >= 0) & (from_s + from_g == d)
    return d, mask


def corridor(grid: GridMap, s: Vertex, g: Vertex, agent_id: int = -1) -> CorridorSet:
    """All vertices lying on at least one shortest ``s -> g`` path of the full map."""
    d, mask = _corridor_mask(grid, s, g)
    verts = frozenset(grid.vertex(int(i)) for i in np.flatnonzero(mask))
    return CorridorSet(agent_id, d, verts)


def _adjacency_matrix(grid: GridMap) -> csr_matrix:
    cached = grid.__dict__.get("_csr")
    if cached is None:
        rows = [u for u, nb in enumerate(grid.adjacency) for _ in nb]
        cols = [v for nb in grid.adjacency for v in nb]
        cached = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(grid.size, grid.size))
        grid.__dict__["_csr"] = cached
    return cached


_BATCH_CELLS = 16_000_000


def priority_keys(instance: Instance) -> tuple[dict[int, int], dict[int, int]]:
    """Shortest distances ``d_i`` and conflict scores ``c_i`` keyed by agent id.

    ``c_i`` sums, over the corridor of agent i, the number of other agents whose
    corridor also contains the vertex.
    """
    grid = instance.map
    agents = instance.agents
    if not agents:
        return {}, {}
    adj = _adjacency_matrix(grid)
    batch = max(1, _BATCH_CELLS // (2 * grid.size))
    occ = np.zeros(grid.size, dtype=np.int64)
    masks = []
    dists = {}
    for lo in range(0, len(agents), batch):
        chunk = agents[lo:lo + batch]
        sources = [grid.index(a.start) for a in chunk] + [grid.index(a.goal) for a in chunk]
        field = shortest_path(adj, unweighted=True, indices=sources)
        for j, a in enumerate(chunk):
            from_s, from_g = field[j], field[len(chunk) + j]
            d = from_s[sources[len(chunk) + j]]
            if not np.isfinite(d):
                raise UnreachableGoal(f"goal {a.goal} is unreachable from {a.start}")
            mask = np.flatnonzero(from_s + from_g == d)
            dists[a.id] = int(d)
            occ[mask] += 1
            masks.append(mask)
    scores = {a.id: int(occ[m].sum() - len(m)) for a, m in zip(agents, masks)}
    return dists, scores


def conflict_scores(instance: Instance) -> dict[int, int]:
    return priority_keys(instance)[1]


def _tiebreak_rng(seed: int, policy: Policy) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(policy.value.encode())])


def order(instance: Instance, policy: Policy | str, seed: int = 0) -> list[int]:
    """Priority ordering (agent ids, highest priority first); ties are broken by a seeded shuffle."""
    policy = Policy(policy.lower() if isinstance(policy, str) else policy)
    ids = [a.id for a in instance.agents]
    rng = _tiebreak_rng(seed, policy)
    shuffle = rng.permutation(len(ids))
    if policy is Policy.RANDOM:
        return [ids[i] for i in shuffle]
    dists, scores = priority_keys(instance)
    key = {
        Policy.SPF: lambda a: dists[a],
        Policy.LPF: lambda a: -dists[a],
        Policy.CF: lambda a: -scores[a],
        Policy.CL: lambda a: scores[a],
    }[policy]
    tie = {a: int(t) for a, t in zip(ids, shuffle)}
    return sorted(ids, key=lambda a: (key(a), tie[a]))
