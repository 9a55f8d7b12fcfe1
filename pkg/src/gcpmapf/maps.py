"""Procedural benchmark-style maps and access to the bundled map files."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .grid_world import GridMap, load_map, parse_map

BUILTIN_MAPS = ("room-64-64-8", "city-256-256", "empty-128-128")


def room_map(rooms: int = 8, room_size: int = 8, doors: int = 96, seed: int = 0, name: str = "") -> GridMap:
    """Grid of ``rooms`` x ``rooms`` square rooms separated by one-cell walls.

    Each room has ``room_size - 1`` free cells per side. Single-cell doorways are
    opened in ``doors`` of the internal wall segments: a random spanning tree
    first (so the map is connected), then extra segments at random. The default
    arguments produce a 64x64 map with 3232 free cells, the same layout family
    and free-cell count as the MovingAI room-64-64-8 map.
    """
    inner = room_size - 1
    side = rooms * room_size
    grid = np.zeros((side, side), dtype=bool)
    for i in range(rooms):
        for j in range(rooms):
            grid[i * room_size:i * room_size + inner, j * room_size:j * room_size + inner] = True

    segments = []
    for i in range(rooms):
        for j in range(rooms):
            if j + 1 < rooms:
                segments.append(((i, j), (i, j + 1)))
            if i + 1 < rooms:
                segments.append(((i, j), (i + 1, j)))
    max_doors = len(segments)
    if not rooms * rooms - 1 <= doors <= max_doors:
        raise ValueError(f"doors must lie in [{rooms * rooms - 1}, {max_doors}]")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(segments))
    parent = list(range(rooms * rooms))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen, rest = [], []
    for s in order:
        (a, b) = segments[s]
        ra, rb = find(a[0] * rooms + a[1]), find(b[0] * rooms + b[1])
        if ra != rb:
            parent[ra] = rb
            chosen.append(s)
        else:
            rest.append(s)
    chosen += rest[: doors - len(chosen)]

    for s in sorted(chosen):
        (i, j), (i2, j2) = segments[s]
        offset = int(rng.integers(inner))
        if i == i2:  # horizontal neighbours: door in the vertical wall column
            grid[i * room_size + offset, j * room_size + inner] = True
        else:
            grid[i * room_size + inner, j * room_size + offset] = True
    return GridMap(side, side, grid, name or f"room-{side}-{side}-{room_size}")


def city_map(size: int = 256, seed: int = 0, block_fill: float = 0.3, name: str = "") -> GridMap:
    """Open street grid with rectangular building footprints.

    Buildings are dropped at random until roughly ``block_fill`` of the area is
    covered; cells not connected to the largest free component are walled off.
    """
    rng = np.random.default_rng(seed)
    grid = np.ones((size, size), dtype=bool)
    target = block_fill * size * size
    while (~grid).sum() < target:
        h, w = (int(x) for x in rng.integers(3, max(4, size // 12), size=2))
        r, c = (int(x) for x in rng.integers(0, size - 1, size=2))
        grid[r:r + h, c:c + w] = False
    gm = GridMap(size, size, grid, name or f"city-{size}-{size}")
    return _largest_component(gm)


def empty_map(size: int, name: str = "") -> GridMap:
    return GridMap(size, size, np.ones((size, size), dtype=bool), name or f"empty-{size}-{size}")


def _largest_component(gm: GridMap) -> GridMap:
    from scipy import ndimage

    labels, n = ndimage.label(gm.passable)
    if n <= 1:
        return gm
    sizes = ndimage.sum(gm.passable, labels, index=range(1, n + 1))
    keep = labels == (int(np.argmax(sizes)) + 1)
    return GridMap(gm.width, gm.height, keep, gm.name)


def builtin_map_path(name: str) -> Path:
    name = name.removesuffix(".map")
    if name not in BUILTIN_MAPS:
        raise KeyError(f"unknown builtin map {name!r}; choose from {', '.join(BUILTIN_MAPS)}")
    return Path(str(resources.files("gcpmapf") / "data" / f"{name}.map"))


def resolve_map(spec: str | Path) -> GridMap:
    """Load a map from a file path, or by builtin name (``room-64-64-8`` etc.)."""
    path = Path(spec)
    if path.is_file():
        return load_map(path)
    try:
        bpath = builtin_map_path(str(spec))
    except KeyError:
        raise FileNotFoundError(f"no map file or builtin map named {spec!r}") from None
    return parse_map(bpath.read_text(), name=bpath.stem)
