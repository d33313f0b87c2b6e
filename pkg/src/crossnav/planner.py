"""Occupancy-grid shortest-path planning (8-connected Dijkstra + smoothing).

The grid inflates obstacle footprints by the body radius and uses the
profile's height to decide which obstacles block. Ties in the Dijkstra
frontier break toward the smaller flattened cell index, which keeps paths
deterministic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .mapgen import Map
from .profiles import EmbodimentProfile

CELL = 0.25  # m

_SQRT2 = math.sqrt(2.0)
_NEIGHBORS = (
    (-1, -1, _SQRT2), (-1, 0, 1.0), (-1, 1, _SQRT2),
    (0, -1, 1.0), (0, 1, 1.0),
    (1, -1, _SQRT2), (1, 0, 1.0), (1, 1, _SQRT2),
)


class NoPathError(RuntimeError):
    pass


@dataclass
class OccupancyGrid:
    blocked: np.ndarray  # (n, n) bool, index [ix, iy]
    cell: float
    n: int

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = min(max(int(x / self.cell), 0), self.n - 1)
        iy = min(max(int(y / self.cell), 0), self.n - 1)
        return ix, iy

    def center(self, ix: int, iy: int) -> tuple[float, float]:
        return ((ix + 0.5) * self.cell, (iy + 0.5) * self.cell)

    def is_free(self, x: float, y: float) -> bool:
        ix, iy = self.cell_of(x, y)
        return not self.blocked[ix, iy]


def build_grid(map_: Map, profile: EmbodimentProfile, inflation: float | None = None) -> OccupancyGrid:
    """Grid over the map bounds; blocked where a cell center falls within
    an inflated footprint of an obstacle that blocks this profile's height."""
    if inflation is None:
        inflation = profile.radius
    if inflation < profile.radius:
        raise ValueError("inflation must be at least the body radius")
    n = int(round(map_.width / CELL))
    xs = (np.arange(n) + 0.5) * CELL
    cx, cy = np.meshgrid(xs, xs, indexing="ij")
    blocked = (
        (cx < inflation) | (cx > map_.width - inflation)
        | (cy < inflation) | (cy > map_.height - inflation)
    )
    for o in map_.blocking(profile.height):
        blocked |= (np.abs(cx - o.cx) <= o.half_x + inflation) & (
            np.abs(cy - o.cy) <= o.half_y + inflation
        )
    return OccupancyGrid(blocked, CELL, n)


def dijkstra_path(grid: OccupancyGrid, start_cell: tuple[int, int], goal_cell: tuple[int, int]):
    """8-connected shortest path (list of cells) and its cost, or NoPathError."""
    n = grid.n
    blocked = grid.blocked
    if blocked[start_cell] or blocked[goal_cell]:
        raise NoPathError("start or goal cell is blocked")
    if start_cell == goal_cell:
        return [start_cell], 0.0

    def flat(c):
        return c[0] * n + c[1]

    dist = np.full((n, n), np.inf)
    dist[start_cell] = 0.0
    prev: dict[tuple[int, int], tuple[int, int]] = {}
    heap = [(0.0, flat(start_cell), start_cell)]
    done = np.zeros((n, n), dtype=bool)
    while heap:
        d, _, cell = heapq.heappop(heap)
        if done[cell]:
            continue
        done[cell] = True
        if cell == goal_cell:
            break
        ci, cj = cell
        for di, dj, w in _NEIGHBORS:
            a, b = ci + di, cj + dj
            if not (0 <= a < n and 0 <= b < n) or blocked[a, b] or done[a, b]:
                continue
            nd = d + w
            if nd < dist[a, b] - 1e-12:
                dist[a, b] = nd
                prev[(a, b)] = cell
                heapq.heappush(heap, (nd, flat((a, b)), (a, b)))
    if not done[goal_cell]:
        raise NoPathError("goal not reachable on the grid")
    path = [goal_cell]
    while path[-1] != start_cell:
        path.append(prev[path[-1]])
    path.reverse()
    return path, float(dist[goal_cell])


def _line_free(grid: OccupancyGrid, a: tuple[float, float], b: tuple[float, float]) -> bool:
    """Supercover check: every grid cell within half a cell of segment ab is free."""
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    steps = max(int(length / (grid.cell * 0.5)), 1)
    for k in range(steps + 1):
        t = k / steps
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        if not grid.is_free(x, y):
            return False
    return True


def smooth_path(grid: OccupancyGrid, points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Greedy corner cutting: from each point, jump to the farthest later
    point with a free line of sight."""
    if len(points) <= 2:
        return list(points)
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _line_free(grid, points[i], points[j]):
            j -= 1
        out.append(points[j])
        i = j
    return out


def plan_path(
    grid: OccupancyGrid,
    start: tuple[float, float],
    goal: tuple[float, float],
    smooth: bool = True,
) -> list[tuple[float, float]]:
    """World-coordinate waypoints from start to goal.

    The path runs through free cell centers; the exact start/goal positions
    are kept as the first/last waypoints.
    """
    sc = grid.cell_of(*start)
    gc = grid.cell_of(*goal)
    if sc == gc:
        return [tuple(goal)]
    cells, _ = dijkstra_path(grid, sc, gc)
    pts = [tuple(start)] + [grid.center(*c) for c in cells[1:-1]] + [tuple(goal)]
    if smooth:
        pts = smooth_path(grid, pts)
    return pts
