"""Procedural 2D navigation maps with height-attributed box obstacles.

Four difficulty tiers on a 20 m x 20 m floor:
  1. sparse low solid boxes
  2. rack rows, some elevated on legs (clearance 1.5 m: short robots pass under)
  3. office walls with doorways, all solid
  4. combined racks + walls + clutter, with at least one 1.5 m overhang

An obstacle with clearance 0 is solid from the ground; clearance c > 0
blocks only bodies taller than c. Generation is deterministic in
(tier, seed) and validated for connectivity with a conservative grid
flood fill (every obstacle treated as blocking, inflated by the largest
body radius).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

BOUNDS = 20.0  # square side, m
OVERHANG_CLEARANCE = 1.5  # m
_INFLATE = 0.40  # conservative inflation for the validity check, m
_CELL = 0.25


class MapGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    cx: float
    cy: float
    half_x: float
    half_y: float
    clearance: float  # 0 = solid from the ground

    def blocks(self, body_height: float) -> bool:
        return self.clearance < body_height

    def area(self) -> float:
        return 4.0 * self.half_x * self.half_y


@dataclass(frozen=True)
class Map:
    width: float
    height: float
    tier: int
    seed: int
    obstacles: tuple[Obstacle, ...]

    def blocking(self, body_height: float) -> tuple[Obstacle, ...]:
        return tuple(o for o in self.obstacles if o.blocks(body_height))


def _rand_box(rng, half_lo, half_hi, clearance=0.0, margin=1.2) -> Obstacle:
    hx = rng.uniform(half_lo, half_hi)
    hy = rng.uniform(half_lo, half_hi)
    cx = rng.uniform(margin + hx, BOUNDS - margin - hx)
    cy = rng.uniform(margin + hy, BOUNDS - margin - hy)
    return Obstacle(round(cx, 3), round(cy, 3), round(hx, 3), round(hy, 3), clearance)


def _rack(rng, cy, elevated: bool) -> Obstacle:
    hx = rng.uniform(2.2, 3.2)
    hy = rng.uniform(0.35, 0.5)
    cx = rng.uniform(2.0 + hx, BOUNDS - 2.0 - hx)
    clearance = OVERHANG_CLEARANCE if elevated else 0.0
    return Obstacle(round(cx, 3), round(cy + rng.uniform(-0.8, 0.8), 3), round(hx, 3), round(hy, 3), clearance)


def _wall_with_door(rng, vertical: bool) -> list[Obstacle]:
    pos = rng.uniform(6.0, 14.0)  # wall line coordinate
    gap_c = rng.uniform(4.0, 16.0)  # doorway center along the wall
    gap_h = 1.2  # doorway half-width
    ht = 0.15  # wall half-thickness
    lo_seg = (1.0, gap_c - gap_h)
    hi_seg = (gap_c + gap_h, 19.0)
    walls = []
    for a, b in (lo_seg, hi_seg):
        if b - a < 0.5:
            continue
        c, h = (a + b) / 2.0, (b - a) / 2.0
        if vertical:
            walls.append(Obstacle(round(pos, 3), round(c, 3), ht, round(h, 3), 0.0))
        else:
            walls.append(Obstacle(round(c, 3), round(pos, 3), round(h, 3), ht, 0.0))
    return walls


def _layout(tier: int, rng: np.random.Generator) -> list[Obstacle]:
    obs: list[Obstacle] = []
    if tier == 1:
        for _ in range(8):
            obs.append(_rand_box(rng, 0.3, 0.9))
    elif tier == 2:
        n_elevated = 0
        for i, cy in enumerate((5.0, 10.0, 15.0)):
            elevated = bool(rng.random() < 0.5)
            n_elevated += elevated
            obs.append(_rack(rng, cy, elevated))
        if n_elevated == 0:  # tier contract: at least one overhang
            r = obs[int(rng.integers(3))]
            obs[obs.index(r)] = Obstacle(r.cx, r.cy, r.half_x, r.half_y, OVERHANG_CLEARANCE)
        for _ in range(3):
            obs.append(_rand_box(rng, 0.3, 0.7))
    elif tier == 3:
        obs.extend(_wall_with_door(rng, vertical=True))
        obs.extend(_wall_with_door(rng, vertical=False))
        for _ in range(4):
            obs.append(_rand_box(rng, 0.3, 0.6))
    elif tier == 4:
        obs.append(_rack(rng, 5.5, elevated=True))
        obs.append(_rack(rng, 14.5, bool(rng.random() < 0.5)))
        obs.extend(_wall_with_door(rng, vertical=bool(rng.random() < 0.5)))
        for _ in range(4):
            obs.append(_rand_box(rng, 0.3, 0.7))
    else:
        raise ValueError(f"tier must be 1..4, got {tier}")
    return obs


def _conservative_grid(obstacles: list[Obstacle]) -> np.ndarray:
    n = int(round(BOUNDS / _CELL))
    xs = (np.arange(n) + 0.5) * _CELL
    cxg, cyg = np.meshgrid(xs, xs, indexing="ij")
    blocked = (cxg < _INFLATE) | (cxg > BOUNDS - _INFLATE) | (cyg < _INFLATE) | (cyg > BOUNDS - _INFLATE)
    for o in obstacles:
        blocked |= (
            (np.abs(cxg - o.cx) <= o.half_x + _INFLATE)
            & (np.abs(cyg - o.cy) <= o.half_y + _INFLATE)
        )
    return blocked


def _connected_ok(blocked: np.ndarray) -> bool:
    free = ~blocked
    n_free = int(free.sum())
    if n_free < 0.30 * free.size:
        return False
    # flood fill from the first free cell, 4-connected
    start = np.argwhere(free)
    if len(start) == 0:
        return False
    visited = np.zeros_like(free)
    stack = [tuple(start[0])]
    visited[start[0][0], start[0][1]] = True
    count = 0
    n = free.shape[0]
    while stack:
        i, j = stack.pop()
        count += 1
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < n and 0 <= b < n and free[a, b] and not visited[a, b]:
                visited[a, b] = True
                stack.append((a, b))
    return count >= 0.85 * n_free


def generate_map(tier: int, seed: int, max_attempts: int = 40) -> Map:
    """Deterministic map for (tier, seed); retries internally until the
    connectivity check passes, then raises MapGenerationError."""
    if tier not in (1, 2, 3, 4):
        raise ValueError(f"tier must be 1..4, got {tier}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([tier, seed, attempt]))
        obstacles = _layout(tier, rng)
        if tier == 1 and sum(o.area() for o in obstacles) > 0.15 * BOUNDS * BOUNDS:
            continue
        if tier in (2, 4) and not any(o.clearance == OVERHANG_CLEARANCE for o in obstacles):
            continue
        if _connected_ok(_conservative_grid(obstacles)):
            return Map(BOUNDS, BOUNDS, tier, seed, tuple(obstacles))
    raise MapGenerationError(f"no valid tier-{tier} map after {max_attempts} attempts (seed {seed})")


def save_map(path: str | Path, m: Map) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "bounds": [m.width, m.height],
                "tier": m.tier,
                "seed": m.seed,
                "obstacles": [asdict(o) for o in m.obstacles],
            },
            indent=2,
        )
    )


def load_map(path: str | Path) -> Map:
    raw = json.loads(Path(path).read_text())
    return Map(
        raw["bounds"][0],
        raw["bounds"][1],
        raw["tier"],
        raw["seed"],
        tuple(Obstacle(**o) for o in raw["obstacles"]),
    )
