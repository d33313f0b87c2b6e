"""Deterministic 2D navigation dynamics with embodiment-dependent perception.

One step (dt = 0.1 s, so the 256-step episode cap is 25.6 s):
  * commands clamp to the profile's velocity ranges
  * first-order tracking v += (v_cmd - v) * min(dt/tau, 1), same for omega
  * unicycle pose integration (position with the pre-step heading)
  * collision = body circle hits a blocking obstacle or leaves bounds
  * fall = |v * omega| > c_fall for k_fall consecutive steps
  * reached = within 0.3 m of the goal with |v| <= 0.05 and |omega| <= 0.1

Perception is a 32-ray planar range sensor (120 deg forward fov, 10 m max):
an obstacle blocks a ray iff its clearance is below the body height, i.e.
exactly when the robot cannot pass it.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from .mapgen import Map
from .planner import OccupancyGrid, build_grid
from .profiles import EmbodimentProfile

DT = 0.1
MAX_STEPS = 256
N_RAYS = 32
FOV = math.radians(120.0)
MAX_RANGE = 10.0
OBS_DIM = N_RAYS + 2 + 3  # ranges, (v, omega), (goal dist/10, sin, cos)

REACH_DIST = 0.3
REACH_V = 0.05
REACH_W = 0.1
K_PROGRESS = 1.0
TERMINAL_REWARD = 10.0

TERMINATIONS = ("none", "reached", "collided", "fell", "timeout")


class ResetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimState:
    x: float
    y: float
    heading: float
    v: float
    omega: float
    goal_x: float
    goal_y: float
    steps: int = 0
    fall_count: int = 0

    def goal_distance(self) -> float:
        return math.hypot(self.goal_x - self.x, self.goal_y - self.y)

    def goal_bearing(self) -> float:
        raw = math.atan2(self.goal_y - self.y, self.goal_x - self.x) - self.heading
        return wrap_angle(raw)


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    termination: str  # one of TERMINATIONS


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def raycast(map_: Map, pose: tuple[float, float, float], profile: EmbodimentProfile) -> np.ndarray:
    """Normalized ranges in [0, 1]; 1.0 means nothing blocking within 10 m.

    Map bounds are not sensed; only obstacles the body cannot pass under.
    """
    ox, oy, heading = pose
    angles = heading + np.linspace(-FOV / 2.0, FOV / 2.0, N_RAYS)
    dx = np.cos(angles)
    dy = np.sin(angles)
    t_hit = np.full(N_RAYS, MAX_RANGE)
    for o in map_.blocking(profile.height):
        xmin, xmax = o.cx - o.half_x, o.cx + o.half_x
        ymin, ymax = o.cy - o.half_y, o.cy + o.half_y
        with np.errstate(divide="ignore"):
            tx1 = np.where(dx != 0, (xmin - ox) / dx, -np.inf)
            tx2 = np.where(dx != 0, (xmax - ox) / dx, np.inf)
            ty1 = np.where(dy != 0, (ymin - oy) / dy, -np.inf)
            ty2 = np.where(dy != 0, (ymax - oy) / dy, np.inf)
        # rays parallel to a slab never intersect it unless the origin lies inside
        para_x = (dx == 0) & ((ox < xmin) | (ox > xmax))
        para_y = (dy == 0) & ((oy < ymin) | (oy > ymax))
        tmin = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
        tmax = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
        t = np.maximum(tmin, 0.0)
        hit = (tmax >= t) & ~para_x & ~para_y
        t_hit = np.where(hit, np.minimum(t_hit, t), t_hit)
    return t_hit / MAX_RANGE


def observe(map_: Map, state: SimState, profile: EmbodimentProfile) -> np.ndarray:
    """37-vector: 32 ranges, v, omega, goal distance (clipped/10), sin, cos."""
    ranges = raycast(map_, (state.x, state.y, state.heading), profile)
    d = min(state.goal_distance(), MAX_RANGE) / MAX_RANGE
    b = state.goal_bearing()
    return np.concatenate(
        [ranges, [state.v, state.omega, d, math.sin(b), math.cos(b)]]
    )


def _collides(map_: Map, x: float, y: float, profile: EmbodimentProfile) -> bool:
    r = profile.radius
    if x - r < 0 or y - r < 0 or x + r > map_.width or y + r > map_.height:
        return True
    for o in map_.blocking(profile.height):
        qx = max(abs(x - o.cx) - o.half_x, 0.0)
        qy = max(abs(y - o.cy) - o.half_y, 0.0)
        if qx * qx + qy * qy <= r * r:
            return True
    return False


def line_blocked(map_: Map, profile: EmbodimentProfile,
                 x0: float, y0: float, x1: float, y1: float) -> bool:
    """True if the straight segment (x0, y0) -> (x1, y1) clips a blocking
    obstacle inflated by the body radius (slab test per axis-aligned box)."""
    dx, dy = x1 - x0, y1 - y0
    for o in map_.blocking(profile.height):
        hx, hy = o.half_x + profile.radius, o.half_y + profile.radius
        t_lo, t_hi = 0.0, 1.0
        hit = True
        for p, d, lo, hi in ((x0, dx, o.cx - hx, o.cx + hx),
                             (y0, dy, o.cy - hy, o.cy + hy)):
            if abs(d) < 1e-12:
                if p < lo or p > hi:
                    hit = False
                    break
            else:
                ta, tb = (lo - p) / d, (hi - p) / d
                if ta > tb:
                    ta, tb = tb, ta
                t_lo, t_hi = max(t_lo, ta), min(t_hi, tb)
                if t_lo > t_hi:
                    hit = False
                    break
        if hit:
            return True
    return False


def reward(prev: SimState, new: SimState, termination: str) -> float:
    r = K_PROGRESS * (prev.goal_distance() - new.goal_distance())
    if termination in ("collided", "fell"):
        r -= TERMINAL_REWARD
    elif termination == "reached":
        r += TERMINAL_REWARD
    return r


def step(
    state: SimState,
    action: tuple[float, float],
    profile: EmbodimentProfile,
    map_: Map,
    dt: float = DT,
) -> tuple[SimState, StepResult]:
    v_cmd, w_cmd = float(action[0]), float(action[1])
    if not (math.isfinite(v_cmd) and math.isfinite(w_cmd)):
        raise ValueError(f"non-finite action ({v_cmd}, {w_cmd})")
    v_cmd, w_cmd = profile.clamp(v_cmd, w_cmd)

    alpha = min(dt / profile.tau, 1.0)
    v = state.v + (v_cmd - state.v) * alpha
    w = state.omega + (w_cmd - state.omega) * alpha

    x = state.x + v * math.cos(state.heading) * dt
    y = state.y + v * math.sin(state.heading) * dt
    heading = wrap_angle(state.heading + w * dt)

    fall_count = state.fall_count + 1 if (
        profile.c_fall is not None and abs(v * w) > profile.c_fall
    ) else 0

    new = SimState(
        x, y, heading, v, w, state.goal_x, state.goal_y,
        steps=state.steps + 1, fall_count=fall_count,
    )

    if _collides(map_, x, y, profile):
        term = "collided"
    elif profile.c_fall is not None and fall_count >= profile.k_fall:
        term = "fell"
    elif new.goal_distance() <= REACH_DIST and abs(v) <= REACH_V and abs(w) <= REACH_W:
        term = "reached"
    elif new.steps >= MAX_STEPS:
        term = "timeout"
    else:
        term = "none"

    obs = observe(map_, new, profile)
    return new, StepResult(obs, reward(state, new, term), term)


def batch_step(states, actions, profiles, maps, dt: float = DT):
    """Elementwise step over equal-length sequences; identical to sequential calls."""
    if not (len(states) == len(actions) == len(profiles) == len(maps)):
        raise ValueError("batch_step arrays must have equal length")
    out_states, out_results = [], []
    for s, a, p, m in zip(states, actions, profiles, maps):
        ns, res = step(s, a, p, m, dt)
        out_states.append(ns)
        out_results.append(res)
    return out_states, out_results


# -- reset --------------------------------------------------------------------


@functools.lru_cache(maxsize=512)
def grid_for(map_: Map, profile: EmbodimentProfile) -> OccupancyGrid:
    return build_grid(map_, profile)


@functools.lru_cache(maxsize=512)
def component_labels(map_: Map, profile: EmbodimentProfile) -> np.ndarray:
    """8-connected free-space component label per cell (-1 where blocked).

    Two cells share a label iff the grid planner can connect them, so
    reachability checks during reset are O(1) lookups.
    """
    grid = grid_for(map_, profile)
    n = grid.n
    labels = np.full((n, n), -1, dtype=np.int32)
    free = ~grid.blocked
    next_label = 0
    for si in range(n):
        for sj in range(n):
            if not free[si, sj] or labels[si, sj] >= 0:
                continue
            stack = [(si, sj)]
            labels[si, sj] = next_label
            while stack:
                i, j = stack.pop()
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        a, b = i + di, j + dj
                        if 0 <= a < n and 0 <= b < n and free[a, b] and labels[a, b] < 0:
                            labels[a, b] = next_label
                            stack.append((a, b))
            next_label += 1
    return labels


def reset(
    map_: Map,
    profile: EmbodimentProfile,
    rng: np.random.Generator,
    min_goal_dist: float = 2.0,
    max_goal_dist: float = 5.0,
    max_tries: int = 80,
) -> SimState:
    """Collision-free start with uniform heading and a planner-reachable goal
    at Euclidean distance uniform in [min_goal_dist, max_goal_dist]."""
    grid = grid_for(map_, profile)
    labels = component_labels(map_, profile)
    r = profile.radius
    margin = 0.1  # keep sampled poses a little clear of obstacle edges
    fat = EmbodimentProfile(
        profile.id, profile.name, profile.v_min, profile.v_max, profile.omega_max,
        r + margin, profile.height, profile.tau, profile.c_fall, profile.k_fall,
    )
    for _ in range(max_tries):
        x = rng.uniform(r, map_.width - r)
        y = rng.uniform(r, map_.height - r)
        if not grid.is_free(x, y) or _collides(map_, x, y, fat):
            continue
        heading = rng.uniform(-math.pi, math.pi)
        start_label = labels[grid.cell_of(x, y)]
        for _ in range(60):
            d = rng.uniform(min_goal_dist, max_goal_dist)
            a = rng.uniform(-math.pi, math.pi)
            gx, gy = x + d * math.cos(a), y + d * math.sin(a)
            if not (r <= gx <= map_.width - r and r <= gy <= map_.height - r):
                continue
            if not grid.is_free(gx, gy) or _collides(map_, gx, gy, fat):
                continue
            if labels[grid.cell_of(gx, gy)] != start_label:
                continue
            return SimState(x, y, heading, 0.0, 0.0, gx, gy)
    raise ResetError(
        f"could not sample a valid start/goal on tier-{map_.tier} map seed {map_.seed}"
    )


class Env:
    """Single-owner mutable episode wrapper around the functional step/reset."""

    def __init__(self, map_: Map, profile: EmbodimentProfile, dt: float = DT):
        self.map = map_
        self.profile = profile
        self.dt = dt
        self.state: SimState | None = None
        self.done = True
        self.cause = "none"

    def reset(self, rng: np.random.Generator, min_goal_dist: float = 2.0, max_goal_dist: float = 5.0) -> np.ndarray:
        self.state = reset(self.map, self.profile, rng, min_goal_dist, max_goal_dist)
        self.done = False
        self.cause = "none"
        return observe(self.map, self.state, self.profile)

    def step(self, action) -> StepResult:
        if self.done or self.state is None:
            raise RuntimeError("step called on a finished episode")
        self.state, result = step(self.state, action, self.profile, self.map, self.dt)
        if result.termination != "none":
            self.done = True
            self.cause = result.termination
        return result
