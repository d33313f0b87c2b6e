"""Classical teacher for the wheeled embodiment: grid planning + pursuit.

Demonstrations are only ever collected on the wheeled robot; the learned
stages must transfer that experience to the other embodiments.

Trajectory files are JSON lines, one record per frame:
    {"ep": int, "t": int, "obs": [37 floats], "act": [v, omega],
     "rew": float, "done": null | "reached" | "collided" | "fell" | "timeout"}
Observation layout: 32 ray ranges, v, omega, goal distance (clipped to
10 m, /10), sin(bearing), cos(bearing). A sidecar "<path>.meta.json"
records per-episode seeds so episodes can be replayed bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simulation as sim
from .mapgen import Map, generate_map
from .planner import NoPathError, build_grid, plan_path
from .profiles import EmbodimentProfile, profile_by_name

LOOKAHEAD = 0.8  # m along the path
TURN_GAIN = 2.0
# exploration noise (sigma_v m/s, sigma_omega rad/s) injected into executed
# demo commands; see run_teacher_episode
DEMO_ACTION_NOISE = (0.1, 0.15)
STOP_RADIUS = 0.5  # m, linear slow-down zone around the final waypoint


class DemoGenerationError(RuntimeError):
    pass


line_blocked = sim.line_blocked


def pursuit_control(
    pose: tuple[float, float, float],
    path: list[tuple[float, float]],
    profile: EmbodimentProfile,
) -> tuple[float, float]:
    """Velocity command chasing the point LOOKAHEAD m along the path.

    omega = clamp(2 * bearing error); v = v_max * max(0, cos(bearing error)),
    scaled down linearly within STOP_RADIUS of the final waypoint and zeroed
    inside the goal-reached gate.
    """
    if not path:
        raise ValueError("pursuit_control needs a non-empty path")
    x, y, heading = pose
    end = path[-1]
    dist_end = math.hypot(end[0] - x, end[1] - y)
    if dist_end <= sim.REACH_DIST:
        return 0.0, 0.0

    target = _lookahead_point((x, y), path, LOOKAHEAD)
    err = sim.wrap_angle(math.atan2(target[1] - y, target[0] - x) - heading)
    omega = min(max(TURN_GAIN * err, -profile.omega_max), profile.omega_max)
    v = profile.v_max * max(0.0, math.cos(err))
    if dist_end <= STOP_RADIUS:
        v *= dist_end / STOP_RADIUS
    v = min(max(v, profile.v_min), profile.v_max)
    return v, omega


def _lookahead_point(pos, path, lookahead):
    if len(path) == 1:
        return path[0]
    pts = np.asarray(path)
    segs = pts[1:] - pts[:-1]
    seg_len = np.hypot(segs[:, 0], segs[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    # arclength of the closest point on the polyline to pos
    p = np.asarray(pos)
    best_s, best_d = 0.0, np.inf
    for i in range(len(segs)):
        if seg_len[i] < 1e-12:
            continue
        t = np.clip(np.dot(p - pts[i], segs[i]) / seg_len[i] ** 2, 0.0, 1.0)
        q = pts[i] + t * segs[i]
        d = np.hypot(*(p - q))
        if d < best_d:
            best_d = d
            best_s = cum[i] + t * seg_len[i]
    s = min(best_s + lookahead, cum[-1])
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(segs) - 1)
    t = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
    return tuple(pts[i] + t * segs[i])


class TeacherPolicy:
    """Closed-loop planner + pursuit controller. Wheeled-only by construction."""

    def __init__(self, profile: EmbodimentProfile | None = None):
        self.profile = profile or profile_by_name("wheeled")
        self.path: list[tuple[float, float]] | None = None

    def reset(self, env: sim.Env) -> None:
        state = env.state
        start = (state.x, state.y)
        goal = (state.goal_x, state.goal_y)
        # plan with extra clearance so corner-cut paths keep a margin;
        # fall back to exact-radius inflation if the fat grid disconnects
        try:
            grid = build_grid(env.map, self.profile, inflation=self.profile.radius + 0.12)
            self.path = plan_path(grid, start, goal)
        except NoPathError:
            grid = sim.grid_for(env.map, self.profile)
            self.path = plan_path(grid, start, goal)

    def act(self, obs: np.ndarray, env: sim.Env) -> tuple[float, float]:
        if self.path is None:
            raise NoPathError("TeacherPolicy.reset was not called")
        s = env.state
        return pursuit_control((s.x, s.y, s.heading), self.path, self.profile)


def _detours_left(env: sim.Env, profile: EmbodimentProfile) -> bool:
    """True if the planned path around the blockage swings left of the
    straight start->goal line. Blocked demos keep a single detour side so
    the cloned policy learns one committed maneuver instead of averaging
    mirror-image turns into driving straight at the obstacle."""
    s = env.state
    probe = TeacherPolicy(profile)
    try:
        probe.reset(env)
    except NoPathError:
        return False
    dx, dy = s.goal_x - s.x, s.goal_y - s.y
    side = sum(dx * (py - s.y) - dy * (px - s.x) for px, py in probe.path)
    return side > 0.0


@dataclass
class DemoEpisode:
    obs: np.ndarray  # (T, 37)
    act: np.ndarray  # (T, 2)
    rew: np.ndarray  # (T,)
    cause: str
    tier: int
    map_seed: int
    reset_seed: list[int]
    goal_range: tuple[float, float] = (2.0, 5.0)
    action_noise: tuple[float, float] = (0.0, 0.0)
    require_blocked: bool = False


@dataclass
class DemoDataset:
    episodes: list[DemoEpisode]
    seed: int
    profile_name: str

    def n_frames(self) -> int:
        return sum(len(e.obs) for e in self.episodes)

    def success_rate(self, tiers=None) -> float:
        eps = [e for e in self.episodes if tiers is None or e.tier in tiers]
        if not eps:
            return 0.0
        return sum(e.cause == "reached" for e in eps) / len(eps)


def run_teacher_episode(
    map_: Map,
    profile: EmbodimentProfile,
    reset_rng: np.random.Generator,
    goal_range: tuple[float, float] = (2.0, 5.0),
    action_noise: tuple[float, float] = (0.0, 0.0),
    require_blocked: bool = False,
):
    """One closed-loop teacher episode; returns (obs, act, rew, cause) arrays.

    With nonzero action_noise the executed (and stored) command is the
    teacher's output plus clamped Gaussian noise drawn from reset_rng. The
    pursuit controller recomputes from the perturbed state each step, so the
    stored actions stay expert corrections; the noise decorrelates commands
    from the current velocity, which cloned policies otherwise latch onto.

    With require_blocked the reset is redrawn (from the same rng, so replays
    stay bitwise) until the straight start->goal segment clips an obstacle:
    these episodes demonstrate the detour from exactly the states where a
    goal-pulled policy would otherwise drive into the obstacle. Because such
    starts are deliberately adversarial, a failed attempt is retried with a
    fresh reset (up to 5 whole-episode attempts) so the dataset keeps expert
    detours rather than crash trajectories.
    """
    for attempt in range(5):
        env = sim.Env(map_, profile)
        obs = env.reset(reset_rng, min_goal_dist=goal_range[0],
                        max_goal_dist=goal_range[1])
        if require_blocked:
            for _ in range(40):
                s = env.state
                if (line_blocked(map_, profile, s.x, s.y, s.goal_x, s.goal_y)
                        and _detours_left(env, profile)):
                    break
                obs = env.reset(reset_rng, min_goal_dist=goal_range[0],
                                max_goal_dist=goal_range[1])
            # face (roughly) the blocked goal: the closed-loop failure state
            # is "heading at the obstacle with the goal behind it", and the
            # cloned policy only learns the turn-away if demos start there
            s = env.state
            aim = math.atan2(s.goal_y - s.y, s.goal_x - s.x)
            heading = sim.wrap_angle(aim + 0.5 * reset_rng.standard_normal())
            env.state = sim.SimState(s.x, s.y, heading, 0.0, 0.0,
                                     s.goal_x, s.goal_y)
            obs = sim.observe(map_, env.state, profile)
        teacher = TeacherPolicy(profile)
        teacher.reset(env)
        all_obs, all_act, all_rew = [], [], []
        cause = "timeout"
        while not env.done:
            a = teacher.act(obs, env)
            if action_noise != (0.0, 0.0):
                a = profile.clamp(
                    a[0] + action_noise[0] * reset_rng.standard_normal(),
                    a[1] + action_noise[1] * reset_rng.standard_normal(),
                )
            all_obs.append(obs)
            all_act.append(np.asarray(a, dtype=np.float64))
            result = env.step(a)
            all_rew.append(result.reward)
            obs = result.observation
            cause = result.termination
        if not require_blocked or cause == "reached":
            break
    return np.asarray(all_obs), np.asarray(all_act), np.asarray(all_rew), cause


def generate_demos(
    n_episodes: int = 500,
    tiers: tuple[int, ...] = (1, 2, 3, 4),
    seed: int = 0,
    min_tier12_sr: float = 0.9,
    max_regens: int = 3,
) -> DemoDataset:
    """Teacher demonstrations on the wheeled embodiment, cycling the tier mix.

    Regenerates with a shifted seed if the teacher's tier-1/2 success rate
    falls below the gate; raises with per-tier stats if that persists.
    """
    profile = profile_by_name("wheeled")
    last_stats = {}
    for regen in range(max_regens):
        eff_seed = seed + 1000003 * regen
        episodes = []
        for i in range(n_episodes):
            tier = tiers[i % len(tiers)]
            map_seed = eff_seed * 100000 + i
            map_ = generate_map(tier, map_seed)
            reset_seed = [eff_seed, i, 1]
            rng = np.random.default_rng(np.random.SeedSequence(reset_seed))
            # every other episode starts close to the goal: without these
            # frames the cloned policy never sees "at rest near the goal"
            # states and learns to park short of the reach gate
            goal_range = (0.5, 2.5) if i % 2 == 1 else (2.0, 5.0)
            # the first-tier long-range slots start with an obstacle across
            # the straight line to the goal, so the dataset teaches the
            # detour response instead of letting the goal pull dominate;
            # box tiers only: the teacher is unreliable when forced into
            # blocked starts on the narrow-doorway layouts
            require_blocked = i % 4 == 0
            obs, act, rew, cause = run_teacher_episode(
                map_, profile, rng, goal_range, action_noise=DEMO_ACTION_NOISE,
                require_blocked=require_blocked,
            )
            episodes.append(
                DemoEpisode(obs, act, rew, cause, tier, map_seed, reset_seed,
                            goal_range, DEMO_ACTION_NOISE, require_blocked)
            )
        ds = DemoDataset(episodes, eff_seed, profile.name)
        sr12 = ds.success_rate(tiers={1, 2})
        last_stats = {t: ds.success_rate(tiers={t}) for t in sorted(set(tiers))}
        if sr12 >= min_tier12_sr:
            return ds
    raise DemoGenerationError(
        f"teacher success gate not met after {max_regens} regenerations; "
        f"per-tier SR: {last_stats}"
    )


def save_demos(path: str | Path, ds: DemoDataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for ep_idx, ep in enumerate(ds.episodes):
            T = len(ep.obs)
            for t in range(T):
                rec = {
                    "ep": ep_idx,
                    "t": t,
                    "obs": ep.obs[t].tolist(),
                    "act": ep.act[t].tolist(),
                    "rew": float(ep.rew[t]),
                    "done": ep.cause if t == T - 1 else None,
                }
                f.write(json.dumps(rec) + "\n")
    meta = {
        "seed": ds.seed,
        "profile": ds.profile_name,
        "episodes": [
            {"tier": ep.tier, "map_seed": ep.map_seed, "reset_seed": ep.reset_seed,
             "cause": ep.cause, "goal_range": list(ep.goal_range),
             "action_noise": list(ep.action_noise),
             "require_blocked": ep.require_blocked}
            for ep in ds.episodes
        ],
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta))


def load_demos(path: str | Path) -> DemoDataset:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    per_ep: dict[int, list[dict]] = {}
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            per_ep.setdefault(rec["ep"], []).append(rec)
    episodes = []
    for ep_idx in sorted(per_ep):
        frames = sorted(per_ep[ep_idx], key=lambda r: r["t"])
        m = meta["episodes"][ep_idx]
        episodes.append(
            DemoEpisode(
                np.asarray([r["obs"] for r in frames]),
                np.asarray([r["act"] for r in frames]),
                np.asarray([r["rew"] for r in frames]),
                m["cause"],
                m["tier"],
                m["map_seed"],
                m["reset_seed"],
                tuple(m.get("goal_range", (2.0, 5.0))),
                tuple(m.get("action_noise", (0.0, 0.0))),
                bool(m.get("require_blocked", False)),
            )
        )
    return DemoDataset(episodes, meta["seed"], meta["profile"])
