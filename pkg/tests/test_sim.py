"""Simulator, maps, and sensing: hand-geometry and recurrence oracles."""

import math

import numpy as np
import pytest

from crossnav import simulation as sim
from crossnav.mapgen import (
    BOUNDS,
    OVERHANG_CLEARANCE,
    Map,
    Obstacle,
    generate_map,
    load_map,
    save_map,
)
from crossnav.profiles import DEFAULT_PROFILES, profile_by_name
from crossnav.simulation import (
    DT,
    MAX_STEPS,
    N_RAYS,
    OBS_DIM,
    Env,
    SimState,
    batch_step,
    observe,
    raycast,
    reset,
    reward,
    step,
    wrap_angle,
)

WHEELED = profile_by_name("wheeled")
BIPED_L = profile_by_name("biped_large")
BIPED_S = profile_by_name("biped_small")


def empty_map():
    return Map(BOUNDS, BOUNDS, 1, 0, ())


def one_box(cx, cy, hx, hy, clearance=0.0):
    return Map(BOUNDS, BOUNDS, 1, 0, (Obstacle(cx, cy, hx, hy, clearance),))


# -- raycast --------------------------------------------------------------------


def test_raycast_empty_map_all_ones():
    # bounds are not sensed, so an empty map reads max range everywhere
    ranges = raycast(empty_map(), (1.0, 1.0, 0.7), WHEELED)
    assert ranges.shape == (N_RAYS,)
    assert np.array_equal(ranges, np.ones(N_RAYS))


def test_raycast_wall_ahead_hand_geometry():
    # tall wall with its near face 3 m ahead: ray i travels 3 / cos(angle_i)
    m = one_box(8.5, 10.0, 0.5, 9.0)
    ranges = raycast(m, (5.0, 10.0, 0.0), WHEELED)
    angles = np.linspace(-math.radians(60), math.radians(60), N_RAYS)
    expected = np.minimum(3.0 / np.cos(angles), 10.0) / 10.0
    assert np.allclose(ranges, expected, atol=1e-12)
    # the two central rays are the closest hits, just over 0.3 normalized
    assert ranges.min() == pytest.approx(0.3, abs=2e-4)


def test_raycast_overhang_visibility_depends_on_height():
    m = one_box(8.0, 10.0, 0.5, 0.5, clearance=OVERHANG_CLEARANCE)
    pose = (5.0, 10.0, 0.0)
    # biped_small (1.3 m) walks under a 1.5 m overhang: invisible to its sensor
    assert np.array_equal(raycast(m, pose, BIPED_S), np.ones(N_RAYS))
    # biped_large (1.8 m) cannot: the overhang reads as an obstacle
    assert raycast(m, pose, BIPED_L).min() < 1.0


def test_raycast_obstacle_behind_not_hit():
    m = one_box(2.0, 10.0, 0.5, 0.5)
    ranges = raycast(m, (5.0, 10.0, 0.0), WHEELED)  # facing +x, box at -x
    assert np.array_equal(ranges, np.ones(N_RAYS))


def test_observation_layout():
    st = SimState(5.0, 5.0, 0.0, 0.4, -0.2, 5.0, 8.0)
    obs = observe(empty_map(), st, WHEELED)
    assert obs.shape == (OBS_DIM,)
    assert obs[N_RAYS] == 0.4 and obs[N_RAYS + 1] == -0.2
    assert obs[N_RAYS + 2] == pytest.approx(0.3)  # 3 m away / 10
    assert obs[N_RAYS + 3] == pytest.approx(math.sin(math.pi / 2))  # goal at +y
    assert obs[N_RAYS + 4] == pytest.approx(math.cos(math.pi / 2), abs=1e-12)
    # distance saturates at 10 m
    far = SimState(1.0, 1.0, 0.0, 0.0, 0.0, 19.0, 19.0)
    assert observe(empty_map(), far, WHEELED)[N_RAYS + 2] == 1.0


# -- step dynamics ------------------------------------------------------------------


def test_step_clamps_commands_and_tracks():
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 15.0, 10.0)
    # wheeled: tau = 0.05 <= dt, so velocity snaps to the clamped command
    new, _ = step(st, (99.0, -99.0), WHEELED, empty_map())
    assert new.v == pytest.approx(WHEELED.v_max)
    assert new.omega == pytest.approx(-WHEELED.omega_max)
    # biped_large: alpha = dt / tau = 0.2 first-order lag
    new, _ = step(st, (1.0, 0.5), BIPED_L, empty_map())
    assert new.v == pytest.approx(0.2 * 1.0)
    assert new.omega == pytest.approx(0.2 * 0.5)


def test_step_integrates_with_prestep_heading():
    st = SimState(10.0, 10.0, math.pi / 2, 0.0, 0.0, 10.0, 15.0)
    new, _ = step(st, (1.0, 1.0), WHEELED, empty_map())
    assert new.x == pytest.approx(10.0)  # heading applied before the turn
    assert new.y == pytest.approx(10.0 + 1.0 * DT)
    assert new.heading == pytest.approx(math.pi / 2 + 1.0 * DT)


def test_step_sequence_matches_independent_recurrence():
    # [DERIVED] oracle: re-run the documented update rule step by step
    rng = np.random.default_rng(7)
    profile = BIPED_L
    st = SimState(10.0, 10.0, 0.3, 0.0, 0.0, 14.0, 12.0)
    v = w = 0.0
    x, y, h = st.x, st.y, st.heading
    for _ in range(20):
        cmd = (float(rng.uniform(-1, 2)), float(rng.uniform(-2, 2)))
        st, _ = step(st, cmd, profile, empty_map())
        cv, cw = profile.clamp(*cmd)
        alpha = min(DT / profile.tau, 1.0)
        v += (cv - v) * alpha
        w += (cw - w) * alpha
        x += v * math.cos(h) * DT
        y += v * math.sin(h) * DT
        h = wrap_angle(h + w * DT)
        assert st.v == pytest.approx(v, abs=1e-15)
        assert st.omega == pytest.approx(w, abs=1e-15)
        assert (st.x, st.y) == (pytest.approx(x, abs=1e-12), pytest.approx(y, abs=1e-12))
        assert st.heading == pytest.approx(h, abs=1e-12)


def test_fall_recurrence_oracle_biped_large():
    # [DERIVED] track |v * omega| > c_fall under the same first-order lag;
    # the sim must fall exactly when the counter first reaches k_fall
    profile = BIPED_L
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 2.0, 2.0)
    v = w = 0.0
    count = 0
    fell_at = None
    for t in range(1, 60):
        alpha = min(DT / profile.tau, 1.0)
        v += (1.2 - v) * alpha
        w += (0.8 - w) * alpha
        count = count + 1 if abs(v * w) > profile.c_fall else 0
        if fell_at is None and count >= profile.k_fall:
            fell_at = t
    assert fell_at is not None

    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 2.0, 2.0)
    for t in range(1, 60):
        st, res = step(st, (1.2, 0.8), profile, empty_map())
        if res.termination == "fell":
            assert t == fell_at
            break
    else:
        pytest.fail("simulator never fell")


def test_wheeled_never_falls():
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 2.0, 2.0)
    for _ in range(30):
        st, res = step(st, (1.5, 1.0), WHEELED, empty_map())
        assert res.termination in ("none", "timeout")
        assert st.fall_count == 0


def test_collision_with_box_and_bounds():
    m = one_box(11.0, 10.0, 0.3, 0.3)
    st = SimState(10.5, 10.0, 0.0, 0.0, 0.0, 5.0, 5.0)
    _, res = step(st, (1.5, 0.0), WHEELED, m)  # drives its body into the box
    assert res.termination == "collided"
    edge = SimState(0.35, 10.0, math.pi, 0.0, 0.0, 5.0, 5.0)
    _, res = step(edge, (1.5, 0.0), WHEELED, empty_map())
    assert res.termination == "collided"  # leaves the arena bounds


def test_collision_beats_reached():
    # new pose is simultaneously at the goal and in contact with a box
    m = one_box(10.5, 10.0, 0.2, 0.2)  # near face at x = 10.3
    st = SimState(9.995, 10.0, 0.0, 0.05, 0.0, 10.0, 10.0)
    new, res = step(st, (0.05, 0.0), WHEELED, m)
    assert new.goal_distance() <= sim.REACH_DIST and abs(new.v) <= sim.REACH_V
    assert res.termination == "collided"


def test_reached_requires_low_speed():
    st = SimState(10.0, 10.0, 0.0, 1.5, 0.0, 10.2, 10.0)
    _, res = step(st, (1.5, 0.0), WHEELED, empty_map())
    assert res.termination != "reached"  # inside 0.3 m but still moving
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 10.2, 10.0)
    _, res = step(st, (0.0, 0.0), WHEELED, empty_map())
    assert res.termination == "reached"


def test_timeout_at_step_cap():
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 15.0, 15.0, steps=MAX_STEPS - 1)
    _, res = step(st, (0.0, 0.0), WHEELED, empty_map())
    assert res.termination == "timeout"


def test_step_rejects_nonfinite_action():
    st = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 15.0, 15.0)
    with pytest.raises(ValueError):
        step(st, (math.nan, 0.0), WHEELED, empty_map())


# -- reward -----------------------------------------------------------------------


def test_reward_values_and_telescoping():
    a = SimState(10.0, 10.0, 0.0, 0.0, 0.0, 14.0, 10.0)
    b = SimState(11.0, 10.0, 0.0, 0.0, 0.0, 14.0, 10.0)
    assert reward(a, b, "none") == pytest.approx(1.0)  # 1 m of progress
    assert reward(a, b, "collided") == pytest.approx(1.0 - 10.0)
    assert reward(a, b, "fell") == pytest.approx(1.0 - 10.0)
    assert reward(a, b, "reached") == pytest.approx(1.0 + 10.0)

    # progress terms telescope: their sum equals d(start) - d(end)
    st = SimState(8.0, 8.0, 0.2, 0.0, 0.0, 12.0, 11.0)
    d0 = st.goal_distance()
    total = 0.0
    for _ in range(15):
        st, res = step(st, (1.0, 0.3), WHEELED, empty_map())
        total += res.reward
    assert total == pytest.approx(d0 - st.goal_distance(), abs=1e-12)


# -- batch step ----------------------------------------------------------------------


def test_batch_step_bitwise_matches_sequential():
    rng = np.random.default_rng(11)
    maps = [generate_map(1, s) for s in (1, 2, 3)]
    profiles = [WHEELED, BIPED_L, BIPED_S]
    states = [reset(m, p, np.random.default_rng(s)) for s, (m, p) in enumerate(zip(maps, profiles))]
    actions = [(float(rng.uniform(-1, 2)), float(rng.uniform(-2, 2))) for _ in range(3)]
    bs, br = batch_step(states, actions, profiles, maps)
    for i in range(3):
        ss, sr = step(states[i], actions[i], profiles[i], maps[i])
        assert ss == bs[i]
        assert np.array_equal(sr.observation, br[i].observation)
        assert sr.reward == br[i].reward and sr.termination == br[i].termination
    with pytest.raises(ValueError):
        batch_step(states, actions[:2], profiles, maps)


# -- reset ------------------------------------------------------------------------


def test_reset_contracts():
    m = generate_map(2, 5)
    for k in range(10):
        st = reset(m, BIPED_L, np.random.default_rng(k))
        d = st.goal_distance()
        assert 2.0 <= d <= 5.0
        assert st.v == 0.0 and st.omega == 0.0 and st.steps == 0
        assert not sim._collides(m, st.x, st.y, BIPED_L)
        assert not sim._collides(m, st.goal_x, st.goal_y, BIPED_L)


def test_reset_deterministic_in_seed():
    m = generate_map(3, 9)
    a = reset(m, WHEELED, np.random.default_rng(42))
    b = reset(m, WHEELED, np.random.default_rng(42))
    assert a == b


def test_env_episode_protocol():
    env = Env(generate_map(1, 3), WHEELED)
    with pytest.raises(RuntimeError):
        env.step((0.0, 0.0))  # no reset yet
    obs = env.reset(np.random.default_rng(0))
    assert obs.shape == (OBS_DIM,)
    while not env.done:
        env.step((0.0, 0.0))
    assert env.cause == "timeout"
    with pytest.raises(RuntimeError):
        env.step((0.0, 0.0))


# -- maps -------------------------------------------------------------------------


def test_map_tier_contracts():
    for seed in range(5):
        t1 = generate_map(1, seed)
        assert sum(o.area() for o in t1.obstacles) <= 0.15 * BOUNDS * BOUNDS
        assert all(o.clearance == 0.0 for o in t1.obstacles)
        for tier in (2, 4):
            m = generate_map(tier, seed)
            assert any(o.clearance == OVERHANG_CLEARANCE for o in m.obstacles)
        t3 = generate_map(3, seed)
        assert all(o.clearance == 0.0 for o in t3.obstacles)


def test_map_deterministic_and_round_trip(tmp_path):
    a = generate_map(4, 17)
    b = generate_map(4, 17)
    assert a == b
    save_map(tmp_path / "m.json", a)
    assert load_map(tmp_path / "m.json") == a


def test_map_rejects_bad_tier():
    with pytest.raises(ValueError):
        generate_map(5, 0)
