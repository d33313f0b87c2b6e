"""Residual actor/critic, GAE, and the PPO update."""

import math

import numpy as np
import pytest

from crossnav.autodiff import Var
from crossnav.basepolicy import BasePolicy, POLICY_STATE_DIM
from crossnav.layers import AdamState, gaussian_logprob
from crossnav.profiles import profile_by_name
from crossnav.residual import (
    INIT_LOG_STD,
    RES_STATE_DIM,
    Critic,
    PpoConfig,
    ResidualActor,
    RolloutBuffer,
    SCRATCH_STATE_DIM,
    compose_action,
    gae,
    ppo_update,
    residual_state,
    train_specialist,
)
from crossnav.simulation import OBS_DIM
from crossnav.worldmodel import WorldModel

RNG = np.random.default_rng(21)
WHEELED = profile_by_name("wheeled")


def test_residual_state_layout():
    p = RNG.standard_normal(POLICY_STATE_DIM)
    goal = np.array([0.7, 0.6, 0.8])  # (dist/10, sin, cos)
    rs = residual_state(p, goal)
    assert rs.shape == (RES_STATE_DIM,)
    assert np.array_equal(rs[:POLICY_STATE_DIM], p)
    assert np.array_equal(rs[POLICY_STATE_DIM:], [0.6, 0.8, 0.7])
    # the distance tail saturates at 1
    rs = residual_state(p, np.array([1.4, 0.0, 1.0]))
    assert rs[-1] == 1.0
    # batched layout matches
    ps = RNG.standard_normal((3, POLICY_STATE_DIM))
    gs = RNG.standard_normal((3, 3))
    batch = residual_state(ps, gs)
    assert batch.shape == (3, RES_STATE_DIM)
    assert np.array_equal(batch[1], residual_state(ps[1], gs[1]))


def test_compose_action_clamps():
    assert compose_action((1.0, 0.2), (1.0, 0.5), WHEELED) == (WHEELED.v_max, 0.7)
    assert compose_action((0.0, -0.8), (-0.5, -0.5), WHEELED) == (WHEELED.v_min, -WHEELED.omega_max)
    biped = profile_by_name("biped_large")
    assert compose_action((0.5, 0.0), (-1.0, 0.0), biped) == (0.0, 0.0)  # v floor 0


def test_zero_init_residual_is_identity():
    base = BasePolicy.init(0)
    actor = ResidualActor.init_from_base(base)
    states = RNG.standard_normal((1000, RES_STATE_DIM))
    assert np.array_equal(actor.mean(states), np.zeros((1000, 2)))
    assert np.array_equal(actor.log_std, np.full(2, INIT_LOG_STD))
    # composed action equals the clamped base action exactly
    for _ in range(20):
        a_base = RNG.standard_normal(2) * 2
        rs = RNG.standard_normal(RES_STATE_DIM)
        assert compose_action(a_base, actor.mean(rs), WHEELED) == WHEELED.clamp(*a_base)


def test_fresh_actor_also_starts_at_zero_output():
    # the scratch baseline consumes [wm latent; goal tail], not the policy state
    actor = ResidualActor.init_fresh(3)
    states = RNG.standard_normal((50, SCRATCH_STATE_DIM))
    assert np.array_equal(actor.mean(states), np.zeros((50, 2)))
    # but its hidden weights differ from the base head copy
    base = BasePolicy.init(0)
    copied = ResidualActor.init_from_base(base)
    assert not np.array_equal(actor.params["head.w0"].value, copied.params["head.w0"].value)


def test_actor_graph_forward_matches_numpy():
    base = BasePolicy.init(1)
    actor = ResidualActor.init_from_base(base)
    # perturb the output layer so the forward is non-trivial
    actor.params["head.w1"].value[:] = RNG.standard_normal((64, 2)) * 0.1
    x = RNG.standard_normal((5, RES_STATE_DIM))
    leaves = actor.params.leaves()
    assert np.array_equal(actor.mean_var(leaves, Var(x)).value, actor.mean(x))


def test_gae_matches_brute_force():
    # [DERIVED] brute-force recursion written independently of the library
    rng = np.random.default_rng(4)
    T = 40
    rewards = rng.standard_normal(T)
    values = rng.standard_normal(T)
    dones = (rng.random(T) < 0.15).astype(float)
    bootstrap = 0.37
    gamma, lam = 0.99, 0.95

    expected = np.zeros(T)
    for t in range(T):
        acc = 0.0
        coef = 1.0
        for k in range(t, T):
            nv = bootstrap if k == T - 1 else values[k + 1]
            delta = rewards[k] + gamma * nv * (1 - dones[k]) - values[k]
            acc += coef * delta
            if dones[k]:
                break
            coef *= gamma * lam
        expected[t] = acc

    adv, ret = gae(rewards, values, dones, bootstrap, gamma, lam)
    assert np.max(np.abs(adv - expected)) < 1e-12
    assert np.max(np.abs(ret - (expected + values))) < 1e-12


def test_gae_2d_matches_per_env():
    rng = np.random.default_rng(8)
    T, E = 20, 3
    rewards = rng.standard_normal((T, E))
    values = rng.standard_normal((T, E))
    dones = (rng.random((T, E)) < 0.2).astype(float)
    bootstrap = rng.standard_normal(E)
    adv, ret = gae(rewards, values, dones, bootstrap, 0.99, 0.95)
    for e in range(E):
        a1, r1 = gae(rewards[:, e], values[:, e], dones[:, e], bootstrap[e], 0.99, 0.95)
        assert np.allclose(adv[:, e], a1, atol=1e-15)
        assert np.allclose(ret[:, e], r1, atol=1e-15)
    with pytest.raises(ValueError):
        gae(rewards, values[:-1], dones, bootstrap, 0.99, 0.95)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=0.0)


def make_buffer(n, actor, critic, rng):
    states = rng.standard_normal((n, RES_STATE_DIM))
    actions = actor.mean(states) + 0.3 * rng.standard_normal((n, 2))
    logp = gaussian_logprob(actor.mean(states), actor.log_std, actions)
    adv = rng.standard_normal(n)
    returns = rng.standard_normal(n)
    return RolloutBuffer(states, states, actions, logp, adv, returns)


def test_ppo_update_runs_and_reports_stats():
    base = BasePolicy.init(0)
    actor = ResidualActor.init_from_base(base)
    critic = Critic.init(0)
    rng = np.random.default_rng(0)
    buf = make_buffer(128, actor, critic, rng)
    # one epoch over one minibatch: the stats reflect the pre-update params
    cfg = PpoConfig(minibatch=128, update_epochs=1)
    stats = ppo_update(buf, actor, critic, cfg, rng)
    for v in (stats.policy_loss, stats.value_loss, stats.entropy, stats.approx_kl,
              stats.clip_fraction):
        assert math.isfinite(v)
    # on-policy first pass: initial entropy is the closed form for log_std
    expected_ent = 2 * INIT_LOG_STD + (1 + math.log(2 * math.pi))
    assert stats.entropy == pytest.approx(expected_ent, rel=1e-6)


def test_ppo_zero_advantage_leaves_actor_unchanged():
    # with zero advantages and no entropy bonus the actor gets zero gradient
    base = BasePolicy.init(0)
    actor = ResidualActor.init_from_base(base)
    critic = Critic.init(0)
    rng = np.random.default_rng(1)
    buf = make_buffer(64, actor, critic, rng)
    buf.advantages = np.zeros(64)
    before = {n: actor.params[n].value.copy() for n in actor.params.names()}
    cfg = PpoConfig(minibatch=64, update_epochs=1, ent_coef=0.0)
    ppo_update(buf, actor, critic, cfg, rng)
    for n, v in before.items():
        assert np.array_equal(actor.params[n].value, v), n


def test_ppo_logprob_recompute_consistency():
    # the stored log-probs must match a recompute through the Var path
    base = BasePolicy.init(0)
    actor = ResidualActor.init_from_base(base)
    rng = np.random.default_rng(2)
    states = rng.standard_normal((32, RES_STATE_DIM))
    actions = actor.mean(states) + 0.3 * rng.standard_normal((32, 2))
    lp_np = gaussian_logprob(actor.mean(states), actor.log_std, actions)
    leaves = actor.params.leaves()
    lp_var = gaussian_logprob(
        actor.mean_var(leaves, Var(states)), leaves["log_std"], actions
    )
    assert np.max(np.abs(lp_np - lp_var.value)) < 1e-9


def test_critic_obs_variant_shapes():
    c = Critic.init(0, on_obs=True)
    assert c.value(RNG.standard_normal((4, OBS_DIM))).shape == (4,)
    c2 = Critic.init(0)
    assert c2.value(RNG.standard_normal(RES_STATE_DIM)).shape == ()


def test_train_specialist_deterministic(small_pipeline):
    wm = small_pipeline.load_wm()
    base = small_pipeline.load_il()
    cfg = PpoConfig(episodes=2, episodes_wheeled=2, n_envs=2, horizon=16,
                    eval_every=100, eval_trials=1)
    r1 = train_specialist(WHEELED, base, wm, cfg, seed=5, tiers=(1,))
    r2 = train_specialist(WHEELED, base, wm, cfg, seed=5, tiers=(1,))
    for n in r1.actor.params.names():
        assert np.array_equal(r1.actor.params[n].value, r2.actor.params[n].value)
    assert len(r1.curve) >= 1
