"""Per-embodiment residual PPO on top of the frozen base policy.

The residual actor sees the base policy state augmented with goal heading
and distance (131-d). It starts as an exact zero correction: its input
projection is identity on the policy-state dims (zeros on the augmented
tail), its hidden layer is copied from the base action head, and its output
layer is zero-initialized, so before the first update the composed policy
equals the clamped base policy everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import simulation as sim
from .autodiff import Parameter, ParameterSet, Var
from .basepolicy import BasePolicy, POLICY_STATE_DIM, goal_features
from .layers import (
    AdamState,
    MlpSpec,
    adam_step,
    clip_grad_norm,
    gaussian_logprob,
    init_mlp,
    mlp_forward,
    mlp_np,
)
from .mapgen import generate_map
from .profiles import EmbodimentProfile
from .simulation import OBS_DIM, Env, line_blocked
from .worldmodel import ACTION_DIM, LATENT_DIM, WorldModel

AUG_DIM = 3  # goal bearing sin, cos, distance/10 clipped to 1
RES_STATE_DIM = POLICY_STATE_DIM + AUG_DIM  # 131
# the from-scratch baseline sees the raw world-model latent plus the goal
# tail: it must not inherit the imitation-trained route/fusion encoding
SCRATCH_STATE_DIM = LATENT_DIM + AUG_DIM  # 67
INIT_LOG_STD = math.log(0.3)

CRITIC_SPEC = MlpSpec((RES_STATE_DIM, 128, 64, 1))
CRITIC_OBS_SPEC = MlpSpec((OBS_DIM, 128, 64, 1))
ACTOR_HIDDEN_SPEC = MlpSpec((POLICY_STATE_DIM, 64, ACTION_DIM))  # matches the base head


def residual_state(p: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """[policy state; sin(bearing); cos(bearing); min(distance/10, 1)].

    `goal` uses the observation layout (distance/10, sin, cos).
    """
    p = np.asarray(p, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    tail = np.stack(
        [goal[..., 1], goal[..., 2], np.minimum(goal[..., 0], 1.0)], axis=-1
    )
    return np.concatenate([p, tail], axis=-1)


def scratch_state(latent: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """[wm latent; goal tail] for the from-scratch baseline (no IL features)."""
    latent = np.asarray(latent, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    tail = np.stack(
        [goal[..., 1], goal[..., 2], np.minimum(goal[..., 0], 1.0)], axis=-1
    )
    return np.concatenate([latent, tail], axis=-1)


def compose_action(base, res, profile: EmbodimentProfile):
    """Elementwise sum, then clamp to the profile's command ranges."""
    v = float(base[0]) + float(res[0])
    w = float(base[1]) + float(res[1])
    return profile.clamp(v, w)


class ResidualActor:
    """Gaussian residual policy: mean MLP plus state-independent log-std."""

    def __init__(self, params: ParameterSet):
        self.params = params

    @classmethod
    def init_from_base(cls, base: BasePolicy) -> "ResidualActor":
        ps = ParameterSet()
        proj = np.zeros((RES_STATE_DIM, POLICY_STATE_DIM))
        proj[:POLICY_STATE_DIM] = np.eye(POLICY_STATE_DIM)
        ps.add(Parameter("proj.w", proj))
        ps.add(Parameter("head.w0", base.params["head.w0"].value.copy()))
        ps.add(Parameter("head.b0", base.params["head.b0"].value.copy()))
        ps.add(Parameter("head.w1", np.zeros((64, ACTION_DIM))))
        ps.add(Parameter("head.b1", np.zeros(ACTION_DIM)))
        ps.add(Parameter("log_std", np.full(ACTION_DIM, INIT_LOG_STD)))
        return cls(ps)

    @classmethod
    def init_fresh(cls, seed: int) -> "ResidualActor":
        """Random weights, zero output: used by the from-scratch baseline.

        Input is the scratch state [wm latent; goal tail], so the projection
        is a randomly initialized trainable layer instead of the identity
        pad over the imitation-trained policy state.
        """
        rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
        ps = ParameterSet()
        proj = rng.standard_normal((SCRATCH_STATE_DIM, POLICY_STATE_DIM))
        proj *= 1.0 / math.sqrt(SCRATCH_STATE_DIM)
        ps.add(Parameter("proj.w", proj))
        hidden = init_mlp(ACTOR_HIDDEN_SPEC, "head", rng)
        ps.add(Parameter("head.w0", hidden["head.w0"].value))
        ps.add(Parameter("head.b0", hidden["head.b0"].value))
        ps.add(Parameter("head.w1", np.zeros((64, ACTION_DIM))))
        ps.add(Parameter("head.b1", np.zeros(ACTION_DIM)))
        ps.add(Parameter("log_std", np.full(ACTION_DIM, INIT_LOG_STD)))
        return cls(ps)

    def mean(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64) @ self.params["proj.w"].value
        h = np.tanh(h @ self.params["head.w0"].value + self.params["head.b0"].value)
        return h @ self.params["head.w1"].value + self.params["head.b1"].value

    def mean_var(self, leaves: dict[str, Var], x: Var) -> Var:
        h = x @ leaves["proj.w"]
        h = ad.tanh(h @ leaves["head.w0"] + leaves["head.b0"])
        return h @ leaves["head.w1"] + leaves["head.b1"]

    @property
    def log_std(self) -> np.ndarray:
        return self.params["log_std"].value


class Critic:
    def __init__(self, params: ParameterSet, on_obs: bool = False,
                 in_dim: int | None = None):
        self.params = params
        self.on_obs = on_obs
        if on_obs:
            self.spec = CRITIC_OBS_SPEC
        elif in_dim is None:
            self.spec = CRITIC_SPEC
        else:
            self.spec = MlpSpec((in_dim,) + CRITIC_SPEC.widths[1:])

    @classmethod
    def init(cls, seed: int, on_obs: bool = False, in_dim: int | None = None) -> "Critic":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 32]))
        if on_obs:
            spec = CRITIC_OBS_SPEC
        elif in_dim is None:
            spec = CRITIC_SPEC
        else:
            spec = MlpSpec((in_dim,) + CRITIC_SPEC.widths[1:])
        return cls(init_mlp(spec, "critic", rng), on_obs, in_dim)

    def value(self, x: np.ndarray) -> np.ndarray:
        return mlp_np(self.spec, self.params, "critic", np.asarray(x, dtype=np.float64))[..., 0]

    def value_var(self, leaves: dict[str, Var], x: Var) -> Var:
        return mlp_forward(self.spec, leaves, "critic", x)[..., 0]


# -- GAE ------------------------------------------------------------------------


def gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Generalized advantage estimation over the leading time axis.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1};  returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("gae inputs must have equal shapes")
    T = len(rewards)
    adv = np.zeros_like(rewards)
    next_adv = 0.0
    next_val = np.asarray(bootstrap, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_val * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[t] = next_adv
        next_val = values[t]
    return adv, adv + values


# -- PPO --------------------------------------------------------------------------


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    update_epochs: int = 4
    minibatch: int = 256
    horizon: int = 128
    n_envs: int = 16
    ent_coef: float = 0.005
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    episodes: int = 1000
    episodes_wheeled: int = 300
    eval_every: int = 100  # episodes between SR evaluations
    eval_trials: int = 20

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


@dataclass
class RolloutBuffer:
    states: np.ndarray  # (N, RES_STATE_DIM)
    critic_in: np.ndarray  # (N, dim of the critic input)
    actions: np.ndarray  # (N, 2) sampled residual actions
    log_probs: np.ndarray  # (N,)
    advantages: np.ndarray  # (N,) normalized in ppo_update
    returns: np.ndarray  # (N,)


@dataclass
class PpoStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def ppo_update(buffer: RolloutBuffer, actor: ResidualActor, critic: Critic,
               cfg: PpoConfig, rng: np.random.Generator,
               optimizer: AdamState | None = None) -> PpoStats:
    """Clipped-surrogate PPO epochs over minibatches of the buffer."""
    n = len(buffer.actions)
    adv = buffer.advantages
    mu, sd = adv.mean(), adv.std()
    adv = (adv - mu) / max(sd, 1e-8)

    merged = ParameterSet(list(actor.params) + list(critic.params))
    stats_acc = np.zeros(5)
    n_batches = 0
    opt = optimizer if optimizer is not None else AdamState(lr=cfg.lr)
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.minibatch):
            idx = order[i : i + cfg.minibatch]
            la = actor.params.leaves()
            lc = critic.params.leaves()
            mean = actor.mean_var(la, Var(buffer.states[idx]))
            logp = gaussian_logprob(mean, la["log_std"], buffer.actions[idx])
            ratio = ad.exp(logp - buffer.log_probs[idx])
            surr = ad.minimum(
                ratio * adv[idx],
                ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv[idx],
            )
            policy_loss = -ad.vmean(surr)
            value = critic.value_var(lc, Var(buffer.critic_in[idx]))
            value_loss = ad.vmean(ad.square(value - buffer.returns[idx]))
            entropy = ad.vsum(la["log_std"]) + 0.5 * ACTION_DIM * (1.0 + math.log(2 * math.pi))
            loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
            if not np.isfinite(loss.value):
                raise ad.NumericError(
                    f"non-finite PPO loss (policy={policy_loss.value}, value={value_loss.value})"
                )
            ad.backward(loss)
            actor.params.collect_grads(la)
            critic.params.collect_grads(lc)
            clip_grad_norm(merged, cfg.max_grad_norm)
            adam_step(merged, opt)
            stats_acc += (
                float(policy_loss.value),
                float(value_loss.value),
                float(entropy.value),
                float(np.mean(buffer.log_probs[idx] - logp.value)),
                float(np.mean(np.abs(ratio.value - 1.0) > cfg.clip_eps)),
            )
            n_batches += 1
    s = stats_acc / n_batches
    return PpoStats(s[0], s[1], s[2], s[3], s[4])


# -- training loop -----------------------------------------------------------------


@dataclass
class CurvePoint:
    episode: int
    mean_return: float
    eval_sr: float
    clip_fraction: float
    kl: float


@dataclass
class SpecialistResult:
    actor: ResidualActor
    critic: Critic
    curve: list[CurvePoint] = field(default_factory=list)


class _EnvSlot:
    """One parallel environment plus its recurrent pipeline state."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.env: Env | None = None
        self.obs: np.ndarray | None = None
        self.latent: np.ndarray | None = None
        self.a_prev = np.zeros(ACTION_DIM)
        self.ep_return = 0.0


# fraction of training resets redrawn until an obstacle blocks the straight
# start->goal line: standard resets only rarely present the detour problem,
# so without this bias the policy never gets enough pressure to learn it
BLOCKED_RESET_FRAC = 0.3


def _respawn(slot: _EnvSlot, profile, wm: WorldModel, tiers, min_goal: float):
    tier = int(tiers[slot.rng.integers(len(tiers))])
    map_seed = int(slot.rng.integers(2**31))
    slot.env = Env(generate_map(tier, map_seed), profile)
    slot.obs = slot.env.reset(slot.rng, min_goal_dist=min_goal)
    if slot.rng.random() < BLOCKED_RESET_FRAC:
        for _ in range(40):
            s = slot.env.state
            if line_blocked(slot.env.map, profile, s.x, s.y, s.goal_x, s.goal_y):
                break
            slot.obs = slot.env.reset(slot.rng, min_goal_dist=min_goal)
    slot.a_prev = np.zeros(ACTION_DIM)
    slot.latent = wm.step(wm.initial_latent(), slot.a_prev, slot.obs)
    slot.ep_return = 0.0


def train_specialist(
    profile: EmbodimentProfile,
    base: BasePolicy,
    wm: WorldModel,
    cfg: PpoConfig | None = None,
    seed: int = 0,
    curriculum: bool = False,
    critic_on_obs: bool = False,
    from_scratch: bool = False,
    tiers: tuple[int, ...] = (1, 2, 3, 4),
) -> SpecialistResult:
    """Residual PPO over parallel mixed-tier environments.

    The base policy and world model are frozen (read-only); episode resets
    clear the latent. With from_scratch=True the base action is forced to
    (0, 0) and the actor starts from fresh hidden weights.
    """
    cfg = cfg or PpoConfig()
    budget = cfg.episodes_wheeled if profile.name == "wheeled" else cfg.episodes
    state_dim = SCRATCH_STATE_DIM if from_scratch else RES_STATE_DIM
    if from_scratch:
        actor = ResidualActor.init_fresh(seed)
        critic = Critic.init(seed, on_obs=critic_on_obs, in_dim=state_dim)
    else:
        actor = ResidualActor.init_from_base(base)
        critic = Critic.init(seed, on_obs=critic_on_obs)
    optimizer = AdamState(lr=cfg.lr)
    update_rng = np.random.default_rng(np.random.SeedSequence([seed, 33]))
    eval_rng_seed = [seed, 34]
    curriculum_rng = np.random.default_rng(np.random.SeedSequence([seed, 36]))

    slots = [
        _EnvSlot(np.random.default_rng(np.random.SeedSequence([seed, 35, i])))
        for i in range(cfg.n_envs)
    ]

    def min_goal(episodes_done: int) -> float:
        # ramps the probability of enforcing the 2 m minimum goal distance
        # from 0 to 1 over the first half of the episode budget
        if not curriculum:
            return 2.0
        ramp = min(1.0, episodes_done / max(1.0, 0.5 * budget))
        return 2.0 if curriculum_rng.random() < ramp else 0.5

    for slot in slots:
        _respawn(slot, profile, wm, tiers, min_goal(0))

    episodes_done = 0
    recent_returns: list[float] = []
    result = SpecialistResult(actor, critic)
    next_eval = 0

    while episodes_done < budget:
        T, E = cfg.horizon, cfg.n_envs
        b_states = np.empty((T, E, state_dim))
        b_critic = np.empty((T, E, OBS_DIM if critic_on_obs else state_dim))
        b_actions = np.empty((T, E, ACTION_DIM))
        b_logp = np.empty((T, E))
        b_rew = np.empty((T, E))
        b_val = np.empty((T, E))
        b_done = np.zeros((T, E))

        for t in range(T):
            obs = np.stack([s.obs for s in slots])
            latents = np.stack([s.latent for s in slots])
            goals = goal_features(obs)
            if from_scratch:
                a_base = np.zeros((E, ACTION_DIM))
                rs = scratch_state(latents, goals)
            else:
                p = base.policy_state(latents, goals)
                a_base = base.action(p)
                rs = residual_state(p, goals)
            mean = actor.mean(rs)
            std = np.exp(actor.log_std)
            eps = np.stack([s.rng.standard_normal(ACTION_DIM) for s in slots])
            a_res = mean + std * eps
            logp = gaussian_logprob(mean, actor.log_std, a_res)
            critic_in = obs if critic_on_obs else rs
            values = critic.value(critic_in)

            b_states[t] = rs
            b_critic[t] = critic_in
            b_actions[t] = a_res
            b_logp[t] = logp
            b_val[t] = values

            for i, slot in enumerate(slots):
                a = compose_action(a_base[i], a_res[i], profile)
                res = slot.env.step(a)
                b_rew[t, i] = res.reward
                slot.ep_return += res.reward
                if res.termination != "none":
                    b_done[t, i] = 1.0
                    episodes_done += 1
                    recent_returns.append(slot.ep_return)
                    _respawn(slot, profile, wm, tiers, min_goal(episodes_done))
                else:
                    slot.obs = res.observation
                    slot.a_prev = np.asarray(a)
                    slot.latent = wm.step(slot.latent, slot.a_prev, slot.obs)

        # bootstrap from the value of the post-rollout states
        obs = np.stack([s.obs for s in slots])
        latents = np.stack([s.latent for s in slots])
        goals = goal_features(obs)
        if from_scratch:
            rs = scratch_state(latents, goals)
        else:
            rs = residual_state(base.policy_state(latents, goals), goals)
        bootstrap = critic.value(obs if critic_on_obs else rs)

        adv, ret = gae(b_rew, b_val, b_done, bootstrap, cfg.gamma, cfg.lam)
        buffer = RolloutBuffer(
            b_states.reshape(-1, state_dim),
            b_critic.reshape(len(b_critic) * E, -1),
            b_actions.reshape(-1, ACTION_DIM),
            b_logp.ravel(),
            adv.ravel(),
            ret.ravel(),
        )
        stats = ppo_update(buffer, actor, critic, cfg, update_rng, optimizer)

        if episodes_done >= next_eval or episodes_done >= budget:
            sr = evaluate_sr(
                actor, base, wm, profile, tier=1,
                n_trials=cfg.eval_trials, seed=eval_rng_seed,
                from_scratch=from_scratch,
            )
            mean_ret = float(np.mean(recent_returns[-50:])) if recent_returns else 0.0
            result.curve.append(
                CurvePoint(episodes_done, mean_ret, sr, stats.clip_fraction, stats.approx_kl)
            )
            next_eval = episodes_done + cfg.eval_every
    return result


def evaluate_sr(
    actor: ResidualActor,
    base: BasePolicy,
    wm: WorldModel,
    profile: EmbodimentProfile,
    tier: int = 1,
    n_trials: int = 20,
    seed=0,
    from_scratch: bool = False,
) -> float:
    """Deterministic closed-loop SR with the mean residual action."""
    seed_list = seed if isinstance(seed, list) else [seed]
    successes = 0
    for k in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed_list + [k]))
        env = Env(generate_map(tier, int(rng.integers(2**31))), profile)
        obs = env.reset(rng)
        latent = wm.step(wm.initial_latent(), np.zeros(ACTION_DIM), obs)
        while not env.done:
            goals = goal_features(obs)
            if from_scratch:
                a_base = np.zeros(ACTION_DIM)
                rs = scratch_state(latent, goals)
            else:
                p = base.policy_state(latent, goals)
                a_base = base.action(p)
                rs = residual_state(p, goals)
            a = compose_action(a_base, actor.mean(rs), profile)
            res = env.step(a)
            obs = res.observation
            if not env.done:
                latent = wm.step(latent, np.asarray(a), obs)
        successes += env.cause == "reached"
    return successes / n_trials
