"""Imitation-learned base mobility policy.

The goal features (normalized distance, sin/cos of bearing, i.e. the last
three observation entries) pass through a route encoder; the world-model
latent and the route embedding fuse into the 128-d policy state shared by
every later stage. A deterministic head regresses the teacher's (v, omega).
The world model stays frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Var
from .layers import AdamState, MlpSpec, adam_step, init_mlp, mlp_forward, mlp_np
from .worldmodel import ACTION_DIM, LATENT_DIM, WorldModel

GOAL_DIM = 3
ROUTE_DIM = 32
POLICY_STATE_DIM = 128
ROUTE_SPEC = MlpSpec((GOAL_DIM, 32, ROUTE_DIM))
FUSION_SPEC = MlpSpec((LATENT_DIM + ROUTE_DIM, 128, POLICY_STATE_DIM))
HEAD_SPEC = MlpSpec((POLICY_STATE_DIM, 64, ACTION_DIM))

CHECKPOINT_KIND = "il/v1"


class BasePolicy:
    def __init__(self, params: ParameterSet):
        self.params = params

    @classmethod
    def init(cls, seed: int) -> "BasePolicy":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
        ps = ParameterSet()
        for spec, prefix in ((ROUTE_SPEC, "route"), (FUSION_SPEC, "fusion"), (HEAD_SPEC, "head")):
            for p in init_mlp(spec, prefix, rng):
                ps.add(p)
        return cls(ps)

    @staticmethod
    def widths() -> dict:
        return {
            "route": list(ROUTE_SPEC.widths),
            "fusion": list(FUSION_SPEC.widths),
            "head": list(HEAD_SPEC.widths),
        }

    # -- inference (value only) ----------------------------------------------

    def policy_state(self, latent: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """p = fusion([latent; route(goal)]); batched along a leading axis."""
        r = mlp_np(ROUTE_SPEC, self.params, "route", np.asarray(goal, dtype=np.float64))
        x = np.concatenate([np.asarray(latent, dtype=np.float64), r], axis=-1)
        return mlp_np(FUSION_SPEC, self.params, "fusion", x)

    def action(self, p: np.ndarray) -> np.ndarray:
        """Raw head output in physical units; clamping happens at composition."""
        return mlp_np(HEAD_SPEC, self.params, "head", np.asarray(p, dtype=np.float64))

    # -- graph forward --------------------------------------------------------

    def policy_state_var(self, leaves: dict[str, Var], latent: Var, goal: Var) -> Var:
        r = mlp_forward(ROUTE_SPEC, leaves, "route", goal)
        x = ad.concat([latent, r], axis=-1)
        return mlp_forward(FUSION_SPEC, leaves, "fusion", x)

    def action_var(self, leaves: dict[str, Var], p: Var) -> Var:
        return mlp_forward(HEAD_SPEC, leaves, "head", p)


@dataclass
class ILTrainLog:
    epoch_losses: list[float]


def goal_features(obs: np.ndarray) -> np.ndarray:
    """Last three observation entries: distance (clipped, /10), sin, cos."""
    return np.asarray(obs)[..., -GOAL_DIM:]


def il_loss(policy: BasePolicy, latents: np.ndarray, goals: np.ndarray, targets: np.ndarray):
    """Mean squared error over (v, omega); returns (loss Var, leaves)."""
    leaves = policy.params.leaves()
    p = policy.policy_state_var(leaves, Var(latents), Var(goals))
    pred = policy.action_var(leaves, p)
    loss = ad.vmean(ad.square(pred - targets))
    return loss, leaves


def train_il(
    demos,
    wm: WorldModel,
    epochs: int = 30,
    lr: float = 1e-3,
    batch: int = 256,
    seed: int = 0,
) -> tuple[BasePolicy, ILTrainLog]:
    """Regression to teacher actions on frozen, teacher-forced latents."""
    lat_list, goal_list, act_list = [], [], []
    for e in demos.episodes:
        obs = np.asarray(e.obs)
        acts = np.asarray(e.act)
        lat_list.append(wm.episode_latents(obs, acts))
        goal_list.append(goal_features(obs))
        act_list.append(acts)
    X_lat = np.concatenate(lat_list)
    X_goal = np.concatenate(goal_list)
    Y = np.concatenate(act_list)

    policy = BasePolicy.init(seed)
    adam = AdamState(lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22]))
    log = ILTrainLog([])
    n = len(Y)
    for _epoch in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for i in range(0, n, batch):
            idx = order[i : i + batch]
            loss, leaves = il_loss(policy, X_lat[idx], X_goal[idx], Y[idx])
            ad.backward(loss)
            policy.params.collect_grads(leaves)
            adam_step(policy.params, adam)
            total += float(loss.value) * len(idx)
            count += len(idx)
        log.epoch_losses.append(total / count)
    return policy, log
