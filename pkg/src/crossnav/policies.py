"""Closed-loop policy adapters sharing one interface for the benchmark.

A pilot owns whatever recurrent state its pipeline needs (world-model
latent, previous action, planned path) and exposes:
    reset(env)          called once right after the environment reset
    act(obs, env) -> (v, omega)
"""

from __future__ import annotations

import numpy as np

from .basepolicy import BasePolicy, goal_features
from .distill import DistilledPolicy
from .profiles import EmbodimentProfile
from .residual import ResidualActor, compose_action, residual_state
from .simulation import Env
from .teacher import TeacherPolicy
from .worldmodel import ACTION_DIM, WorldModel


class _LatentPipeline:
    """Shared world-model bookkeeping: latent zeroed at reset, advanced with
    the previously executed command on every new observation."""

    def __init__(self, wm: WorldModel):
        self.wm = wm
        self.latent = None
        self.a_prev = np.zeros(ACTION_DIM)

    def reset(self, env: Env) -> None:
        self.latent = None
        self.a_prev = np.zeros(ACTION_DIM)

    def advance(self, obs: np.ndarray) -> np.ndarray:
        if self.latent is None:
            self.latent = self.wm.step(self.wm.initial_latent(), np.zeros(ACTION_DIM), obs)
        else:
            self.latent = self.wm.step(self.latent, self.a_prev, obs)
        return self.latent


class BasePilot(_LatentPipeline):
    """Zero-shot IL policy: runs unmodified on any embodiment (the sim clamps)."""

    def __init__(self, wm: WorldModel, base: BasePolicy):
        super().__init__(wm)
        self.base = base

    def act(self, obs: np.ndarray, env: Env):
        latent = self.advance(obs)
        p = self.base.policy_state(latent, goal_features(obs))
        a = self.base.action(p)
        a = env.profile.clamp(float(a[0]), float(a[1]))
        self.a_prev = np.asarray(a)
        return a


class SpecialistPilot(_LatentPipeline):
    """Frozen base + residual mean, composed and clamped."""

    def __init__(self, wm: WorldModel, base: BasePolicy, actor: ResidualActor):
        super().__init__(wm)
        self.base = base
        self.actor = actor

    def act(self, obs: np.ndarray, env: Env):
        latent = self.advance(obs)
        goals = goal_features(obs)
        p = self.base.policy_state(latent, goals)
        a_base = self.base.action(p)
        a_res = self.actor.mean(residual_state(p, goals))
        a = compose_action(a_base, a_res, env.profile)
        self.a_prev = np.asarray(a)
        return a


class GeneralistPilot(_LatentPipeline):
    """Distilled policy: replaces base + residual end to end."""

    def __init__(self, wm: WorldModel, base: BasePolicy, student: DistilledPolicy,
                 embodiment_id: int):
        super().__init__(wm)
        self.base = base
        self.student = student
        self.embodiment_id = embodiment_id

    def act(self, obs: np.ndarray, env: Env):
        latent = self.advance(obs)
        p = self.base.policy_state(latent, goal_features(obs))
        a = self.student.action(p, self.embodiment_id)
        a = env.profile.clamp(float(a[0]), float(a[1]))
        self.a_prev = np.asarray(a)
        return a


class TeacherPilot:
    """Classical planner + pursuit; valid on the wheeled embodiment only."""

    def __init__(self, profile: EmbodimentProfile | None = None):
        self.inner = TeacherPolicy(profile)

    def reset(self, env: Env) -> None:
        self.inner.reset(env)

    def act(self, obs: np.ndarray, env: Env):
        return self.inner.act(obs, env)


class ZeroPilot:
    """Always commands (0, 0); times out every trial."""

    def reset(self, env: Env) -> None:
        pass

    def act(self, obs: np.ndarray, env: Env):
        return (0.0, 0.0)
