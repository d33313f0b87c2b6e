"""Distill per-embodiment specialists into one one-hot-conditioned policy.

Recording rolls each specialist out with its mean action (no exploration
noise) and logs, per step, the policy state, the embodiment index, and the
specialist's Gaussian (mean = base + residual mean, the specialist's
state-independent variance). The student is a mean MLP over
[policy state; one-hot] plus a single global per-dimension log-variance,
trained by closed-form Gaussian KL (teacher || student) or, as an ablation,
MSE on the means only.

Dataset files are JSON lines:
    {"p": [128], "e": int, "mu": [2], "var": [2], "outcome": str,
     "ep": int, "t": int}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ParameterSet, Var
from .basepolicy import BasePolicy, POLICY_STATE_DIM, goal_features
from .layers import AdamState, MlpSpec, adam_step, init_mlp, mlp_forward, mlp_np
from .mapgen import generate_map
from .profiles import EmbodimentProfile, N_EMBODIMENTS
from .residual import BLOCKED_RESET_FRAC, ResidualActor, compose_action, residual_state
from .simulation import Env, line_blocked
from .worldmodel import ACTION_DIM, WorldModel

STUDENT_SPEC = MlpSpec((POLICY_STATE_DIM + N_EMBODIMENTS, 128, 64, ACTION_DIM))
INIT_LOG_VAR = 2.0 * math.log(0.3)  # start at the specialists' initial spread

CHECKPOINT_KIND = "dist/v1"


@dataclass
class DistillRecord:
    p: np.ndarray  # (128,) policy state
    e: int  # embodiment index (one-hot position)
    mu: np.ndarray  # (2,) specialist mean, pre-clamp
    var: np.ndarray  # (2,) specialist variance
    outcome: str
    ep: int
    t: int


def record_specialist(
    actor: ResidualActor,
    base: BasePolicy,
    wm: WorldModel,
    profile: EmbodimentProfile,
    n_traj: int = 80,
    traj_len: int = 128,
    seed: int = 0,
    tiers: tuple[int, ...] = (1, 2, 3, 4),
) -> list[DistillRecord]:
    """Mean-action rollouts on mixed-tier maps, one record per executed step."""
    records: list[DistillRecord] = []
    var = np.exp(2.0 * actor.log_std)
    for ep in range(n_traj):
        rng = np.random.default_rng(np.random.SeedSequence([seed, profile.id, ep]))
        tier = int(tiers[ep % len(tiers)])
        env = Env(generate_map(tier, int(rng.integers(2**31))), profile)
        obs = env.reset(rng)
        # match the training-reset mix: a share of recordings starts with the
        # straight line to the goal blocked, so the student sees the
        # specialist's detour behavior, not just free-line driving
        if rng.random() < BLOCKED_RESET_FRAC:
            for _ in range(40):
                s = env.state
                if line_blocked(env.map, profile, s.x, s.y, s.goal_x, s.goal_y):
                    break
                obs = env.reset(rng)
        latent = wm.step(wm.initial_latent(), np.zeros(ACTION_DIM), obs)
        ep_records = []
        for t in range(traj_len):
            goals = goal_features(obs)
            p = base.policy_state(latent, goals)
            a_base = base.action(p)
            rs = residual_state(p, goals)
            mu = a_base + actor.mean(rs)
            ep_records.append(
                DistillRecord(p.copy(), profile.id, mu.copy(), var.copy(), "", ep, t)
            )
            a = compose_action(a_base, mu - a_base, profile)
            result = env.step(a)
            obs = result.observation
            if env.done:
                break
            latent = wm.step(latent, np.asarray(a), obs)
        outcome = env.cause if env.done else "timeout"
        for r in ep_records:
            r.outcome = outcome
        records.extend(ep_records)
    return records


def save_records(path: str | Path, records: list[DistillRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "p": r.p.tolist(),
                        "e": r.e,
                        "mu": r.mu.tolist(),
                        "var": r.var.tolist(),
                        "outcome": r.outcome,
                        "ep": r.ep,
                        "t": r.t,
                    }
                )
                + "\n"
            )


def load_records(path: str | Path) -> list[DistillRecord]:
    out = []
    with open(path) as f:
        for line in f:
            d = json.loads(line)
            out.append(
                DistillRecord(
                    np.asarray(d["p"]), d["e"], np.asarray(d["mu"]),
                    np.asarray(d["var"]), d["outcome"], d["ep"], d["t"],
                )
            )
    return out


class DistilledPolicy:
    """Student: mean network over [p; one-hot e] and a global log-variance."""

    def __init__(self, params: ParameterSet):
        self.params = params

    @classmethod
    def init(cls, seed: int) -> "DistilledPolicy":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
        ps = init_mlp(STUDENT_SPEC, "mean", rng)
        ps.add(Parameter("log_var", np.full(ACTION_DIM, INIT_LOG_VAR)))
        return cls(ps)

    def action(self, p: np.ndarray, e: int) -> np.ndarray:
        """Deployment output: the mean for embodiment e; the sim clamps later."""
        if not 0 <= e < N_EMBODIMENTS:
            raise ValueError(f"embodiment index {e} out of range 0..{N_EMBODIMENTS - 1}")
        onehot = np.zeros(N_EMBODIMENTS)
        onehot[e] = 1.0
        x = np.concatenate([np.asarray(p, dtype=np.float64), onehot], axis=-1)
        return mlp_np(STUDENT_SPEC, self.params, "mean", x)

    def mean_var(self, leaves: dict[str, Var], x: Var) -> Var:
        return mlp_forward(STUDENT_SPEC, leaves, "mean", x)


def _batch_arrays(records: list[DistillRecord]):
    X = np.stack(
        [np.concatenate([r.p, np.eye(N_EMBODIMENTS)[r.e]]) for r in records]
    )
    mu = np.stack([r.mu for r in records])
    var = np.stack([r.var for r in records])
    return X, mu, var


def distill_loss(records: list[DistillRecord], student: DistilledPolicy, mode: str = "kl"):
    """Mean per-record loss; returns (loss Var, leaves)."""
    if not records:
        raise ValueError("distill_loss needs a non-empty batch")
    if mode not in ("kl", "mse"):
        raise ValueError(f"mode must be 'kl' or 'mse', got {mode!r}")
    X, mu_t, var_t = _batch_arrays(records)
    if np.any(var_t <= 0):
        raise ValueError("teacher variances must be strictly positive")
    leaves = student.params.leaves()
    mu_s = student.mean_var(leaves, Var(X))
    if mode == "mse":
        loss = ad.vmean(ad.square(mu_s - mu_t))
        return loss, leaves
    log_var_s = leaves["log_var"]
    # KL(teacher || student), closed form, summed over action dims
    diff2 = ad.square(mu_s - mu_t)
    inv_var_s = ad.exp(-1.0 * log_var_s)
    terms = (
        0.5 * (log_var_s - np.log(var_t))
        + (diff2 + var_t) * inv_var_s * 0.5
        - 0.5
    )
    loss = ad.vmean(ad.vsum(terms, axis=-1))
    return loss, leaves


@dataclass
class DistillTrainLog:
    epoch_losses: list[float]


def train_distilled(
    datasets: dict[int, list[DistillRecord]],
    epochs: int = 20,
    lr: float = 1e-3,
    batch: int = 512,
    mode: str = "kl",
    filter_failures: bool = False,
    seed: int = 0,
) -> tuple[DistilledPolicy, DistillTrainLog]:
    """Balanced training across embodiments: each batch draws an equal share
    (within one record) from every embodiment's dataset."""
    if not datasets:
        raise ValueError("need at least one dataset")
    pools: dict[int, list[DistillRecord]] = {}
    for e, recs in datasets.items():
        pool = [r for r in recs if not filter_failures or r.outcome == "reached"]
        if not pool:
            raise ValueError(f"embodiment {e}: no records left after filtering")
        pools[e] = pool
    embs = sorted(pools)
    share = batch // len(embs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 42]))
    student = DistilledPolicy.init(seed)
    adam = AdamState(lr=lr)
    log = DistillTrainLog([])

    n_batches = max(math.ceil(len(pools[e]) / share) for e in embs)
    for _epoch in range(epochs):
        cursors = {}
        for e in embs:
            order = rng.permutation(len(pools[e]))
            cursors[e] = (order, 0)
        total, count = 0.0, 0
        for _b in range(n_batches):
            batch_recs: list[DistillRecord] = []
            for e in embs:
                order, pos = cursors[e]
                take = []
                while len(take) < share:
                    if pos >= len(order):
                        order = rng.permutation(len(pools[e]))
                        pos = 0
                    take.append(pools[e][order[pos]])
                    pos += 1
                cursors[e] = (order, pos)
                batch_recs.extend(take)
            loss, leaves = distill_loss(batch_recs, student, mode)
            ad.backward(loss)
            student.params.collect_grads(leaves)
            adam_step(student.params, adam)
            total += float(loss.value)
            count += 1
        log.epoch_losses.append(total / count)
    return student, log
