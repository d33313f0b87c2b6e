"""Recurrent latent dynamics model trained on teacher demonstrations.

The latent state (64-d, zeroed at every episode start) is advanced by a GRU
over [encoded observation; previous action], so the filter is observation-
corrected. Two heads share the latent: one reconstructs the current
observation, one predicts the next observation given the current action.

Training is truncated backpropagation through time over fixed windows;
window-start latents come from a no-gradient teacher-forced scan under the
current parameters at the start of each epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Var
from .layers import (
    AdamState,
    GruSpec,
    MlpSpec,
    adam_step,
    gru_np,
    gru_step,
    init_gru,
    init_mlp,
    mlp_forward,
    mlp_np,
)
from .simulation import OBS_DIM

LATENT_DIM = 64
ACTION_DIM = 2
ENC_SPEC = MlpSpec((OBS_DIM, 128, LATENT_DIM))
GRU_SPEC = GruSpec(LATENT_DIM + ACTION_DIM, LATENT_DIM)
RECON_SPEC = MlpSpec((LATENT_DIM, 128, OBS_DIM))
PRED_SPEC = MlpSpec((LATENT_DIM + ACTION_DIM, 128, OBS_DIM))

CHECKPOINT_KIND = "wm/v1"


class WorldModel:
    def __init__(self, params: ParameterSet):
        self.params = params

    @classmethod
    def init(cls, seed: int) -> "WorldModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        ps = ParameterSet()
        for p in init_mlp(ENC_SPEC, "enc", rng):
            ps.add(p)
        for p in init_gru(GRU_SPEC, "gru", rng):
            ps.add(p)
        for p in init_mlp(RECON_SPEC, "recon", rng):
            ps.add(p)
        for p in init_mlp(PRED_SPEC, "pred", rng):
            ps.add(p)
        return cls(ps)

    @staticmethod
    def widths() -> dict:
        return {
            "enc": list(ENC_SPEC.widths),
            "gru": [GRU_SPEC.input_width, GRU_SPEC.hidden_width],
            "recon": list(RECON_SPEC.widths),
            "pred": list(PRED_SPEC.widths),
            "latent": LATENT_DIM,
        }

    # -- inference ----------------------------------------------------------

    def initial_latent(self, batch: int | None = None) -> np.ndarray:
        """Zero latent; cleared again on every episode reset."""
        if batch is None:
            return np.zeros(LATENT_DIM)
        return np.zeros((batch, LATENT_DIM))

    def step(self, s_prev: np.ndarray, a_prev: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Latent update (value only); batched when inputs carry a batch axis."""
        if not (np.all(np.isfinite(s_prev)) and np.all(np.isfinite(a_prev)) and np.all(np.isfinite(obs))):
            raise ad.NumericError("non-finite input to world-model step")
        enc = mlp_np(ENC_SPEC, self.params, "enc", np.asarray(obs, dtype=np.float64))
        x = np.concatenate([enc, np.asarray(a_prev, dtype=np.float64)], axis=-1)
        return gru_np(GRU_SPEC, self.params, "gru", x, s_prev)

    def step_var(self, leaves: dict[str, Var], s_prev: Var, a_prev: Var, obs: Var) -> Var:
        enc = mlp_forward(ENC_SPEC, leaves, "enc", obs)
        x = ad.concat([enc, a_prev], axis=-1)
        return gru_step(GRU_SPEC, leaves, "gru", x, s_prev)

    def episode_latents(self, obs: np.ndarray, acts: np.ndarray) -> np.ndarray:
        """Teacher-forced latents for a whole episode: s_t uses o_t and a_{t-1}."""
        T = len(obs)
        out = np.empty((T, LATENT_DIM))
        s = self.initial_latent()
        a_prev = np.zeros(ACTION_DIM)
        for t in range(T):
            s = self.step(s, a_prev, obs[t])
            out[t] = s
            a_prev = acts[t]
        return out

    # -- loss ----------------------------------------------------------------

    def window_loss(
        self,
        leaves: dict[str, Var],
        obs: np.ndarray,  # (B, T, OBS_DIM), zero-padded
        acts: np.ndarray,  # (B, T, ACTION_DIM)
        a_start: np.ndarray,  # (B, ACTION_DIM) action preceding the window
        s_init: np.ndarray,  # (B, LATENT_DIM)
        mask: np.ndarray,  # (B, T) 1 where the frame is real
    ) -> tuple[Var, float]:
        """Masked mean over valid terms of recon MSE + next-step prediction MSE.

        The prediction term is dropped on each sequence's final valid frame.
        Returns (loss Var, number of contributing terms).
        """
        B, T, _ = obs.shape
        s = Var(s_init)
        recon_terms: list[Var] = []
        pred_terms: list[Var] = []
        pred_mask = mask[:, 1:] * mask[:, :-1]  # both frames real
        for t in range(T):
            a_prev = Var(a_start) if t == 0 else Var(acts[:, t - 1])
            s = self.step_var(leaves, s, a_prev, Var(obs[:, t]))
            recon = mlp_forward(RECON_SPEC, leaves, "recon", s)
            recon_terms.append(ad.vmean(ad.square(recon - obs[:, t]), axis=-1))
            if t < T - 1:
                pred_in = ad.concat([s, Var(acts[:, t])], axis=-1)
                pred = mlp_forward(PRED_SPEC, leaves, "pred", pred_in)
                pred_terms.append(ad.vmean(ad.square(pred - obs[:, t + 1]), axis=-1))
        recon_stack = ad.concat([r * mask[:, t] for t, r in enumerate(recon_terms)], axis=0)
        total = ad.vsum(recon_stack)
        n_terms = float(mask.sum())
        if pred_terms:
            pred_stack = ad.concat(
                [p * pred_mask[:, t] for t, p in enumerate(pred_terms)], axis=0
            )
            total = total + ad.vsum(pred_stack)
            n_terms += float(pred_mask.sum())
        return total * (1.0 / max(n_terms, 1.0)), n_terms

    def sequence_loss(self, obs: np.ndarray, acts: np.ndarray) -> tuple[Var, dict[str, Var]]:
        """Loss over one full sequence from a zero latent (graph included)."""
        if len(obs) < 2:
            raise ValueError("sequence loss needs at least 2 frames")
        leaves = self.params.leaves()
        o = obs[None, ...]
        a = acts[None, ...]
        loss, _ = self.window_loss(
            leaves, o, a,
            np.zeros((1, ACTION_DIM)),
            self.initial_latent(1),
            np.ones((1, len(obs))),
        )
        return loss, leaves


def wm_loss(model: WorldModel, obs: np.ndarray, acts: np.ndarray) -> float:
    loss, _ = model.sequence_loss(np.asarray(obs, dtype=np.float64), np.asarray(acts, dtype=np.float64))
    return float(loss.value)


@dataclass
class TrainLog:
    epoch_losses: list[float]


def _episode_windows(lengths: list[int], truncation: int) -> list[tuple[int, int, int]]:
    """(episode, start, length) windows; tail windows shorter than the
    truncation are kept when they still hold >= 2 frames or extend a window."""
    windows = []
    for ep, T in enumerate(lengths):
        start = 0
        while start < T:
            length = min(truncation, T - start)
            if length < 2 and start == 0:
                break  # episode too short to contribute a prediction term
            windows.append((ep, start, length))
            start += length
    return windows


def train_wm(
    demos,
    epochs: int = 50,
    truncation: int = 32,
    batch: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[WorldModel, TrainLog]:
    """Truncated-BPTT training; latents carry across windows within an episode
    (recomputed under current parameters each epoch) and reset at boundaries."""
    eps = [(np.asarray(e.obs), np.asarray(e.act)) for e in demos.episodes if len(e.obs) >= 2]
    if not eps:
        raise ValueError("dataset too short: no episode has two frames")
    lengths = [len(o) for o, _ in eps]
    windows = _episode_windows(lengths, truncation)
    if not windows:
        raise ValueError("dataset too short for one training window")

    model = WorldModel.init(seed)
    adam = AdamState(lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    log = TrainLog([])

    for _epoch in range(epochs):
        # stale-but-consistent initial latents for every window
        latents = [model.episode_latents(o, a) for o, a in eps]
        order = rng.permutation(len(windows))
        total_loss, total_terms = 0.0, 0.0
        for i in range(0, len(order), batch):
            group = [windows[j] for j in order[i : i + batch]]
            B = len(group)
            T = max(g[2] for g in group)
            obs_b = np.zeros((B, T, OBS_DIM))
            act_b = np.zeros((B, T, ACTION_DIM))
            a_start = np.zeros((B, ACTION_DIM))
            s_init = np.zeros((B, LATENT_DIM))
            mask = np.zeros((B, T))
            for k, (ep, start, length) in enumerate(group):
                o, a = eps[ep]
                obs_b[k, :length] = o[start : start + length]
                act_b[k, :length] = a[start : start + length]
                mask[k, :length] = 1.0
                if start > 0:
                    a_start[k] = a[start - 1]
                    s_init[k] = latents[ep][start - 1]
            leaves = model.params.leaves()
            loss, n_terms = model.window_loss(leaves, obs_b, act_b, a_start, s_init, mask)
            ad.backward(loss)
            model.params.collect_grads(leaves)
            adam_step(model.params, adam)
            total_loss += float(loss.value) * n_terms
            total_terms += n_terms
        log.epoch_losses.append(total_loss / total_terms)
    return model, log
