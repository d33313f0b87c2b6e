"""Dense layers (MLP, GRU cell), Adam, and diagonal-Gaussian math.

Conventions:
  * MLP: tanh hidden activations, identity output.
  * Weight init: uniform in +-sqrt(6 / (fan_in + fan_out)); zero biases.
  * GRU cell (input x, hidden h, gates ordered [z, r, n], bias on input side):
        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_n + r * (h U_n) + b_n)
        h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ParameterSet, Var


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths of a dense net; e.g. [37, 128, 64] has one hidden layer."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")


@dataclass(frozen=True)
class GruSpec:
    input_width: int
    hidden_width: int

    def __post_init__(self):
        if self.input_width < 1 or self.hidden_width < 1:
            raise ValueError("GRU widths must be >= 1")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(spec: MlpSpec, prefix: str, rng: np.random.Generator) -> ParameterSet:
    ps = ParameterSet()
    for i, (fi, fo) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        ps.add(Parameter(f"{prefix}.w{i}", glorot_uniform(rng, fi, fo)))
        ps.add(Parameter(f"{prefix}.b{i}", np.zeros(fo)))
    return ps


def mlp_forward(spec: MlpSpec, leaves: dict[str, Var], prefix: str, x: Var) -> Var:
    """Forward pass; raises ValueError on input width mismatch."""
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match spec width {spec.widths[0]}"
        )
    n_layers = len(spec.widths) - 1
    h = x
    for i in range(n_layers):
        h = h @ leaves[f"{prefix}.w{i}"] + leaves[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = ad.tanh(h)
    return h


def init_gru(spec: GruSpec, prefix: str, rng: np.random.Generator) -> ParameterSet:
    ps = ParameterSet()
    h = spec.hidden_width
    ps.add(Parameter(f"{prefix}.w", glorot_uniform(rng, spec.input_width, 3 * h)))
    ps.add(Parameter(f"{prefix}.u", glorot_uniform(rng, h, 3 * h)))
    ps.add(Parameter(f"{prefix}.b", np.zeros(3 * h)))
    return ps


def gru_step(spec: GruSpec, leaves: dict[str, Var], prefix: str, x: Var, h: Var) -> Var:
    hw = spec.hidden_width
    if x.shape[-1] != spec.input_width:
        raise ValueError(
            f"GRU input width {x.shape[-1]} does not match spec {spec.input_width}"
        )
    xw = x @ leaves[f"{prefix}.w"] + leaves[f"{prefix}.b"]
    hu = h @ leaves[f"{prefix}.u"]
    z = ad.sigmoid(xw[..., :hw] + hu[..., :hw])
    r = ad.sigmoid(xw[..., hw : 2 * hw] + hu[..., hw : 2 * hw])
    n = ad.tanh(xw[..., 2 * hw :] + r * hu[..., 2 * hw :])
    return (1.0 - z) * n + z * h


def mlp_np(spec: MlpSpec, params: ParameterSet, prefix: str, x: np.ndarray) -> np.ndarray:
    """Value-only forward, bit-identical to mlp_forward on the same inputs."""
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match spec width {spec.widths[0]}"
        )
    n_layers = len(spec.widths) - 1
    h = x
    for i in range(n_layers):
        h = h @ params[f"{prefix}.w{i}"].value + params[f"{prefix}.b{i}"].value
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


def gru_np(spec: GruSpec, params: ParameterSet, prefix: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Value-only GRU step, bit-identical to gru_step on the same inputs."""
    hw = spec.hidden_width
    xw = x @ params[f"{prefix}.w"].value + params[f"{prefix}.b"].value
    hu = h @ params[f"{prefix}.u"].value
    z = 1.0 / (1.0 + np.exp(-(xw[..., :hw] + hu[..., :hw])))
    r = 1.0 / (1.0 + np.exp(-(xw[..., hw : 2 * hw] + hu[..., hw : 2 * hw])))
    n = np.tanh(xw[..., 2 * hw :] + r * hu[..., 2 * hw :])
    return (1.0 - z) * n + z * h


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = None  # type: ignore[assignment]
    v: dict[str, np.ndarray] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.m is None:
            self.m = {}
        if self.v is None:
            self.v = {}


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """One Adam update in place, using each parameter's current .grad."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        if p.grad.shape != p.value.shape:
            raise ValueError(f"grad/value shape mismatch for {p.name}")
        m = state.beta1 * m + (1.0 - state.beta1) * p.grad
        v = state.beta2 * v + (1.0 - state.beta2) * p.grad**2
        state.m[p.name] = m
        state.v[p.name] = v
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float((p.grad**2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * scale
    return norm


# -- diagonal Gaussians -------------------------------------------------------

_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logprob(mean, log_std, sample):
    """Log density of a diagonal Gaussian, summed over the last axis.

    Accepts plain arrays or Vars; returns the matching kind. Batched inputs
    give per-row log-probs.
    """
    if isinstance(mean, Var) or isinstance(log_std, Var) or isinstance(sample, Var):
        mean, log_std, sample = ad.wrap(mean), ad.wrap(log_std), ad.wrap(sample)
        z = (sample - mean) * ad.exp(-log_std)
        terms = -0.5 * ad.square(z) - log_std - 0.5 * _LOG_2PI
        return ad.vsum(terms, axis=-1)
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    sample = np.asarray(sample, dtype=np.float64)
    z = (sample - mean) * np.exp(-log_std)
    return (-0.5 * z**2 - log_std - 0.5 * _LOG_2PI).sum(axis=-1)


def gaussian_kl(mean_p, var_p, mean_q, var_q) -> float:
    """Closed-form KL( N(mean_p, var_p) || N(mean_q, var_q) ), diagonal,
    summed over all dimensions."""
    mean_p = np.asarray(mean_p, dtype=np.float64)
    var_p = np.asarray(var_p, dtype=np.float64)
    mean_q = np.asarray(mean_q, dtype=np.float64)
    var_q = np.asarray(var_q, dtype=np.float64)
    if np.any(var_p <= 0) or np.any(var_q <= 0):
        raise ValueError("variances must be strictly positive")
    terms = 0.5 * np.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return float(terms.sum())
