"""Embodiment profiles: kinematic limits, body geometry, and fall model.

All embodiments share the (v, omega) command interface; they differ in
velocity ranges, response lag (first-order time constant tau), body size
(the height decides which overhangs block them), and whether a sustained
|v * omega| product topples them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path


@dataclass(frozen=True)
class EmbodimentProfile:
    id: int  # position in the one-hot embedding
    name: str
    v_min: float  # m/s
    v_max: float  # m/s
    omega_max: float  # rad/s, symmetric
    radius: float  # m, body footprint circle
    height: float  # m, decides overhang passability
    tau: float  # s, first-order velocity-tracking time constant
    c_fall: float | None = None  # (m*rad)/s^2 bound on |v*omega|; None = never falls
    k_fall: int = 5  # consecutive violating steps before a fall

    def __post_init__(self):
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("v_max and omega_max must be positive")
        if self.radius <= 0 or self.height <= 0 or self.tau <= 0:
            raise ValueError("radius, height, tau must be positive")

    def clamp(self, v: float, omega: float) -> tuple[float, float]:
        return (
            min(max(v, self.v_min), self.v_max),
            min(max(omega, -self.omega_max), self.omega_max),
        )


DEFAULT_PROFILES: tuple[EmbodimentProfile, ...] = (
    EmbodimentProfile(0, "wheeled", -0.3, 1.5, 1.0, 0.30, 0.6, 0.05, None),
    EmbodimentProfile(1, "biped_large", 0.0, 1.2, 0.8, 0.35, 1.8, 0.5, 0.6, 5),
    EmbodimentProfile(2, "biped_small", 0.0, 0.8, 1.0, 0.30, 1.3, 0.4, 0.5, 5),
    EmbodimentProfile(3, "quadruped", 0.0, 1.5, 1.2, 0.35, 0.7, 0.2, None),
)

N_EMBODIMENTS = len(DEFAULT_PROFILES)


def profile_by_name(name: str, profiles=DEFAULT_PROFILES) -> EmbodimentProfile:
    for p in profiles:
        if p.name == name:
            return p
    raise KeyError(f"unknown embodiment: {name!r} (have {[p.name for p in profiles]})")


def save_registry(path: str | Path, profiles=DEFAULT_PROFILES) -> None:
    Path(path).write_text(json.dumps([asdict(p) for p in profiles], indent=2))


def load_registry(path: str | Path) -> tuple[EmbodimentProfile, ...]:
    raw = json.loads(Path(path).read_text())
    profiles = tuple(EmbodimentProfile(**entry) for entry in raw)
    for i, p in enumerate(profiles):
        if p.id != i:
            raise ValueError(f"registry index {i} holds profile with id {p.id}")
    return profiles
