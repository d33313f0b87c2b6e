"""Pipeline configuration: one JSON file drives every stage.

Unknown keys are rejected; every field has the documented default so an
empty config runs the full desk-scale pipeline.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SimSection:
    dt: float = 0.1
    max_steps: int = 256
    demo_episodes: int = 500
    demo_tiers: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    train_tiers: list[int] = field(default_factory=lambda: [1, 2, 3, 4])


@dataclass
class ProfilesSection:
    registry: str | None = None  # JSON registry path; None = built-in profiles


@dataclass
class WmSection:
    epochs: int = 50
    truncation: int = 32
    batch: int = 16
    lr: float = 1e-3


@dataclass
class IlSection:
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 256


@dataclass
class PpoSection:
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
    eval_every: int = 100
    eval_trials: int = 20
    curriculum: bool = False
    critic: str = "state"  # "state" or "obs" (raw-observation critic ablation)


@dataclass
class DistillSection:
    n_traj: int = 80
    traj_len: int = 128
    epochs: int = 20
    lr: float = 1e-3
    batch: int = 512
    mode: str = "kl"  # or "mse"
    filter_failures: bool = False


@dataclass
class BenchSection:
    n_trials: int = 100
    tiers: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    models: list[str] = field(default_factory=lambda: ["teacher", "base", "specialist", "generalist"])


@dataclass
class PipelineConfig:
    master_seed: int = 0
    out_dir: str = "artifacts"
    sim: SimSection = field(default_factory=SimSection)
    profiles: ProfilesSection = field(default_factory=ProfilesSection)
    wm: WmSection = field(default_factory=WmSection)
    il: IlSection = field(default_factory=IlSection)
    ppo: PpoSection = field(default_factory=PpoSection)
    distill: DistillSection = field(default_factory=DistillSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def validate(self) -> "PipelineConfig":
        if self.ppo.critic not in ("state", "obs"):
            raise ConfigError(f"ppo.critic must be 'state' or 'obs', got {self.ppo.critic!r}")
        if self.distill.mode not in ("kl", "mse"):
            raise ConfigError(f"distill.mode must be 'kl' or 'mse', got {self.distill.mode!r}")
        for name, tiers in (("sim.demo_tiers", self.sim.demo_tiers),
                            ("sim.train_tiers", self.sim.train_tiers),
                            ("bench.tiers", self.bench.tiers)):
            if not tiers or any(t not in (1, 2, 3, 4) for t in tiers):
                raise ConfigError(f"{name} must be a non-empty subset of [1, 2, 3, 4]")
        for name, v in (("wm.epochs", self.wm.epochs), ("il.epochs", self.il.epochs),
                        ("distill.epochs", self.distill.epochs),
                        ("ppo.episodes", self.ppo.episodes),
                        ("bench.n_trials", self.bench.n_trials)):
            if v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0 < self.ppo.gamma <= 1 and 0 < self.ppo.lam <= 1):
            raise ConfigError("ppo.gamma and ppo.lam must be in (0, 1]")
        if self.ppo.clip_eps <= 0:
            raise ConfigError("ppo.clip_eps must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "sim": SimSection,
    "profiles": ProfilesSection,
    "wm": WmSection,
    "il": IlSection,
    "ppo": PpoSection,
    "distill": DistillSection,
    "bench": BenchSection,
}


def _build_section(cls, raw: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**raw)


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    kwargs = {}
    for key in ("master_seed", "out_dir"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name)
    if raw:
        raise ConfigError(f"unknown top-level keys: {sorted(raw)}")
    try:
        cfg = PipelineConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def section_hash(*parts) -> str:
    """Stable hash over JSON-serializable stage inputs (for resume checks)."""
    blob = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
