"""Stage orchestration: demos -> world model -> base policy -> specialists
-> recordings -> distilled generalist -> benchmark.

Every stage writes its artifact under the output directory and records a
(path, input hash, seed) entry in manifest.json. Rerunning skips stages
whose artifact exists and whose input hash still matches, so an
interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import basepolicy as bp
from . import distill as ds
from . import residual as rs
from . import teacher as tc
from . import worldmodel as wmod
from .bench import BenchReport, BenchRow, emit_report, run_trials
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_manifest,
    save_checkpoint,
)
from .config import PipelineConfig, section_hash
from .policies import BasePilot, GeneralistPilot, SpecialistPilot, TeacherPilot
from .profiles import DEFAULT_PROFILES, load_registry

MODELS = ("teacher", "base", "specialist", "generalist")


class DependencyError(RuntimeError):
    """A required upstream artifact is missing or of the wrong kind."""


def _sect(obj) -> dict:
    import dataclasses

    return dataclasses.asdict(obj)


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.profiles = (
            load_registry(cfg.profiles.registry)
            if cfg.profiles.registry
            else list(DEFAULT_PROFILES)
        )
        self._manifest = self._load_manifest()

    # -- manifest -------------------------------------------------------------

    @property
    def manifest_file(self) -> Path:
        return self.out / "manifest.json"

    def _load_manifest(self) -> dict:
        if self.manifest_file.exists():
            return json.loads(self.manifest_file.read_text())
        return {"stages": {}}

    def _mark(self, stage: str, path: Path, h: str) -> None:
        self._manifest["stages"][stage] = {
            "path": str(path),
            "hash": h,
            "seed": self.cfg.master_seed,
        }
        self.manifest_file.write_text(json.dumps(self._manifest, indent=2, sort_keys=True))

    def _fresh(self, stage: str, h: str) -> Path | None:
        entry = self._manifest["stages"].get(stage)
        if not entry or entry["hash"] != h:
            return None
        path = Path(entry["path"])
        return path if path.exists() else None

    # -- stage input hashes ----------------------------------------------------

    def _hash_demos(self) -> str:
        return section_hash("demos/v9", self.cfg.master_seed, _sect(self.cfg.sim),
                            _sect(self.cfg.profiles))

    def _hash_wm(self) -> str:
        return section_hash("wm", self.cfg.master_seed, _sect(self.cfg.wm), self._hash_demos())

    def _hash_il(self) -> str:
        return section_hash("il", self.cfg.master_seed, _sect(self.cfg.il), self._hash_wm())

    def _hash_specialist(self, name: str, curriculum, critic, from_scratch) -> str:
        return section_hash(
            "specialist", name, self.cfg.master_seed, _sect(self.cfg.ppo),
            self.cfg.sim.train_tiers, curriculum, critic, from_scratch, self._hash_il(),
        )

    def _hash_records(self, name: str) -> str:
        d = self.cfg.distill
        return section_hash("records", name, self.cfg.master_seed, d.n_traj, d.traj_len,
                            self._hash_specialist(name, self.cfg.ppo.curriculum,
                                                  self.cfg.ppo.critic, False))

    def _hash_generalist(self, mode, filter_failures) -> str:
        return section_hash(
            "generalist", self.cfg.master_seed, _sect(self.cfg.distill), mode,
            filter_failures, [self._hash_records(p.name) for p in self.profiles],
        )

    # -- artifact loading -------------------------------------------------------

    def _load_kind(self, path: Path, kind: str):
        try:
            manifest = load_manifest(path)
        except FileNotFoundError as e:
            raise DependencyError(f"missing sidecar manifest for {path}") from e
        if manifest.get("kind") != kind:
            raise DependencyError(
                f"{path} holds kind {manifest.get('kind')!r}, expected {kind!r}"
            )
        return load_checkpoint(path)

    def load_wm(self) -> wmod.WorldModel:
        path = self.out / "wm.ckpt"
        if not path.exists():
            raise DependencyError("world-model checkpoint not found; run train-wm first")
        return wmod.WorldModel(self._load_kind(path, wmod.CHECKPOINT_KIND))

    def load_il(self) -> bp.BasePolicy:
        path = self.out / "il.ckpt"
        if not path.exists():
            raise DependencyError("base-policy checkpoint not found; run train-il first")
        return bp.BasePolicy(self._load_kind(path, bp.CHECKPOINT_KIND))

    def load_specialist(self, name: str, from_scratch: bool = False) -> rs.ResidualActor:
        stem = f"res_scratch_{name}" if from_scratch else f"res_{name}"
        path = self.out / f"{stem}.ckpt"
        if not path.exists():
            raise DependencyError(
                f"specialist checkpoint for {name!r} not found; run train-specialist first"
            )
        return rs.ResidualActor(self._load_kind(path, f"res/{name}/v1"))

    def load_generalist(self) -> ds.DistilledPolicy:
        path = self.out / "generalist.ckpt"
        if not path.exists():
            raise DependencyError("generalist checkpoint not found; run distill first")
        return ds.DistilledPolicy(self._load_kind(path, ds.CHECKPOINT_KIND))

    def load_demos(self) -> tc.DemoDataset:
        path = self.out / "demos.jsonl"
        if not path.exists():
            raise DependencyError("demo dataset not found; run demo-gen first")
        return tc.load_demos(path)

    def _profile(self, name: str):
        for p in self.profiles:
            if p.name == name:
                return p
        raise DependencyError(f"unknown embodiment {name!r}")

    # -- stages -----------------------------------------------------------------

    def run_demos(self) -> Path:
        h = self._hash_demos()
        path = self.out / "demos.jsonl"
        if self._fresh("demos", h):
            return path
        dataset = tc.generate_demos(
            n_episodes=self.cfg.sim.demo_episodes,
            tiers=tuple(self.cfg.sim.demo_tiers),
            seed=self.cfg.master_seed,
        )
        tc.save_demos(path, dataset)
        self._mark("demos", path, h)
        return path

    def run_wm(self) -> Path:
        h = self._hash_wm()
        path = self.out / "wm.ckpt"
        if self._fresh("wm", h):
            return path
        demos = self.load_demos()
        c = self.cfg.wm
        model, log = wmod.train_wm(
            demos, epochs=c.epochs, truncation=c.truncation,
            batch=c.batch, lr=c.lr, seed=self.cfg.master_seed,
        )
        save_checkpoint(
            path, model.params, wmod.CHECKPOINT_KIND, model.widths(),
            self.cfg.master_seed, extra={"epoch_losses": log.epoch_losses},
        )
        self._mark("wm", path, h)
        return path

    def run_il(self) -> Path:
        h = self._hash_il()
        path = self.out / "il.ckpt"
        if self._fresh("il", h):
            return path
        demos = self.load_demos()
        wm = self.load_wm()
        c = self.cfg.il
        policy, log = bp.train_il(
            demos, wm, epochs=c.epochs, lr=c.lr, batch=c.batch,
            seed=self.cfg.master_seed,
        )
        save_checkpoint(
            path, policy.params, bp.CHECKPOINT_KIND, policy.widths(),
            self.cfg.master_seed, extra={"epoch_losses": log.epoch_losses},
        )
        self._mark("il", path, h)
        return path

    def run_specialist(
        self,
        name: str,
        curriculum: bool | None = None,
        critic: str | None = None,
        from_scratch: bool = False,
    ) -> Path:
        curriculum = self.cfg.ppo.curriculum if curriculum is None else curriculum
        critic = self.cfg.ppo.critic if critic is None else critic
        profile = self._profile(name)
        h = self._hash_specialist(name, curriculum, critic, from_scratch)
        stem = f"res_scratch_{name}" if from_scratch else f"res_{name}"
        stage = f"specialist_scratch_{name}" if from_scratch else f"specialist_{name}"
        path = self.out / f"{stem}.ckpt"
        if self._fresh(stage, h):
            return path
        wm = self.load_wm()
        base = self.load_il()
        c = self.cfg.ppo
        cfg = rs.PpoConfig(
            gamma=c.gamma, lam=c.lam, clip_eps=c.clip_eps, lr=c.lr,
            update_epochs=c.update_epochs, minibatch=c.minibatch,
            horizon=c.horizon, n_envs=c.n_envs, ent_coef=c.ent_coef,
            vf_coef=c.vf_coef, max_grad_norm=c.max_grad_norm,
            episodes=c.episodes, episodes_wheeled=c.episodes_wheeled,
            eval_every=c.eval_every, eval_trials=c.eval_trials,
        )
        result = rs.train_specialist(
            profile, base, wm, cfg,
            seed=self.cfg.master_seed + profile.id,
            curriculum=curriculum, critic_on_obs=(critic == "obs"),
            from_scratch=from_scratch, tiers=tuple(self.cfg.sim.train_tiers),
        )
        curve = [
            {"episode": p.episode, "mean_return": p.mean_return, "eval_sr": p.eval_sr}
            for p in result.curve
        ]
        save_checkpoint(
            path, result.actor.params, f"res/{name}/v1",
            seed=self.cfg.master_seed,
            extra={"curve": curve, "curriculum": curriculum, "critic": critic,
                   "from_scratch": from_scratch},
        )
        save_checkpoint(
            self.out / f"{stem}_critic.ckpt", result.critic.params,
            f"res/{name}/critic/v1", seed=self.cfg.master_seed,
        )
        self._mark(stage, path, h)
        return path

    def run_record(self, name: str) -> Path:
        h = self._hash_records(name)
        path = self.out / f"records_{name}.jsonl"
        if self._fresh(f"records_{name}", h):
            return path
        profile = self._profile(name)
        wm = self.load_wm()
        base = self.load_il()
        actor = self.load_specialist(name)
        d = self.cfg.distill
        records = ds.record_specialist(
            actor, base, wm, profile, n_traj=d.n_traj, traj_len=d.traj_len,
            seed=self.cfg.master_seed, tiers=tuple(self.cfg.sim.train_tiers),
        )
        ds.save_records(path, records)
        self._mark(f"records_{name}", path, h)
        return path

    def run_distill(self, mode: str | None = None, filter_failures: bool | None = None) -> Path:
        d = self.cfg.distill
        mode = d.mode if mode is None else mode
        filter_failures = d.filter_failures if filter_failures is None else filter_failures
        h = self._hash_generalist(mode, filter_failures)
        path = self.out / "generalist.ckpt"
        if self._fresh("generalist", h):
            return path
        datasets = {}
        for p in self.profiles:
            rec_path = self.out / f"records_{p.name}.jsonl"
            if not rec_path.exists():
                raise DependencyError(f"recording for {p.name!r} not found; run record first")
            datasets[p.id] = ds.load_records(rec_path)
        student, log = ds.train_distilled(
            datasets, epochs=d.epochs, lr=d.lr, batch=d.batch,
            mode=mode, filter_failures=filter_failures, seed=self.cfg.master_seed,
        )
        save_checkpoint(
            path, student.params, ds.CHECKPOINT_KIND, seed=self.cfg.master_seed,
            extra={"epoch_losses": log.epoch_losses, "mode": mode,
                   "filter_failures": filter_failures},
        )
        self._mark("generalist", h=h, path=path)
        return path

    # -- benchmarking -----------------------------------------------------------

    def _pilot(self, model: str, profile):
        if model == "teacher":
            if profile.name != "wheeled":
                raise DependencyError("the teacher only supports the wheeled embodiment")
            return TeacherPilot(profile)
        wm = self.load_wm()
        base = self.load_il()
        if model == "base":
            return BasePilot(wm, base)
        if model == "specialist":
            return SpecialistPilot(wm, base, self.load_specialist(profile.name))
        if model == "generalist":
            return GeneralistPilot(wm, base, self.load_generalist(), profile.id)
        raise DependencyError(f"unknown model {model!r}")

    def run_bench(
        self,
        models: list[str] | None = None,
        embodiments: list[str] | None = None,
        tiers: list[int] | None = None,
        stem: str = "bench",
    ) -> BenchReport:
        models = models or list(self.cfg.bench.models)
        tiers = tiers or list(self.cfg.bench.tiers)
        profiles = (
            [self._profile(n) for n in embodiments]
            if embodiments
            else list(self.profiles)
        )
        report = BenchReport()
        for profile in profiles:
            for model in models:
                if model == "teacher" and profile.name != "wheeled":
                    continue
                pilot = self._pilot(model, profile)
                for tier in tiers:
                    # one trial-seed stream per (embodiment, tier) so every
                    # model sees identical maps and starts
                    row_seed = self.cfg.master_seed * 1009 + profile.id * 101 + tier
                    trials = run_trials(
                        pilot, profile, tier,
                        n_trials=self.cfg.bench.n_trials, master_seed=row_seed,
                    )
                    report.rows.append(BenchRow(profile.name, model, tier, trials))
        emit_report(report, self.out, stem=stem)
        return report

    # -- full run -----------------------------------------------------------------

    def run_all(self) -> BenchReport:
        self.run_demos()
        self.run_wm()
        self.run_il()
        for p in self.profiles:
            self.run_specialist(p.name)
        for p in self.profiles:
            self.run_record(p.name)
        self.run_distill()
        return self.run_bench()
