"""Seeded SR/WTT benchmark harness and report emission.

Each (embodiment, model, tier) row aggregates n seeded trials. A trial
draws its own map from the trial seed, runs the policy's full
perception-to-command loop to termination (25.6 s cap), and records the
outcome. SR is the fraction of trials that reach the goal; WTT is the
total travel time over successful trials divided by SR ("n/a" when SR=0).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mapgen import generate_map
from .profiles import EmbodimentProfile
from .simulation import DT, Env

CSV_HEADER = (
    "embodiment,model,tier,trials,sr_pct,wtt_s,reached,collided,fell,"
    "timeout,error,mean_success_time_s"
)
CAUSES = ("reached", "collided", "fell", "timeout", "error")


@dataclass(frozen=True)
class TrialResult:
    seed: int
    success: bool
    travel_time: float  # s
    cause: str
    path_length: float  # m


@dataclass
class BenchRow:
    embodiment: str
    model: str
    tier: int
    trials: list[TrialResult]

    def counts(self) -> dict[str, int]:
        return {c: sum(t.cause == c for t in self.trials) for c in CAUSES}

    def metrics(self):
        return compute_metrics(self.trials)


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)


def run_trials(
    policy,
    profile: EmbodimentProfile,
    tier: int,
    n_trials: int = 100,
    master_seed: int = 0,
) -> list[TrialResult]:
    """Per-trial seeds derive from (master_seed, trial index); each trial gets
    a fresh seed-derived map. Policy exceptions become cause 'error'."""
    results = []
    for i in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, i]))
        map_seed = int(rng.integers(2**31))
        try:
            env = Env(generate_map(tier, map_seed), profile)
            obs = env.reset(rng)
            policy.reset(env)
            path_len = 0.0
            prev = (env.state.x, env.state.y)
            while not env.done:
                a = policy.act(obs, env)
                result = env.step(a)
                obs = result.observation
                cur = (env.state.x, env.state.y)
                path_len += math.hypot(cur[0] - prev[0], cur[1] - prev[1])
                prev = cur
            cause = env.cause
            travel = env.state.steps * DT
        except Exception:
            results.append(TrialResult(i, False, 0.0, "error", 0.0))
            continue
        results.append(TrialResult(i, cause == "reached", travel, cause, path_len))
    return results


def compute_metrics(trials: list[TrialResult]):
    """(SR, WTT); WTT is the string sentinel 'n/a' when nothing succeeded."""
    if not trials:
        raise ValueError("compute_metrics needs at least one trial")
    n = len(trials)
    successes = [t for t in trials if t.success]
    sr = len(successes) / n
    if sr == 0:
        return 0.0, "n/a"
    wtt = sum(t.travel_time for t in successes) / sr
    return sr, wtt


def _fmt_wtt(wtt) -> str:
    return wtt if isinstance(wtt, str) else f"{wtt:.2f}"


def report_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for row in report.rows:
        sr, wtt = row.metrics()
        counts = row.counts()
        successes = [t for t in row.trials if t.success]
        mst = f"{sum(t.travel_time for t in successes) / len(successes):.2f}" if successes else "n/a"
        buf.write(
            f"{row.embodiment},{row.model},{row.tier},{len(row.trials)},"
            f"{100.0 * sr:.1f},{_fmt_wtt(wtt)},"
            f"{counts['reached']},{counts['collided']},{counts['fell']},"
            f"{counts['timeout']},{counts['error']},{mst}\n"
        )
    return buf.getvalue()


def report_markdown(report: BenchReport) -> str:
    buf = io.StringIO()
    buf.write("# Benchmark report\n")
    by_emb: dict[str, list[BenchRow]] = {}
    for row in report.rows:
        by_emb.setdefault(row.embodiment, []).append(row)
    for emb, rows in by_emb.items():
        buf.write(f"\n## {emb}\n\n")
        buf.write("| model | tier | trials | SR (%) | WTT (s) | reached | collided | fell | timeout | error |\n")
        buf.write("|---|---|---|---|---|---|---|---|---|---|\n")
        for row in rows:
            sr, wtt = row.metrics()
            c = row.counts()
            buf.write(
                f"| {row.model} | {row.tier} | {len(row.trials)} | {100.0 * sr:.1f} "
                f"| {_fmt_wtt(wtt)} | {c['reached']} | {c['collided']} | {c['fell']} "
                f"| {c['timeout']} | {c['error']} |\n"
            )
    return buf.getvalue()


def emit_report(report: BenchReport, out_dir: str | Path, stem: str = "bench") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    md_path = out_dir / f"{stem}.md"
    csv_path.write_text(report_csv(report))
    md_path.write_text(report_markdown(report))
    return csv_path, md_path


def parse_csv(text: str) -> list[dict]:
    lines = text.strip().split("\n")
    if lines[0] != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    cols = CSV_HEADER.split(",")
    return [dict(zip(cols, line.split(","))) for line in lines[1:]]
