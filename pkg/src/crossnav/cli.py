"""Command-line interface for the training and benchmarking pipeline.

Exit codes: 0 success, 2 configuration/usage error, 3 missing upstream
artifact, 4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .autodiff import NumericError
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .pipeline import MODELS, DependencyError, Pipeline
from .profiles import DEFAULT_PROFILES

EMBODIMENTS = [p.name for p in DEFAULT_PROFILES]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossnav",
        description="Cross-embodiment navigation: train, distill, benchmark.",
    )
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("demo-gen", help="generate teacher demonstrations (wheeled)")
    sub.add_parser("train-wm", help="train the latent world model on demos")
    sub.add_parser("train-il", help="imitation-train the base policy")

    spec = sub.add_parser("train-specialist", help="residual PPO for one embodiment")
    spec.add_argument("--embodiment", required=True, choices=EMBODIMENTS)
    spec.add_argument("--curriculum", action="store_true",
                      help="ramp goal distances over the first half of training")
    spec.add_argument("--critic", choices=["state", "obs"], default=None,
                      help="critic input (obs = raw-observation ablation)")
    spec.add_argument("--from-scratch", action="store_true",
                      help="baseline: drop the base action, start from fresh weights")

    rec = sub.add_parser("record", help="record a specialist for distillation")
    rec.add_argument("--embodiment", required=True, choices=EMBODIMENTS)

    dist = sub.add_parser("distill", help="train the one-hot-conditioned generalist")
    dist.add_argument("--loss", choices=["kl", "mse"], default=None)
    dist.add_argument("--filter-failures", action="store_true",
                      help="train only on steps from successful episodes")

    bench = sub.add_parser("bench", help="run seeded benchmark trials")
    bench.add_argument("--model", required=True, choices=list(MODELS))
    bench.add_argument("--embodiment", choices=EMBODIMENTS, action="append",
                       help="restrict to an embodiment (repeatable)")
    bench.add_argument("--tier", type=int, choices=[1, 2, 3, 4], action="append",
                       help="restrict to a difficulty tier (repeatable)")

    sub.add_parser("all", help="run every stage in order, resuming where possible")
    return parser


def _dispatch(args, pipe: Pipeline) -> None:
    cmd = args.command
    if cmd == "demo-gen":
        print(f"demos: {pipe.run_demos()}")
    elif cmd == "train-wm":
        print(f"world model: {pipe.run_wm()}")
    elif cmd == "train-il":
        print(f"base policy: {pipe.run_il()}")
    elif cmd == "train-specialist":
        path = pipe.run_specialist(
            args.embodiment, curriculum=args.curriculum or None,
            critic=args.critic, from_scratch=args.from_scratch,
        )
        print(f"specialist ({args.embodiment}): {path}")
    elif cmd == "record":
        print(f"records ({args.embodiment}): {pipe.run_record(args.embodiment)}")
    elif cmd == "distill":
        path = pipe.run_distill(
            mode=args.loss, filter_failures=args.filter_failures or None
        )
        print(f"generalist: {path}")
    elif cmd == "bench":
        stem = f"bench_{args.model}"
        report = pipe.run_bench(
            models=[args.model], embodiments=args.embodiment,
            tiers=args.tier, stem=stem,
        )
        for row in report.rows:
            sr, wtt = row.metrics()
            wtt_s = wtt if isinstance(wtt, str) else f"{wtt:.2f}s"
            print(f"{row.embodiment:13s} {row.model:11s} tier {row.tier}: "
                  f"SR {100 * sr:.1f}% WTT {wtt_s}")
        print(f"report: {pipe.out / (stem + '.csv')}")
    elif cmd == "all":
        report = pipe.run_all()
        print(f"report: {pipe.out / 'bench.csv'} ({len(report.rows)} rows)")
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {cmd!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out_dir=args.out)
        pipe = Pipeline(cfg)
        _dispatch(args, pipe)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DependencyError, CheckpointError, FileNotFoundError) as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
