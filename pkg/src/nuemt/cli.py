"""Command-line front end.

    nuemt train --config cfg.json [--seed S] [--workers W] [--out DIR]
    nuemt evaluate --checkpoint ckpt.json [--env ID] [--episodes N]
                   [--horizon H] [--seed S]
    nuemt plot-data --runs DIR [DIR ...] --out FILE [--points N]

Exit codes: 0 on success, 1 on a configuration error (bad config file,
bad checkpoint/env pairing), 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from .errors import ConfigError
from .experiment import ExperimentConfig, emit_plot_data, evaluate, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nuemt",
        description="Derivative-free policy search: OpenAI-ES, multitask "
                    "mixture transfer, and sequential-stage baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training per the JSON config")
    p_train.add_argument("--config", required=True, help="path to config JSON")
    p_train.add_argument("--seed", type=int, default=None,
                         help="run only this seed (overrides config seeds)")
    p_train.add_argument("--workers", type=int, default=None,
                         help="evaluation worker processes")
    p_train.add_argument("--out", default=None, help="output directory")

    p_eval = sub.add_parser("evaluate", help="score a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--env", default=None,
                        help="environment id (default: from the checkpoint)")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--horizon", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=0)

    p_plot = sub.add_parser("plot-data",
                            help="merge run logs into plot-ready CSV curves")
    p_plot.add_argument("--runs", nargs="+", required=True,
                        help="training output directories to compare")
    p_plot.add_argument("--out", required=True, help="output CSV path")
    p_plot.add_argument("--points", type=int, default=200,
                        help="grid resolution (default 200)")
    return parser


def _cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    seeds = (args.seed,) if args.seed is not None else None
    summary = train(config, out_dir=args.out, workers=args.workers, seeds=seeds)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    mean, returns = evaluate(args.checkpoint, env_id=args.env,
                             episodes=args.episodes, horizon=args.horizon,
                             seed=args.seed)
    for i, value in enumerate(returns):
        print(f"episode {i}: {value!r}")
    print(f"mean return over {len(returns)} episodes: {mean!r}")
    return 0


def _cmd_plot(args) -> int:
    if args.points < 1:
        raise ConfigError(f"--points must be >= 1, got {args.points}")
    emit_plot_data(args.runs, args.out, points=args.points)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"train": _cmd_train, "evaluate": _cmd_evaluate,
               "plot-data": _cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
