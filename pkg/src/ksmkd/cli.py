"""Command-line entry point: ``ksmkd <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid config.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import load_config, to_ini
from .errors import CheckpointError, ConfigError
from .metrics_log import read_events, to_csv

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required, help="INI run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    p.add_argument("--out", help="output directory for this stage")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ksmkd", description="Actor-critic knowledge selection for distillation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="write a synthetic TSV dataset")
    p.add_argument("--spec", help="config file whose [task] section describes the dataset")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("show-config", help="print the effective config")
    _common(p)

    p = sub.add_parser("train-teacher", help="finetune the teacher")
    _common(p)

    p = sub.add_parser("train-ksm", help="stage 1: train the knowledge selection module")
    _common(p)
    p.add_argument("--teacher", required=True)

    p = sub.add_parser("distill", help="stage 2: distill with a frozen KSM")
    _common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--ksm", required=True)
    p.add_argument("--mode", choices=("soft", "hard"))

    p = sub.add_parser("evaluate", help="score a model checkpoint on a split")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")

    p = sub.add_parser("baseline", help="fixed or random knowledge selection baselines")
    p.add_argument("kind", choices=("fixed", "random-all", "random-one"))
    _common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")

    p = sub.add_parser("sweep", help="grid search over config values")
    _common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--grid", action="append", default=[], metavar="SECTION.KEY=V1,V2",
                   help="values for one key (repeatable)")

    p = sub.add_parser("plot-extract", help="metrics log to CSV columns")
    p.add_argument("--log", required=True)
    p.add_argument("--metric", action="append", required=True)
    p.add_argument("--event", help="only rows of this event type")
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    path = getattr(args, "config", None) or getattr(args, "spec", None)
    return load_config(path, overrides)


def _print_manifest(m) -> None:
    print(json.dumps({"stage": m.stage, "artifacts": m.artifacts, "results": _brief(m.results)}, sort_keys=True))


def _brief(results: dict) -> dict:
    return {k: v for k, v in results.items() if k not in ("trajectory", "history", "episodes", "ranking")}


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "plot-extract":
        if not Path(args.log).exists():
            raise FileNotFoundError(f"log {args.log} does not exist")
        text = to_csv(read_events(args.log), args.metric, args.event)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0

    cfg = _config(args)
    if cmd == "make-data":
        paths = pipeline.make_data(cfg, args.out)
        print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    elif cmd == "show-config":
        sys.stdout.write(to_ini(cfg))
    elif cmd == "train-teacher":
        _print_manifest(pipeline.run_train_teacher(cfg, args.out))
    elif cmd == "train-ksm":
        _print_manifest(pipeline.run_train_ksm(cfg, args.teacher, args.out))
    elif cmd == "distill":
        _print_manifest(pipeline.run_distill(cfg, args.teacher, args.ksm, args.mode, args.out))
    elif cmd == "evaluate":
        print(json.dumps(pipeline.run_evaluate(args.model, cfg, args.split), sort_keys=True))
    elif cmd == "baseline":
        _print_manifest(pipeline.run_baseline(cfg, args.teacher, args.kind, args.trials, args.mode, args.out))
    elif cmd == "sweep":
        grid = pipeline.parse_grid(args.grid)
        _print_manifest(pipeline.run_sweep(cfg, args.teacher, grid, args.out))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
