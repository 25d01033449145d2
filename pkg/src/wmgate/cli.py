"""Command-line interface.

Subcommands: ``gen`` (write an episode suite), ``run`` (execute a
strategy), ``analyze`` (cases / curve / frontier / error breakdown /
gating quality), ``nav`` (navigation suite), ``report`` (tables and
figures).  ``--seed`` overrides the config's run seed; the remote
backend endpoint comes from config or ``WMGATE_ENDPOINT``; log verbosity
from ``WMGATE_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, config_to_jsonable, load_config
from .controller import StrategyKind
from .errors import ConfigError, GenerationError, LogError
from .harness import (
    analyze_curve,
    execute,
    generate_suite,
    load_or_generate_suite,
    report,
    run_nav_suite,
    write_nav_csv,
)
from .runlog import write_suite

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config run_seed")
    parser.add_argument("--workers", type=int, default=None, help="override worker count")
    parser.add_argument("--out", default=None, help="output directory (or file for gen)")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, run_seed=args.seed)
    if getattr(args, "workers", None):
        cfg = dataclasses.replace(cfg, workers=args.workers)
    if getattr(args, "strategy", None):
        cfg = dataclasses.replace(cfg, strategy=StrategyKind(args.strategy))
    return cfg


def _cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load(args)
    episodes = generate_suite(cfg)
    out = Path(args.out or Path(cfg.out_dir) / "suite.jsonl")
    write_suite(out, config_to_jsonable(cfg), episodes)
    print(f"wrote {len(episodes)} episodes to {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    result = execute(cfg, Path(args.out) if args.out else None)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    n = result.summary["n_episodes"]
    expected = len(result.episodes)
    if n != expected:
        print(f"only {n}/{expected} episodes produced records", file=sys.stderr)
        return 1
    print(f"log: {result.log_path}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out or "analysis")
    logs = [Path(p) for p in args.log]
    summary = report(logs, out, figures=not args.no_figures)
    if args.curve:
        counts = [int(t) for t in args.curve.split(",")]
        cfg = _load_first_config(logs[0])
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, run_seed=args.seed)
        points = analyze_curve(cfg, counts, out, figures=not args.no_figures)
        summary["view_curve"] = [{"views": p.views, "accuracy": p.accuracy} for p in points]
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def _load_first_config(log_path: Path) -> ExperimentConfig:
    from .config import config_from_jsonable
    from .runlog import read_run_log

    header, _ = read_run_log(log_path)
    return config_from_jsonable(header["config"])


def _cmd_nav(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    modes = ["adaptive", "off"] if args.mode == "both" else [args.mode]
    rows = []
    for mode in modes:
        metrics, _records = run_nav_suite(cfg, mode)
        rows.append((mode, metrics))
        print(
            f"{mode}: NE={metrics.ne:.3f} OSR={100 * metrics.osr:.1f} "
            f"SR={100 * metrics.sr:.1f} SPL={100 * metrics.spl:.1f}"
        )
    write_nav_csv(out / "nav_metrics.csv", rows)
    print(f"wrote {out / 'nav_metrics.csv'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.out or "report")
    summary = report([Path(p) for p in args.log], out, figures=not args.no_figures)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmgate",
        description="Adaptive world-model imagination control: suites, runs, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate an episode suite JSONL")
    _add_common(p_gen)
    p_gen.set_defaults(func=_cmd_gen)

    p_run = sub.add_parser("run", help="execute one strategy over the suite")
    _add_common(p_run)
    p_run.add_argument(
        "--strategy",
        choices=[s.value for s in StrategyKind if s is not StrategyKind.UPPER_BOUND],
        default=None,
        help="override the config strategy",
    )
    p_run.set_defaults(func=_cmd_run)

    p_an = sub.add_parser("analyze", help="paired analyses over run logs")
    p_an.add_argument("--log", action="append", required=True, help="run log (repeatable)")
    p_an.add_argument("--curve", default=None, help="comma-separated forced view counts")
    p_an.add_argument("--seed", type=int, default=None)
    p_an.add_argument("--out", default=None)
    p_an.add_argument("--no-figures", action="store_true")
    p_an.set_defaults(func=_cmd_analyze)

    p_nav = sub.add_parser("nav", help="run the navigation suite")
    _add_common(p_nav)
    p_nav.add_argument("--mode", choices=["adaptive", "off", "both"], default="both")
    p_nav.set_defaults(func=_cmd_nav)

    p_rep = sub.add_parser("report", help="accuracy/budget tables from run logs")
    p_rep.add_argument("--log", action="append", required=True, help="run log (repeatable)")
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--no-figures", action="store_true")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("WMGATE_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GenerationError, LogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
