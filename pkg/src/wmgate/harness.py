"""Seeded experiment execution and report generation.

``execute`` turns a config into a JSONL run log plus a summary; episodes
run independently (optionally across worker processes) with per-episode
seeds derived from (run seed, episode id), so the log bytes never depend
on scheduling.  ``report`` renders the per-category accuracy table, the
paired analyses, and their figures from one or more logs.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .agents import (
    RemoteAnswerer,
    RemotePolicy,
    RemoteVerifier,
    SyntheticAnswerer,
    SyntheticPolicy,
    SyntheticVerifier,
)
from .analysis import (
    case_stats,
    error_breakdown,
    frontier,
    gating_quality,
    view_curve,
    write_breakdown_csv,
    write_case_csv,
    write_curve_csv,
    write_frontier_csv,
    write_gating_csv,
)
from .config import ExperimentConfig, config_from_jsonable, config_to_jsonable
from .controller import Backends, RunRecord, StrategyKind, run_strategy, upper_bound
from .errors import GenerationError
from .nav import NavConfig, NavMetrics, generate_nav_episode, nav_metrics, run_nav
from .runlog import read_run_log, read_suite, write_run_log, write_suite
from .seeds import derive_rng, derive_seed, episode_seed
from .tasks import Episode, QuestionCategory, generate_episode
from .world import WorldModel, generate_scene

log = logging.getLogger(__name__)

CATEGORY_ORDER = [c.value for c in QuestionCategory]
REPORT_COLUMNS = ["strategy"] + CATEGORY_ORDER + ["Avg.", "# Token (K)", "Avg. WM"]
ABLATION_ORDER = ["none", "always_on", "gating_only", "adaptive"]


def build_backends(cfg: ExperimentConfig) -> Backends:
    world = WorldModel(sensor=cfg.suite.sensor, noise=cfg.noise)
    if cfg.backends.kind == "remote":
        remote = cfg.backends.remote
        return Backends(
            policy=RemotePolicy(remote),
            verifier=RemoteVerifier(remote),
            answerer=RemoteAnswerer(remote),
            world=world,
        )
    return Backends(
        policy=SyntheticPolicy(cfg.backends.policy),
        verifier=SyntheticVerifier(cfg.backends.verifier),
        answerer=SyntheticAnswerer(cfg.backends.answerer),
        world=world,
    )


def generate_suite(cfg: ExperimentConfig) -> list[Episode]:
    """Deterministic episode suite from the config's seed and mix."""
    suite = cfg.suite
    names = sorted(suite.categories)
    weights = [suite.categories[n] for n in names]
    episodes: list[Episode] = []
    for i in range(suite.n_episodes):
        rng = derive_rng("category", cfg.run_seed, i)
        category = QuestionCategory(rng.choices(names, weights=weights, k=1)[0])
        episode = None
        for attempt in range(25):
            scene = generate_scene(suite.scene, derive_seed(cfg.run_seed, "scene", i, attempt))
            try:
                episode = generate_episode(
                    scene,
                    category,
                    derive_seed(cfg.run_seed, "episode", i, attempt),
                    sensor=suite.sensor,
                    episode_id=f"ep{i:05d}",
                )
                break
            except GenerationError:
                continue
        if episode is None:
            raise GenerationError(
                f"episode {i} ({category.value}) infeasible after 25 scene attempts"
            )
        episodes.append(episode)
    return episodes


def load_or_generate_suite(cfg: ExperimentConfig) -> list[Episode]:
    if cfg.suite.path:
        _, episodes = read_suite(Path(cfg.suite.path))
        return episodes
    return generate_suite(cfg)


def _run_one(args: tuple[ExperimentConfig, Episode]) -> RunRecord:
    cfg, episode = args
    backends = build_backends(cfg)
    return run_strategy(
        cfg.strategy,
        episode,
        cfg.controller,
        backends,
        episode_seed(cfg.run_seed, episode.id),
        cfg.cost,
    )


@dataclass
class ExecutionResult:
    log_path: Path
    summary: dict
    records: list[RunRecord]
    episodes: list[Episode]


def summarize(records: list[RunRecord], episodes: list[Episode]) -> dict:
    by_id = {e.id: e for e in episodes}
    per_category: dict[str, list[bool]] = {name: [] for name in CATEGORY_ORDER}
    for r in records:
        per_category[by_id[r.episode_id].category.value].append(r.correct)
    n = len(records)
    acc = {
        name: (sum(v) / len(v) if v else None) for name, v in per_category.items()
    }
    present = [a for a in acc.values() if a is not None]
    return {
        "n_episodes": n,
        "accuracy": (sum(r.correct for r in records) / n) if n else 0.0,
        "accuracy_per_category": acc,
        "macro_accuracy": (sum(present) / len(present)) if present else 0.0,
        "wm_calls_mean": (sum(r.budget.wm_calls for r in records) / n) if n else 0.0,
        "imagined_frames_mean": (
            sum(r.budget.imagined_frames for r in records) / n
        ) if n else 0.0,
        "pseudo_tokens_mean": (
            sum(r.budget.pseudo_tokens for r in records) / n
        ) if n else 0.0,
        "fallbacks": sum(r.fallback for r in records),
    }


def execute(cfg: ExperimentConfig, out_dir: Path | None = None,
            episodes: list[Episode] | None = None) -> ExecutionResult:
    """Run the configured strategy over the suite and persist the log."""
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if episodes is None:
        episodes = load_or_generate_suite(cfg)
    jobs = [(cfg, ep) for ep in episodes]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=16))
    else:
        records = [_run_one(job) for job in jobs]
    records.sort(key=lambda r: r.episode_id)
    log_path = out / f"{cfg.strategy.value}.jsonl"
    echo = config_to_jsonable(cfg)
    # Execution details don't shape results; keep log bytes scheduling-free.
    echo.pop("workers", None)
    echo.pop("out_dir", None)
    write_run_log(log_path, echo, records)
    summary = summarize(records, episodes)
    summary["strategy"] = cfg.strategy.value
    summary["run_seed"] = cfg.run_seed
    with open(out / f"{cfg.strategy.value}.summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return ExecutionResult(log_path=log_path, summary=summary, records=records,
                           episodes=episodes)


def run_nav_suite(cfg: ExperimentConfig, imagination: str) -> tuple[NavMetrics, list]:
    """Run the navigation suite in one imagination mode."""
    episodes = [
        generate_nav_episode(cfg.nav.graph, derive_seed(cfg.run_seed, "nav", i),
                             episode_id=f"nav{i:04d}")
        for i in range(cfg.nav.n_episodes)
    ]
    nav_config = NavConfig(imagination=imagination, gate_accuracy=cfg.nav.gate_accuracy)
    world = WorldModel(sensor=nav_config.sensor, noise=cfg.nav.noise)
    records = [
        run_nav(ep, nav_config, world, episode_seed(cfg.run_seed, ep.id)) for ep in episodes
    ]
    return nav_metrics(records, episodes), records


def write_nav_csv(path: Path, rows: list[tuple[str, NavMetrics]]) -> None:
    """Metrics table with the conventional column layout (rates in %)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "NE", "OSR", "SR", "SPL"])
        for mode, m in rows:
            writer.writerow(
                [mode, round(m.ne, 4), round(100 * m.osr, 2), round(100 * m.sr, 2),
                 round(100 * m.spl, 2)]
            )


# --- reporting ----------------------------------------------------------------


def _load_log(path: Path) -> tuple[ExperimentConfig, list[RunRecord], list[Episode]]:
    header, records = read_run_log(path)
    cfg = config_from_jsonable(header["config"])
    episodes = load_or_generate_suite(cfg)
    return cfg, records, episodes


def report(log_paths: list[Path], out_dir: Path, figures: bool = True) -> dict:
    """Emit the per-category accuracy table plus paired analyses and figures.

    Rows follow the ablation order none / always_on / gating_only /
    adaptive when present.  Paired analyses (cases, error breakdown,
    gating quality, upper bound) require a ``none`` log among the inputs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded: dict[str, tuple[ExperimentConfig, list[RunRecord], list[Episode]]] = {}
    for path in log_paths:
        cfg, records, episodes = _load_log(Path(path))
        strategy = cfg.strategy.value
        if strategy in loaded:
            raise ValueError(f"duplicate strategy {strategy!r} among logs")
        loaded[strategy] = (cfg, records, episodes)

    ordered = [s for s in ABLATION_ORDER if s in loaded] + sorted(
        s for s in loaded if s not in ABLATION_ORDER
    )
    table_rows = []
    for strategy in ordered:
        cfg, records, episodes = loaded[strategy]
        s = summarize(records, episodes)
        row = {"strategy": strategy}
        for name in CATEGORY_ORDER:
            a = s["accuracy_per_category"][name]
            row[name] = "" if a is None else round(100 * a, 1)
        row["Avg."] = round(100 * s["macro_accuracy"], 1)
        row["# Token (K)"] = round(s["pseudo_tokens_mean"] / 1000.0, 2)
        row["Avg. WM"] = round(s["wm_calls_mean"], 2)
        table_rows.append(row)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(table_rows)

    summary: dict = {"table": table_rows, "pairing": None}
    points = frontier({s: loaded[s][1] for s in ordered})
    write_frontier_csv(points, out_dir / "frontier.csv")

    stats = None
    breakdown = None
    quality = None
    if "none" in loaded:
        none_records = loaded["none"][1]
        imagination = next(
            (s for s in ("adaptive", "always_on", "gating_only") if s in loaded), None
        )
        if imagination:
            cfg_i, imag_records, episodes = loaded[imagination]
            stats = case_stats(none_records, imag_records)
            write_case_csv(stats, out_dir / "cases.csv")
            breakdown = error_breakdown(imag_records, none_records, episodes)
            write_breakdown_csv(breakdown, out_dir / "error_breakdown.csv")
            summary["pairing"] = list(stats.pairing)
            summary["cases"] = {k.value: v for k, v in stats.fractions.items()}
            summary["cases_three_way"] = stats.three_way
            ub_acc, _ = upper_bound(none_records, imag_records)
            summary["upper_bound"] = {
                "none": sum(r.correct for r in none_records) / max(1, len(none_records)),
                "imagination": sum(r.correct for r in imag_records) / max(1, len(imag_records)),
                "upper_bound": ub_acc,
            }
    for name in ("adaptive", "gating_only"):
        if name in loaded:
            cfg_a, recs, episodes = loaded[name]
            quality = gating_quality(recs, episodes, cfg_a.suite.sensor)
            write_gating_csv(quality, out_dir / "gating_quality.csv")
            summary["gating_quality"] = quality
            break

    with open(out_dir / "report_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)

    if figures:
        from . import figures as figmod

        figmod.save_report_accuracy(table_rows, out_dir / "fig_accuracy.png")
        figmod.save_frontier(points, out_dir / "fig_frontier.png")
        if stats is not None:
            figmod.save_case_distribution(stats, out_dir / "fig_cases.png")
        if breakdown is not None:
            figmod.save_error_breakdown(breakdown, out_dir / "fig_error_breakdown.png")
    return summary


def analyze_curve(
    cfg: ExperimentConfig,
    forced_counts: list[int],
    out_dir: Path,
    figures: bool = True,
    episodes: list[Episode] | None = None,
):
    """Forced-view accuracy curve for the config's suite and backends."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if episodes is None:
        episodes = load_or_generate_suite(cfg)
    backends = build_backends(cfg)
    points = view_curve(episodes, backends, forced_counts, cfg.run_seed,
                        cfg.controller, cfg.cost)
    write_curve_csv(points, out_dir / "view_curve.csv")
    if figures:
        from . import figures as figmod

        figmod.save_view_curve(points, out_dir / "fig_view_curve.png")
    return points
