"""Paired-run analyses: case taxonomy, forced-view curve, cost frontier,
error-tag breakdown, and gating recall/precision.

Every analysis aggregates immutable run records and emits one CSV table
(plus a JSON summary from the harness); nothing here renders plots.
Cases are classified against the no-imagination baseline of the same
suite; the pairing is echoed into the output metadata.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .controller import Backends, ControllerConfig, CostModel, RunRecord, run_forced
from .seeds import episode_seed
from .tasks import Episode, ErrorTag, start_observations, sufficient
from .world import Sensor


class CaseLabel(str, Enum):
    HELPFUL = "helpful"
    MISLEADING = "misleading"
    UNNECESSARY = "unnecessary"
    HARMFUL = "harmful"


def classify_case(record_none: RunRecord, record_imagination: RunRecord) -> CaseLabel:
    """Effect of imagination on one episode, against the baseline arm.

    harmful (baseline right, invoked imagination wrong) refines the
    three-way taxonomy; fold it into unnecessary for three-way reports.
    """
    if record_none.episode_id != record_imagination.episode_id:
        raise ValueError(
            f"case classification needs matching episodes, got "
            f"{record_none.episode_id!r} vs {record_imagination.episode_id!r}"
        )
    invoked = record_imagination.budget.wm_calls > 0
    if record_none.correct:
        if record_imagination.correct or not invoked:
            return CaseLabel.UNNECESSARY
        return CaseLabel.HARMFUL
    return CaseLabel.HELPFUL if record_imagination.correct else CaseLabel.MISLEADING


@dataclass(frozen=True)
class CaseStats:
    counts: dict[CaseLabel, int]
    fractions: dict[CaseLabel, float]
    three_way: dict[str, float]  # harmful folded into unnecessary
    pairing: tuple[str, str]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def case_stats(records_none: list[RunRecord], records_imagination: list[RunRecord]) -> CaseStats:
    by_id = {r.episode_id: r for r in records_none}
    if set(by_id) != {r.episode_id for r in records_imagination}:
        raise ValueError("case stats need records aligned by episode_id")
    counts = {label: 0 for label in CaseLabel}
    for rec in records_imagination:
        counts[classify_case(by_id[rec.episode_id], rec)] += 1
    total = max(1, sum(counts.values()))
    fractions = {label: counts[label] / total for label in CaseLabel}
    three_way = {
        CaseLabel.HELPFUL.value: fractions[CaseLabel.HELPFUL],
        CaseLabel.MISLEADING.value: fractions[CaseLabel.MISLEADING],
        CaseLabel.UNNECESSARY.value: fractions[CaseLabel.UNNECESSARY]
        + fractions[CaseLabel.HARMFUL],
    }
    pairing = (
        records_none[0].strategy if records_none else "none",
        records_imagination[0].strategy if records_imagination else "?",
    )
    return CaseStats(counts=counts, fractions=fractions, three_way=three_way, pairing=pairing)


@dataclass(frozen=True)
class CurvePoint:
    views: int
    accuracy: float


def view_curve(
    episodes: list[Episode],
    backends: Backends,
    forced_counts: list[int],
    seed: int,
    config: ControllerConfig | None = None,
    cost_model: CostModel = CostModel(),
) -> list[CurvePoint]:
    """Accuracy of a fixed-imagination strategy at each forced view count.

    Per-episode seeds depend only on (seed, episode id), so the zero-view
    point reproduces the no-imagination strategy exactly.
    """
    if not forced_counts:
        raise ValueError("forced_counts must be nonempty")
    config = config or ControllerConfig()
    points = []
    for n in sorted(set(forced_counts)):
        correct = 0
        for episode in episodes:
            record = run_forced(
                episode, n, config, backends, episode_seed(seed, episode.id), cost_model
            )
            correct += record.correct
        points.append(CurvePoint(views=n, accuracy=correct / len(episodes) if episodes else 0.0))
    return points


@dataclass(frozen=True)
class FrontierPoint:
    strategy: str
    mean_pseudo_tokens: float
    accuracy: float
    mean_wall_time: float


def frontier(records_by_strategy: dict[str, list[RunRecord]]) -> list[FrontierPoint]:
    """One cost/accuracy point per strategy from budget means."""
    points = []
    for strategy in sorted(records_by_strategy):
        records = records_by_strategy[strategy]
        if not records:
            continue
        n = len(records)
        points.append(
            FrontierPoint(
                strategy=strategy,
                mean_pseudo_tokens=sum(r.budget.pseudo_tokens for r in records) / n,
                accuracy=sum(r.correct for r in records) / n,
                mean_wall_time=sum(r.budget.wall_time for r in records) / n,
            )
        )
    return points


@dataclass(frozen=True)
class ErrorBreakdownRow:
    tag: str
    n_episodes: int
    invocation_rate: float
    accuracy_imagination: float
    accuracy_none: float
    gain: float


@dataclass(frozen=True)
class ErrorBreakdown:
    rows: tuple[ErrorBreakdownRow, ...]

    @property
    def total_episodes(self) -> int:
        return sum(r.n_episodes for r in self.rows)


def error_breakdown(
    records_imagination: list[RunRecord],
    records_none: list[RunRecord],
    episodes: list[Episode],
) -> ErrorBreakdown:
    """Per construction-time tag: WM usage and accuracy gain over baseline."""
    ep_by_id = {e.id: e for e in episodes}
    none_by_id = {r.episode_id: r for r in records_none}
    groups: dict[ErrorTag, list[RunRecord]] = {tag: [] for tag in ErrorTag}
    for rec in records_imagination:
        groups[ep_by_id[rec.episode_id].error_tag].append(rec)
    rows = []
    for tag in ErrorTag:
        recs = groups[tag]
        if not recs:
            rows.append(ErrorBreakdownRow(tag.value, 0, 0.0, 0.0, 0.0, 0.0))
            continue
        n = len(recs)
        acc_imag = sum(r.correct for r in recs) / n
        acc_none = sum(none_by_id[r.episode_id].correct for r in recs) / n
        rows.append(
            ErrorBreakdownRow(
                tag=tag.value,
                n_episodes=n,
                invocation_rate=sum(r.budget.wm_calls > 0 for r in recs) / n,
                accuracy_imagination=acc_imag,
                accuracy_none=acc_none,
                gain=acc_imag - acc_none,
            )
        )
    return ErrorBreakdown(rows=tuple(rows))


def gating_quality(
    records_adaptive: list[RunRecord],
    episodes: list[Episode],
    sensor: Sensor,
) -> dict:
    """Recall/precision of invocation against the sufficiency ground truth.

    "Needs imagination" means the start frames do not satisfy the
    episode's evidence spec.  Undefined ratios are reported as None,
    never as zero.
    """
    ep_by_id = {e.id: e for e in episodes}
    needed_n = invoked_n = both = 0
    for rec in records_adaptive:
        episode = ep_by_id[rec.episode_id]
        needed = not sufficient(episode, start_observations(episode, sensor))
        invoked = rec.budget.wm_calls > 0
        needed_n += needed
        invoked_n += invoked
        both += needed and invoked
    return {
        "needed": needed_n,
        "invoked": invoked_n,
        "recall": (both / needed_n) if needed_n else None,
        "precision": (both / invoked_n) if invoked_n else None,
    }


# --- CSV emission -------------------------------------------------------------


def write_case_csv(stats: CaseStats, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "count", "fraction", "three_way_fraction"])
        for label in CaseLabel:
            three = stats.three_way.get(label.value, "")
            writer.writerow([label.value, stats.counts[label], stats.fractions[label], three])


def write_curve_csv(points: list[CurvePoint], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["views", "accuracy"])
        for p in points:
            writer.writerow([p.views, p.accuracy])


def write_frontier_csv(points: list[FrontierPoint], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "mean_pseudo_tokens", "accuracy", "mean_wall_time"])
        for p in points:
            writer.writerow([p.strategy, p.mean_pseudo_tokens, p.accuracy, p.mean_wall_time])


def write_breakdown_csv(breakdown: ErrorBreakdown, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tag", "n_episodes", "invocation_rate", "accuracy_imagination",
             "accuracy_none", "gain"]
        )
        for r in breakdown.rows:
            writer.writerow(
                [r.tag, r.n_episodes, r.invocation_rate, r.accuracy_imagination,
                 r.accuracy_none, r.gain]
            )


def write_gating_csv(quality: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["needed", "invoked", "recall", "precision"])
        writer.writerow(
            [
                quality["needed"],
                quality["invoked"],
                "" if quality["recall"] is None else quality["recall"],
                "" if quality["precision"] is None else quality["precision"],
            ]
        )
