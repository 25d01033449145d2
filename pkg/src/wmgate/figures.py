"""Figure rendering for the report path.

Every chart is derived from the same aggregates the CSV tables carry;
the delimited output remains the contract, the PNGs sit next to it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import CaseStats, CurvePoint, ErrorBreakdown, FrontierPoint

_CATEGORY_ORDER = ["EgoM", "ObjM", "EgoAct", "Goal", "Pers"]


def save_report_accuracy(table_rows: list[dict], path: Path) -> None:
    """Grouped per-category accuracy bars, one group per strategy."""
    fig, ax = plt.subplots(figsize=(8, 4))
    n = len(table_rows)
    width = 0.8 / max(1, n)
    xs = range(len(_CATEGORY_ORDER))
    for i, row in enumerate(table_rows):
        values = [row[c] if row[c] != "" else 0.0 for c in _CATEGORY_ORDER]
        offs = [x + (i - (n - 1) / 2) * width for x in xs]
        ax.bar(offs, values, width=width, label=row["strategy"])
    ax.set_xticks(list(xs))
    ax.set_xticklabels(_CATEGORY_ORDER)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_case_distribution(stats: CaseStats, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = list(stats.fractions)
    values = [100 * stats.fractions[k] for k in labels]
    ax.bar([k.value for k in labels], values, color=["#4c9f70", "#c0504d", "#6a89cc", "#9b59b6"])
    ax.set_ylabel("fraction of episodes (%)")
    ax.set_title(f"imagination effect vs {stats.pairing[0]} baseline")
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_view_curve(points: list[CurvePoint], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([p.views for p in points], [100 * p.accuracy for p in points], marker="o")
    ax.set_xlabel("forced imagined views")
    ax.set_ylabel("accuracy (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_frontier(points: list[FrontierPoint], path: Path) -> None:
    """Accuracy vs mean pseudo-tokens; bubble size tracks wall time."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    max_time = max((p.mean_wall_time for p in points), default=0.0) or 1.0
    for p in points:
        size = 80 + 600 * (p.mean_wall_time / max_time)
        ax.scatter(p.mean_pseudo_tokens / 1000.0, 100 * p.accuracy, s=size, alpha=0.6)
        ax.annotate(p.strategy, (p.mean_pseudo_tokens / 1000.0, 100 * p.accuracy),
                    fontsize=8, ha="center", va="bottom")
    ax.set_xlabel("mean pseudo-tokens (K)")
    ax.set_ylabel("accuracy (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_error_breakdown(breakdown: ErrorBreakdown, path: Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    tags = [r.tag for r in breakdown.rows]
    ax1.bar(tags, [100 * r.invocation_rate for r in breakdown.rows], color="#6a89cc")
    ax1.set_ylabel("WM invocation rate (%)")
    ax2.bar(tags, [100 * r.gain for r in breakdown.rows], color="#4c9f70")
    ax2.set_ylabel("accuracy gain vs none (pp)")
    ax2.axhline(0, color="black", linewidth=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
