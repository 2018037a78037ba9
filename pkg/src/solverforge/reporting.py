"""Report rendering: delimited per-task data, a text table, and figures.

Figures are written straight to files (Agg backend) so reports work in
headless environments: a metric summary bar chart with trial standard
deviations, and the best-fitness trajectory of an evolution run.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .benchmark import METRIC_NAMES, MetricsReport, TrialRecord, task_subset_mean, tool_accuracy

CSV_COLUMNS = (
    "task_id",
    "task_type",
    "trial",
    "executed",
    "tool_accuracy",
    "assist_score",
    "train_mean",
    "test_mean",
    "wall_time",
)


def write_records_csv(records: list[TrialRecord], path: str | Path) -> None:
    """One row per (task, trial): the raw data behind every aggregate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: (r.task_id, r.trial)):
            writer.writerow(
                [
                    r.task_id,
                    r.task_type,
                    r.trial,
                    int(r.executed),
                    f"{tool_accuracy(set(r.tools_used), set(r.tools_reference)):.6f}",
                    "" if r.assist_score is None else f"{r.assist_score:.6f}",
                    f"{task_subset_mean(r, 'train'):.6f}" if r.train_scores else "",
                    f"{task_subset_mean(r, 'test'):.6f}" if r.test_scores else "",
                    f"{r.wall_time:.3f}",
                ]
            )


def format_table(report: MetricsReport) -> str:
    """Plain-text metric table: name, mean, std over trials."""
    width = max(len(n) for n in METRIC_NAMES)
    lines = [f"{'metric'.ljust(width)}  {'mean':>8}  {'std':>8}"]
    lines.append("-" * (width + 20))
    for name in METRIC_NAMES:
        mean = report.means.get(name)
        std = report.stds.get(name)
        if mean is None:
            lines.append(f"{name.ljust(width)}  {'-':>8}  {'-':>8}")
        else:
            lines.append(f"{name.ljust(width)}  {mean:8.4f}  {std:8.4f}")
    return "\n".join(lines) + "\n"


def render_metrics_figure(report: MetricsReport, path: str | Path) -> None:
    """Bar chart of every computed aggregate metric with std error bars."""
    names = [n for n in METRIC_NAMES if report.means.get(n) is not None]
    means = [report.means[n] for n in names]
    stds = [report.stds[n] for n in names]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(names) + 2), 4.5))
    positions = range(len(names))
    ax.bar(positions, means, yerr=stds, capsize=3, color="#4878b0")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(names, rotation=40, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"Benchmark metrics (mean ± std over {report.trials} trials)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fitness_history(history: list[dict], path: str | Path) -> None:
    """Best fitness per generation for one evolution run."""
    generations = [rec["generation"] for rec in history]
    best = [rec["best_fitness"] for rec in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(generations, best, marker="o", color="#b04848")
    ax.set_xlabel("generation")
    ax.set_ylabel("best fitness")
    ax.set_ylim(0, 1.05)
    ax.set_title("Evolution best-fitness trajectory")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
