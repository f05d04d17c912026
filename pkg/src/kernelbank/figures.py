"""Render evaluation, sweep, forecast, and attribution figures to files.

Every function writes one PNG next to the delimited output and returns
the path.  The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import EvaluationResult, SweepResult, _plain
from .interpret import WEEKDAY_NAMES, ContributionReport


def render_metrics(outcome: EvaluationResult, path: str | Path) -> Path:
    """Per-sensor MAE bars with the cross-sensor average marked."""
    sensors = sorted(outcome.per_sensor)
    maes = [outcome.per_sensor[s].mae for s in sensors]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(range(len(sensors)), maes, color="steelblue")
    ax.axhline(outcome.average.mae, color="firebrick", linestyle="--",
               label=f"average {outcome.average.mae:.2f}")
    ax.set_xlabel("sensor")
    ax.set_ylabel("MAE")
    ax.set_title(f"Per-sensor MAE ({outcome.split} split)")
    if len(sensors) <= 30:
        ax.set_xticks(range(len(sensors)))
        ax.set_xticklabels([str(s) for s in sensors], rotation=90, fontsize=7)
    ax.legend()
    return _save(fig, path)


def render_sweep(sweep: SweepResult, path: str | Path) -> Path:
    """Metric curves along the swept axis."""
    labels = [str(_plain(v)) for v in sweep.values]
    maes = [r.mae for r in sweep.results]
    rmses = [r.rmse for r in sweep.results]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if sweep.axis == "scaling":
        pos = np.arange(len(labels))
        ax.bar(pos - 0.2, maes, width=0.4, label="MAE", color="steelblue")
        ax.bar(pos + 0.2, rmses, width=0.4, label="RMSE", color="darkorange")
        ax.set_xticks(pos)
        ax.set_xticklabels(labels)
    else:
        ax.plot(labels, maes, marker="o", label="MAE", color="steelblue")
        ax.plot(labels, rmses, marker="s", label="RMSE", color="darkorange")
    ax.set_xlabel(sweep.axis)
    ax.set_ylabel("error")
    ax.set_title(f"Sweep over {sweep.axis}")
    ax.legend()
    return _save(fig, path)


def render_forecasts(
    predictions: np.ndarray,
    truth: np.ndarray | None,
    path: str | Path,
    query_ids=None,
    max_panels: int = 6,
) -> Path:
    """Predicted windows (solid) against ground truth (dashed) if given."""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    count = min(max_panels, predictions.shape[0])
    fig, axes = plt.subplots(count, 1, figsize=(7, 1.8 * count),
                             sharex=True, squeeze=False)
    steps = np.arange(1, predictions.shape[1] + 1)
    for i in range(count):
        ax = axes[i, 0]
        ax.plot(steps, predictions[i], marker="o", markersize=3,
                color="steelblue", label="forecast")
        if truth is not None:
            ax.plot(steps, np.asarray(truth)[i], linestyle="--", marker="x",
                    markersize=3, color="dimgray", label="actual")
        label = f"query {query_ids[i]}" if query_ids is not None else f"query {i}"
        ax.set_ylabel(label, fontsize=8)
        if i == 0:
            ax.legend(fontsize=7)
    axes[-1, 0].set_xlabel("steps ahead")
    fig.suptitle("Forecast windows")
    return _save(fig, path)


def render_contributions(
    report: ContributionReport,
    path: str | Path,
    by_day: dict[int, float] | None = None,
    by_weekday: np.ndarray | None = None,
) -> Path:
    """Per-entry attribution plus optional day-level summaries."""
    panels = 1 + (by_day is not None) + (by_weekday is not None)
    fig, axes = plt.subplots(panels, 1, figsize=(7.5, 2.8 * panels),
                             squeeze=False)
    ax = axes[0, 0]
    ax.plot(report.source_indices, report.values, linewidth=0.7,
            color="steelblue")
    ax.set_xlabel("source time step")
    ax.set_ylabel("contribution")
    title = "Entry contributions"
    if report.query_id is not None:
        title += f" for query {report.query_id}"
    ax.set_title(title)
    row = 1
    if by_day is not None:
        ax = axes[row, 0]
        days = sorted(by_day)
        ax.bar(days, [by_day[d] for d in days], color="darkorange")
        ax.set_xlabel("source day")
        ax.set_ylabel("contribution")
        row += 1
    if by_weekday is not None:
        ax = axes[row, 0]
        ax.bar(range(7), np.asarray(by_weekday), color="seagreen")
        ax.set_xticks(range(7))
        ax.set_xticklabels([name[:3] for name in WEEKDAY_NAMES])
        ax.set_ylabel("contribution")
    return _save(fig, path)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical across sessions
    fig.savefig(path, dpi=150, metadata={"Software": "kernelbank"})
    plt.close(fig)
    return path
