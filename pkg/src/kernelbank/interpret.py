"""Per-entry attribution for a forecast, with day-level summaries.

Each bank entry's contribution is the sum over layers of its raw
(pre-normalization) similarity score times the mean of that layer's
prediction.  Entries outside a layer's candidate set contribute exactly
zero at that layer, so layer 1 attributes nothing to entries beyond the
periodic-step tolerance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import MemoryBank
from .dataset import weekday_of_day
from .errors import ComputationError
from .predictor import PredictionTrace

WEEKDAY_NAMES = (
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday",
    "Sunday",
)


@dataclass(frozen=True)
class ContributionReport:
    """One value per bank entry (every entry appears exactly once).

    ``layer_values[l - 1]`` holds the layer-l additive terms, so the
    layer-1 zero rule stays checkable after summation.  ``source_indices``
    are the absolute first history steps of the entry windows.
    """

    query_id: int | None
    entry_ids: np.ndarray
    source_indices: np.ndarray
    periodic_steps: np.ndarray
    values: np.ndarray
    layer_values: np.ndarray

    @property
    def n_entries(self) -> int:
        return self.entry_ids.size

    @property
    def num_layers(self) -> int:
        return self.layer_values.shape[0]


def contributions(trace: PredictionTrace, bank: MemoryBank) -> ContributionReport:
    """Attribute a traced forecast to the bank entries."""
    if trace is None or not trace.layers:
        raise ComputationError(
            "prediction trace carries no captured scores; rerun the "
            "prediction with tracing enabled"
        )
    n = bank.n_entries
    layer_values = np.zeros((trace.num_layers, n))
    for idx, layer in enumerate(trace.layers):
        if layer.raw_scores is None:
            raise ComputationError(
                "prediction trace carries no captured scores; rerun the "
                "prediction with tracing enabled"
            )
        layer_values[idx, layer.candidate_positions] = (
            layer.raw_scores * float(layer.prediction.mean())
        )
    return ContributionReport(
        query_id=trace.query_id,
        entry_ids=bank.entry_ids.copy(),
        source_indices=bank.entry_ids - (bank.config.seq_len - 1),
        periodic_steps=bank.periodic_steps.copy(),
        values=layer_values.sum(axis=0),
        layer_values=layer_values,
    )


def aggregate_by_source_day(
    report: ContributionReport,
    bank: MemoryBank,
    steps_per_period: int | None = None,
) -> dict[int, float]:
    """Sum contributions per whole period ("day") of the entry index."""
    t = bank.config.steps_per_period if steps_per_period is None else steps_per_period
    days = report.entry_ids // t
    return {
        int(day): math.fsum(report.values[days == day])
        for day in np.unique(days)
    }


def aggregate_by_day_of_week(
    report: ContributionReport,
    bank: MemoryBank,
    manifest,
) -> np.ndarray:
    """Sum contributions per weekday (Monday first) of the entry's day.

    ``manifest`` is anything carrying start_timestamp, steps_per_period,
    and step_interval_minutes.
    """
    by_day = aggregate_by_source_day(report, bank)
    sums = np.zeros(7)
    for day, value in by_day.items():
        sums[weekday_of_day(manifest, day)] += value
    return sums


def write_report_json(
    report: ContributionReport,
    path: str | Path,
    by_day: dict[int, float] | None = None,
    by_weekday: np.ndarray | None = None,
) -> None:
    payload = {
        "query_id": report.query_id,
        "contributions": [
            {
                "entry_id": int(report.entry_ids[i]),
                "source_index": int(report.source_indices[i]),
                "periodic_step": int(report.periodic_steps[i]),
                "value": float(report.values[i]),
            }
            for i in range(report.n_entries)
        ],
        "by_day": None if by_day is None else [
            {"day": day, "value": value} for day, value in by_day.items()
        ],
        "by_weekday": None if by_weekday is None else [
            {"weekday": WEEKDAY_NAMES[i], "value": float(by_weekday[i])}
            for i in range(7)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_report_csv(report: ContributionReport, path: str | Path) -> None:
    """Flat per-entry export for downstream plotting."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["entry_id", "source_index", "periodic_step", "value"])
        for i in range(report.n_entries):
            writer.writerow([
                int(report.entry_ids[i]),
                int(report.source_indices[i]),
                int(report.periodic_steps[i]),
                repr(float(report.values[i])),
            ])
