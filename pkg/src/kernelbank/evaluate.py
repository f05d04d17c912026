"""Metrics, the last-values baseline, and the evaluation/sweep harness.

Evaluation treats each sensor as an independent univariate series: build
a bank from its training windows, forecast its target-split windows, and
score them.  Cross-sensor averaging is macro by default (average the
per-sensor metrics); pooled averaging over all points sits behind a
flag.  Prediction never drops candidates: leave-one-out applies while
the bank is built, so a training-split query may match its own entry.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import build_bank
from .config import ModelConfig, Scaling
from .dataset import RawSeries, SplitSpec, split_windows
from .errors import DataError
from .predictor import BatchResult, Strategy, build_and_predict, predict_batch

SWEEP_AXES = ("layers", "gamma", "beta", "tolerance", "scaling")


@dataclass(frozen=True)
class MetricSet:
    """Forecast errors; mape is a percentage, absent when every point
    fell under the mask threshold."""

    mae: float
    rmse: float
    mape: float | None
    n_points: int
    n_mape_masked: int


@dataclass(frozen=True)
class EvaluationResult:
    per_sensor: dict[int, MetricSet]
    average: MetricSet
    pooled: bool
    split: str


@dataclass(frozen=True)
class SweepResult:
    axis: str
    values: tuple
    results: tuple[MetricSet, ...]


def metrics(
    predictions: np.ndarray,
    ground_truth: np.ndarray,
    zero_mask_threshold: float = 0.0,
) -> MetricSet:
    """MAE and RMSE over all points; MAPE over points with
    |truth| > threshold (the default masks exact zeros only)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if predictions.shape != ground_truth.shape:
        raise ValueError(
            f"shape mismatch: {predictions.shape} vs {ground_truth.shape}"
        )
    if predictions.size == 0:
        raise ValueError("cannot score an empty prediction set")
    err = predictions - ground_truth
    abs_err = np.abs(err)
    mae = float(abs_err.mean())
    rmse = float(np.sqrt(np.mean(err * err)))
    kept = np.abs(ground_truth) > zero_mask_threshold
    n_masked = int(predictions.size - kept.sum())
    if kept.any():
        mape = float(100.0 * np.mean(abs_err[kept] / np.abs(ground_truth[kept])))
    else:
        mape = None
    return MetricSet(mae=mae, rmse=rmse, mape=mape,
                     n_points=int(predictions.size), n_mape_masked=n_masked)


def historical_inertia(query_x: np.ndarray, pred_len: int) -> np.ndarray:
    """Baseline that repeats the last ``pred_len`` input values."""
    query_x = np.asarray(query_x, dtype=np.float64)
    if pred_len < 1:
        raise ValueError(f"pred_len must be >= 1, got {pred_len}")
    if pred_len > query_x.shape[-1]:
        raise ValueError(
            f"pred_len {pred_len} exceeds input length {query_x.shape[-1]}"
        )
    return query_x[..., -pred_len:].copy()


# ---------------------------------------------------------------------------
# Cross-sensor evaluation.
# ---------------------------------------------------------------------------


def _macro_average(per_sensor: dict[int, MetricSet]) -> MetricSet:
    sets = list(per_sensor.values())
    mapes = [m.mape for m in sets if m.mape is not None]
    return MetricSet(
        mae=float(np.mean([m.mae for m in sets])),
        rmse=float(np.mean([m.rmse for m in sets])),
        mape=float(np.mean(mapes)) if mapes else None,
        n_points=sum(m.n_points for m in sets),
        n_mape_masked=sum(m.n_mape_masked for m in sets),
    )


def _pooled_sums(predictions, ground_truth, zero_mask_threshold):
    err = np.abs(predictions - ground_truth)
    kept = np.abs(ground_truth) > zero_mask_threshold
    return (
        predictions.size,
        math.fsum(err.ravel()),
        math.fsum((err * err).ravel()),
        int(kept.sum()),
        math.fsum((err[kept] / np.abs(ground_truth[kept])).ravel()),
    )


def _pooled_average(sums) -> MetricSet:
    n = sum(s[0] for s in sums)
    sum_abs = math.fsum(s[1] for s in sums)
    sum_sq = math.fsum(s[2] for s in sums)
    n_kept = sum(s[3] for s in sums)
    sum_ape = math.fsum(s[4] for s in sums)
    return MetricSet(
        mae=sum_abs / n,
        rmse=math.sqrt(sum_sq / n),
        mape=100.0 * sum_ape / n_kept if n_kept else None,
        n_points=n,
        n_mape_masked=n - n_kept,
    )


def _sensor_forecast(
    series: RawSeries,
    sensor: int,
    config: ModelConfig,
    strategy: Strategy,
    split: SplitSpec,
    on_split: str,
    num_layers: int | None,
) -> tuple[BatchResult, np.ndarray]:
    parts = split_windows(series, sensor, config.seq_len, config.pred_len,
                          split)
    if on_split not in parts:
        raise ValueError(f"unknown split {on_split!r}")
    train = parts["train"]
    target = parts[on_split]
    if strategy is Strategy.STANDARD:
        bank = build_bank(train, config, sensor_id=sensor)
        result = predict_batch(
            bank, target.x, target.periodic_steps, num_layers=num_layers,
        )
    else:
        result = build_and_predict(
            train, config, target.x, target.periodic_steps,
            num_layers=num_layers,
        )
    return result, target.y


def _resolve_sensors(series: RawSeries, sensors) -> list[int]:
    chosen = list(range(series.n_sensors)) if sensors is None else list(sensors)
    if not chosen:
        raise ValueError("no sensors selected")
    for s in chosen:
        if not 0 <= s < series.n_sensors:
            raise DataError(
                f"sensor {s} out of range for {series.n_sensors}-sensor data"
            )
    return chosen


def evaluate(
    series: RawSeries,
    config: ModelConfig,
    strategy: Strategy | str = Strategy.STANDARD,
    sensors=None,
    split: SplitSpec = SplitSpec(),
    on_split: str = "test",
    pooled: bool = False,
    threads: int = 1,
    zero_mask_threshold: float = 0.0,
    num_layers: int | None = None,
) -> EvaluationResult:
    """Per-sensor metrics plus the cross-sensor average."""
    strategy = Strategy(strategy)
    chosen = _resolve_sensors(series, sensors)

    def worker(sensor: int):
        result, truth = _sensor_forecast(
            series, sensor, config, strategy, split, on_split, num_layers
        )
        score = metrics(result.predictions, truth, zero_mask_threshold)
        sums = _pooled_sums(result.predictions, truth, zero_mask_threshold)
        return sensor, score, sums

    rows = _run_workers(worker, chosen, threads)
    per_sensor = {sensor: score for sensor, score, _ in rows}
    if pooled:
        average = _pooled_average([sums for _, _, sums in rows])
    else:
        average = _macro_average(per_sensor)
    return EvaluationResult(per_sensor=per_sensor, average=average,
                            pooled=pooled, split=on_split)


def _run_workers(worker, sensors, threads):
    if threads <= 1 or len(sensors) == 1:
        return [worker(s) for s in sensors]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, sensors))


def evaluate_historical_inertia(
    series: RawSeries,
    seq_len: int,
    pred_len: int,
    sensors=None,
    split: SplitSpec = SplitSpec(),
    on_split: str = "test",
    pooled: bool = False,
    zero_mask_threshold: float = 0.0,
) -> EvaluationResult:
    """Score the last-values baseline with the same averaging rules."""
    chosen = _resolve_sensors(series, sensors)
    per_sensor = {}
    sums = []
    for sensor in chosen:
        parts = split_windows(series, sensor, seq_len, pred_len, split)
        target = parts[on_split]
        baseline = historical_inertia(target.x, pred_len)
        per_sensor[sensor] = metrics(baseline, target.y, zero_mask_threshold)
        sums.append(_pooled_sums(baseline, target.y, zero_mask_threshold))
    average = _pooled_average(sums) if pooled else _macro_average(per_sensor)
    return EvaluationResult(per_sensor=per_sensor, average=average,
                            pooled=pooled, split=on_split)


# ---------------------------------------------------------------------------
# Hyperparameter sweeps.
# ---------------------------------------------------------------------------


def run_sweep(
    series: RawSeries,
    config: ModelConfig,
    axis: str,
    grid,
    strategy: Strategy | str = Strategy.STANDARD,
    sensors=None,
    split: SplitSpec = SplitSpec(),
    on_split: str = "test",
    pooled: bool = False,
    threads: int = 1,
    zero_mask_threshold: float = 0.0,
) -> SweepResult:
    """Evaluate along one hyperparameter axis, others fixed.

    The layers axis forecasts once at the deepest grid value and scores
    prefix sums of the layer predictions; other axes re-run the full
    evaluation per value.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(grid)
    if not values:
        raise ValueError("sweep grid is empty")

    if axis == "layers":
        depths = [int(v) for v in values]
        if min(depths) < 1:
            raise ValueError("layer counts must be >= 1")
        deepest = max(depths)
        deep_config = config.with_changes(num_layers=deepest)
        strategy = Strategy(strategy)
        chosen = _resolve_sensors(series, sensors)

        def worker(sensor: int):
            result, truth = _sensor_forecast(
                series, sensor, deep_config, strategy, split, on_split,
                deepest,
            )
            scores = [
                metrics(result.predictions_at(k), truth, zero_mask_threshold)
                for k in depths
            ]
            sums = [
                _pooled_sums(result.predictions_at(k), truth,
                             zero_mask_threshold)
                for k in depths
            ]
            return sensor, scores, sums

        rows = _run_workers(worker, chosen, threads)
        results = []
        for pos in range(len(depths)):
            if pooled:
                results.append(_pooled_average([sums[pos] for _, _, sums in rows]))
            else:
                results.append(_macro_average(
                    {sensor: scores[pos] for sensor, scores, _ in rows}
                ))
        return SweepResult(axis=axis, values=tuple(depths),
                           results=tuple(results))

    results = []
    for value in values:
        if axis == "scaling":
            changed = config.with_changes(scaling=Scaling(value))
        elif axis == "tolerance":
            changed = config.with_changes(tolerance=int(value))
        else:
            changed = config.with_changes(**{axis: float(value)})
        outcome = evaluate(
            series, changed, strategy=strategy, sensors=sensors, split=split,
            on_split=on_split, pooled=pooled, threads=threads,
            zero_mask_threshold=zero_mask_threshold,
        )
        results.append(outcome.average)
    return SweepResult(axis=axis, values=tuple(values),
                       results=tuple(results))


# ---------------------------------------------------------------------------
# Artifact writers.
# ---------------------------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def metric_dict(score: MetricSet) -> dict:
    return {
        "mae": score.mae,
        "rmse": score.rmse,
        "mape": score.mape,
        "n_points": score.n_points,
        "n_mape_masked": score.n_mape_masked,
    }


def result_dict(outcome: EvaluationResult) -> dict:
    return {
        "split": outcome.split,
        "pooled": outcome.pooled,
        "average": metric_dict(outcome.average),
        "per_sensor": {
            str(sensor): metric_dict(score)
            for sensor, score in sorted(outcome.per_sensor.items())
        },
    }


def sweep_dict(sweep: SweepResult) -> dict:
    return {
        "axis": sweep.axis,
        "points": [
            {"value": _plain(value), **metric_dict(score)}
            for value, score in zip(sweep.values, sweep.results)
        ],
    }


def _plain(value):
    if isinstance(value, Scaling):
        return value.value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def write_metrics_csv(outcome: EvaluationResult, path: str | Path) -> None:
    lines = ["sensor,mae,rmse,mape,n_points,n_mape_masked"]
    for sensor, score in sorted(outcome.per_sensor.items()):
        lines.append(_metric_row(str(sensor), score))
    lines.append(_metric_row("average", outcome.average))
    Path(path).write_text("\n".join(lines) + "\n")


def _metric_row(label: str, score: MetricSet) -> str:
    mape = "" if score.mape is None else repr(score.mape)
    return (
        f"{label},{score.mae!r},{score.rmse!r},{mape},"
        f"{score.n_points},{score.n_mape_masked}"
    )


def write_sweep_csv(sweep: SweepResult, path: str | Path) -> None:
    lines = ["axis,value,mae,rmse,mape"]
    for value, score in zip(sweep.values, sweep.results):
        mape = "" if score.mape is None else repr(score.mape)
        lines.append(
            f"{sweep.axis},{_plain(value)},{score.mae!r},{score.rmse!r},{mape}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_json(sweep: SweepResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(sweep_dict(sweep), indent=2) + "\n")
