"""Loading raw multi-sensor series and slicing them into forecast windows.

A dataset is a plain CSV (rows = time steps, columns = sensors) plus a JSON
manifest sidecar carrying the periodic structure::

    {"steps_per_period": 288, "step_interval_minutes": 5,
     "start_timestamp": "2016-07-01T00:00:00", "has_header": false}

``n_steps`` / ``n_sensors`` may be added to the manifest to assert the
expected shape at load time.  Each sensor is treated as an independent
univariate series throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError


@dataclass(frozen=True)
class Manifest:
    steps_per_period: int
    step_interval_minutes: float
    start_timestamp: datetime | None = None
    has_header: bool = False
    n_steps: int | None = None
    n_sensors: int | None = None

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
        if "steps_per_period" not in payload or "step_interval_minutes" not in payload:
            raise DataError(
                f"manifest {path} must define steps_per_period and "
                "step_interval_minutes"
            )
        ts = payload.get("start_timestamp")
        start = None
        if ts is not None:
            try:
                start = datetime.fromisoformat(ts)
            except ValueError as exc:
                raise DataError(
                    f"manifest {path}: bad start_timestamp {ts!r}"
                ) from exc
        return cls(
            steps_per_period=int(payload["steps_per_period"]),
            step_interval_minutes=float(payload["step_interval_minutes"]),
            start_timestamp=start,
            has_header=bool(payload.get("has_header", False)),
            n_steps=payload.get("n_steps"),
            n_sensors=payload.get("n_sensors"),
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "steps_per_period": self.steps_per_period,
            "step_interval_minutes": self.step_interval_minutes,
            "has_header": self.has_header,
        }
        if self.start_timestamp is not None:
            payload["start_timestamp"] = self.start_timestamp.isoformat()
        if self.n_steps is not None:
            payload["n_steps"] = self.n_steps
        if self.n_sensors is not None:
            payload["n_sensors"] = self.n_sensors
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


@dataclass(frozen=True)
class RawSeries:
    """Immutable signal matrix of shape (n_steps, n_sensors)."""

    values: np.ndarray
    steps_per_period: int
    step_interval_minutes: float
    start_timestamp: datetime | None = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError(f"series must be 2-D, got shape {self.values.shape}")
        if self.steps_per_period < 2:
            raise DataError(
                f"steps_per_period must be >= 2, got {self.steps_per_period}"
            )

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    def sensor(self, index: int) -> np.ndarray:
        if not 0 <= index < self.n_sensors:
            raise DataError(
                f"sensor {index} out of range (dataset has {self.n_sensors})"
            )
        return self.values[:, index]


@dataclass(frozen=True)
class SeriesWindow:
    """One forecasting instance: history x, future y, and its time labels.

    ``index`` is the absolute time step of the last history value, so
    x covers steps [index - len(x) + 1, index] and y covers
    [index + 1, index + len(y)].
    """

    x: np.ndarray
    y: np.ndarray
    index: int
    periodic_step: int


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions."""

    train: float = 0.6
    validation: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.validation, self.test) <= 0:
            raise DataError("split fractions must all be positive")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1")

    def ranges(self, n_steps: int) -> dict[str, tuple[int, int]]:
        """Half-open [start, stop) step ranges for each split."""
        n_train = int(np.floor(self.train * n_steps))
        n_val = int(np.floor(self.validation * n_steps))
        if n_train == 0 or n_val == 0 or n_train + n_val >= n_steps:
            raise DataError(f"series of {n_steps} steps cannot be split {self}")
        return {
            "train": (0, n_train),
            "validation": (n_train, n_train + n_val),
            "test": (n_train + n_val, n_steps),
        }


class WindowSet:
    """Sliding windows of one sensor over one contiguous step range.

    Backed by dense arrays so bank construction and batch prediction can
    work on matrices; indexing yields :class:`SeriesWindow` views.
    """

    def __init__(self, x, y, indices, periodic_steps, steps_per_period):
        self.x = x
        self.y = y
        self.indices = indices
        self.periodic_steps = periodic_steps
        self.steps_per_period = steps_per_period

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> SeriesWindow:
        return SeriesWindow(
            x=self.x[i],
            y=self.y[i],
            index=int(self.indices[i]),
            periodic_step=int(self.periodic_steps[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    @property
    def pred_len(self) -> int:
        return self.y.shape[1]


def ingest(path: str | Path, manifest: str | Path | Manifest) -> RawSeries:
    """Load a CSV + manifest pair into an immutable RawSeries.

    Rejects missing files, shape mismatches against the manifest, and any
    non-finite cell (reported by row and column of the data matrix).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    if not isinstance(manifest, Manifest):
        manifest = Manifest.load(manifest)
    try:
        frame = pd.read_csv(
            path,
            header=0 if manifest.has_header else None,
            dtype=np.float64,
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    values = np.ascontiguousarray(frame.to_numpy(dtype=np.float64))
    if values.size == 0:
        raise DataError(f"{path} contains no data rows")

    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(
            f"{path}: non-finite value at data row {row}, column {col}"
        )
    if manifest.n_steps is not None and values.shape[0] != manifest.n_steps:
        raise DataError(
            f"{path}: expected {manifest.n_steps} steps per manifest, "
            f"found {values.shape[0]}"
        )
    if manifest.n_sensors is not None and values.shape[1] != manifest.n_sensors:
        raise DataError(
            f"{path}: expected {manifest.n_sensors} sensors per manifest, "
            f"found {values.shape[1]}"
        )
    values.setflags(write=False)
    return RawSeries(
        values=values,
        steps_per_period=manifest.steps_per_period,
        step_interval_minutes=manifest.step_interval_minutes,
        start_timestamp=manifest.start_timestamp,
    )


def make_windows(
    series: RawSeries,
    sensor: int,
    seq_len: int,
    pred_len: int,
    step_range: tuple[int, int] | None = None,
) -> WindowSet:
    """Stride-1 windows of one sensor, confined to ``step_range``.

    Windows never straddle the range boundary: both the history and the
    future of every window lie inside [start, stop).
    """
    signal = series.sensor(sensor)
    start, stop = step_range if step_range is not None else (0, series.n_steps)
    if not (0 <= start < stop <= series.n_steps):
        raise DataError(f"step range [{start}, {stop}) out of bounds")
    span = stop - start
    count = span - (seq_len + pred_len) + 1
    if count < 1:
        raise DataError(
            f"range of {span} steps is too short for seq_len={seq_len}, "
            f"pred_len={pred_len}"
        )
    stacked = np.lib.stride_tricks.sliding_window_view(
        signal[start:stop], seq_len + pred_len
    )
    x = np.ascontiguousarray(stacked[:, :seq_len], dtype=np.float64)
    y = np.ascontiguousarray(stacked[:, seq_len:], dtype=np.float64)
    indices = start + seq_len - 1 + np.arange(count, dtype=np.int64)
    periodic_steps = indices % series.steps_per_period
    return WindowSet(x, y, indices, periodic_steps, series.steps_per_period)


def split_windows(
    series: RawSeries,
    sensor: int,
    seq_len: int,
    pred_len: int,
    split: SplitSpec,
) -> dict[str, WindowSet]:
    """Windows per chronological split, built independently per split."""
    return {
        name: make_windows(series, sensor, seq_len, pred_len, rng)
        for name, rng in split.ranges(series.n_steps).items()
    }


@dataclass(frozen=True)
class NearZeroReport:
    per_sensor: np.ndarray
    average: float


def near_zero_ratio(series: RawSeries, fraction: float = 0.05) -> NearZeroReport:
    """Per-sensor share of values at or below ``fraction`` of that sensor's
    maximum, plus the cross-sensor average.

    An all-zero sensor has maximum 0, so every value qualifies and its
    ratio is 1.
    """
    values = series.values
    if values.shape[0] == 0:
        raise DataError("series has no values")
    thresholds = fraction * values.max(axis=0)
    ratios = (values <= thresholds).mean(axis=0)
    return NearZeroReport(per_sensor=ratios, average=float(ratios.mean()))


def weekday_of_day(series: RawSeries, day: int) -> int:
    """Weekday (Monday=0) of the given whole-period index.

    Requires the manifest start timestamp; one period is assumed to span
    ``steps_per_period * step_interval_minutes`` of wall-clock time.
    """
    if series.start_timestamp is None:
        raise DataError(
            "day-of-week labels need a start_timestamp in the manifest"
        )
    period_minutes = series.steps_per_period * series.step_interval_minutes
    moment = series.start_timestamp + pd.Timedelta(minutes=day * period_minutes)
    return int(moment.weekday())
