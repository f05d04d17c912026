"""Layered retrieval forecasting against a memory bank.

A query window is matched layer by layer: at each layer the query's
current residual is scored against the bank entries' residuals at that
layer, the score-weighted aggregate of the entries' future residuals
becomes the layer prediction, and the aggregate of the historical
residuals is subtracted from the query to form its next residual.  The
final forecast is the running sum of the layer predictions.

Two strategies produce identical numbers:

* Standard walks the layers of a fully built bank.
* MemoryEfficient starts from the raw layer-1 slab and constructs each
  next bank layer on the fly, retaining at most two layers of entry
  residuals at any moment (the query residuals ride along as overhead).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .bank import (
    MemoryBank,
    check_layer1_coverage,
    circular_distance,
    next_layer_residuals,
)
from .config import ModelConfig
from .dataset import WindowSet
from .errors import ComputationError, DataError, EmptyCandidateSetError
from .kernel import BATCH_CELL_BUDGET, batch_scores, pairwise_distances


class Strategy(enum.Enum):
    STANDARD = "standard"
    MEMORY_EFFICIENT = "mem-efficient"


@dataclass(frozen=True)
class LayerTrace:
    """Everything one layer contributed to one query.

    ``residual_input`` is the query's residual entering the layer, before
    centering; ``input_mean`` is the scalar offset subtracted at layers
    >= 2 (0.0 at layer 1, where no centering happens).  ``raw_scores``
    are pre-normalization; excluded candidates carry raw score 0.
    """

    layer: int
    candidate_positions: np.ndarray
    candidate_ids: np.ndarray
    raw_scores: np.ndarray
    normalized_scores: np.ndarray
    prediction: np.ndarray
    residual_input: np.ndarray
    input_mean: float


@dataclass(frozen=True)
class PredictionTrace:
    """Per-layer capture for one query plus the final forecast."""

    query_id: int | None
    periodic_step: int
    prediction: np.ndarray
    layers: tuple[LayerTrace, ...]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def layer_predictions(self) -> np.ndarray:
        return np.stack([lt.prediction for lt in self.layers])


@dataclass(frozen=True)
class BatchResult:
    """Batch forecasts with per-layer terms and storage accounting.

    ``layer_predictions`` has shape (num_layers, n_queries, pred_len);
    ``predictions`` is its sequential sum over the layer axis, so
    ``predictions_at(k)`` for k == num_layers reproduces ``predictions``
    bit for bit.  ``peak_residual_bytes`` counts entry-residual slabs
    retained by the strategy (the whole bank for Standard, at most two
    layers for MemoryEfficient).
    """

    predictions: np.ndarray
    layer_predictions: np.ndarray
    traces: tuple[PredictionTrace, ...] | None
    peak_residual_bytes: int
    strategy: Strategy

    @property
    def num_layers(self) -> int:
        return self.layer_predictions.shape[0]

    def predictions_at(self, k: int) -> np.ndarray:
        """Forecasts using only the first ``k`` layers."""
        if not 1 <= k <= self.num_layers:
            raise ValueError(
                f"k must be in [1, {self.num_layers}], got {k}"
            )
        return np.cumsum(self.layer_predictions[:k], axis=0)[-1]


def truncate_layers(trace: PredictionTrace, k: int) -> np.ndarray:
    """Forecast from the first ``k`` layers of a captured trace."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > trace.num_layers:
        raise ValueError(
            f"trace has {trace.num_layers} layers, cannot truncate to {k}"
        )
    return np.cumsum(trace.layer_predictions()[:k], axis=0)[-1]


def _query_step(
    layer: int,
    x_l: np.ndarray,
    y_l: np.ndarray,
    bank_psteps: np.ndarray,
    entry_ids: np.ndarray,
    config: ModelConfig,
    qx: np.ndarray,
    qsteps: np.ndarray,
    exclude_pos: np.ndarray,
    keep_traces: bool,
):
    """Match every query against one bank layer.

    Returns (layer predictions, next query residuals, per-query trace
    rows or None).
    """
    m = qx.shape[0]
    n = x_l.shape[0]
    kcfg = config.kernel
    pred = np.empty((m, y_l.shape[1]))
    q_next = np.empty_like(qx)
    trace_rows: list[LayerTrace | None] | None = [None] * m if keep_traces else None

    if layer == 1:
        for s in np.unique(qsteps):
            rows = np.flatnonzero(qsteps == s)
            near = circular_distance(bank_psteps, int(s), config.steps_per_period)
            pool = np.flatnonzero(near <= config.tolerance)
            excluded = exclude_pos[rows][:, None] == pool[None, :]
            if pool.size == 0 or (~excluded).sum(axis=1).min() == 0:
                raise EmptyCandidateSetError(
                    f"periodic step {int(s)} has no candidates within "
                    f"tolerance {config.tolerance}"
                )
            dist = pairwise_distances(qx[rows], x_l[pool])
            raw, scores = batch_scores(dist, kcfg, excluded)
            pred[rows] = scores @ y_l[pool]
            q_next[rows] = qx[rows] - scores @ x_l[pool]
            if keep_traces:
                for i, r in enumerate(rows):
                    trace_rows[r] = LayerTrace(
                        layer=layer,
                        candidate_positions=pool.copy(),
                        candidate_ids=entry_ids[pool].copy(),
                        raw_scores=raw[i].copy(),
                        normalized_scores=scores[i].copy(),
                        prediction=pred[r].copy(),
                        residual_input=qx[r].copy(),
                        input_mean=0.0,
                    )
        return pred, q_next, trace_rows

    offsets = x_l.mean(axis=1)
    cx = x_l - offsets[:, None]
    cy = y_l - offsets[:, None]
    q_offsets = qx.mean(axis=1)
    cq = qx - q_offsets[:, None]
    columns = np.arange(n)
    block = max(1, BATCH_CELL_BUDGET // max(n, 1))
    for start in range(0, m, block):
        rows = np.arange(start, min(start + block, m))
        dist = pairwise_distances(cq[rows], cx)
        excluded = exclude_pos[rows][:, None] == columns[None, :]
        raw, scores = batch_scores(dist, kcfg, excluded)
        pred[rows] = q_offsets[rows][:, None] + scores @ cy
        q_next[rows] = cq[rows] - scores @ cx
        if keep_traces:
            for i, r in enumerate(rows):
                trace_rows[r] = LayerTrace(
                    layer=layer,
                    candidate_positions=columns.copy(),
                    candidate_ids=entry_ids.copy(),
                    raw_scores=raw[i].copy(),
                    normalized_scores=scores[i].copy(),
                    prediction=pred[r].copy(),
                    residual_input=qx[r].copy(),
                    input_mean=float(q_offsets[r]),
                )
    return pred, q_next, trace_rows


def _stream(
    x1: np.ndarray,
    y1: np.ndarray,
    bank_psteps: np.ndarray,
    entry_ids: np.ndarray,
    config: ModelConfig,
    num_layers: int,
    qx: np.ndarray,
    qsteps: np.ndarray,
    exclude_pos: np.ndarray,
    keep_traces: bool,
):
    """Interleave bank layer construction with query matching.

    At most two entry-residual slabs (current and next layer) are alive
    at any point; the peak is instrumented and returned.
    """
    cur_x, cur_y = x1, y1
    slab = cur_x.nbytes + cur_y.nbytes
    peak = slab
    layer_preds = np.empty((num_layers, qx.shape[0], y1.shape[1]))
    rows_by_layer = []
    q_cur = qx
    for l in range(1, num_layers + 1):
        pred_l, q_cur, rows = _query_step(
            l, cur_x, cur_y, bank_psteps, entry_ids, config, q_cur, qsteps,
            exclude_pos, keep_traces,
        )
        layer_preds[l - 1] = pred_l
        rows_by_layer.append(rows)
        if l < num_layers:
            nxt_x, nxt_y = next_layer_residuals(
                cur_x, cur_y, bank_psteps, config, layer=l
            )
            peak = max(peak, slab + nxt_x.nbytes + nxt_y.nbytes)
            cur_x, cur_y = nxt_x, nxt_y
            slab = nxt_x.nbytes + nxt_y.nbytes
    return layer_preds, rows_by_layer, peak


def _assemble(
    layer_preds: np.ndarray,
    rows_by_layer,
    qsteps: np.ndarray,
    query_ids,
    keep_traces: bool,
    peak: int,
    strategy: Strategy,
) -> BatchResult:
    predictions = np.cumsum(layer_preds, axis=0)[-1]
    traces = None
    if keep_traces:
        m = predictions.shape[0]
        traces = tuple(
            PredictionTrace(
                query_id=None if query_ids is None else int(query_ids[i]),
                periodic_step=int(qsteps[i]),
                prediction=predictions[i].copy(),
                layers=tuple(rows[i] for rows in rows_by_layer),
            )
            for i in range(m)
        )
    return BatchResult(
        predictions=predictions,
        layer_predictions=layer_preds,
        traces=traces,
        peak_residual_bytes=int(peak),
        strategy=strategy,
    )


def _check_queries(qx, qsteps, seq_len, steps_per_period):
    qx = np.ascontiguousarray(np.atleast_2d(np.asarray(qx, dtype=np.float64)))
    if qx.size == 0:
        raise ValueError("at least one query window is required")
    if qx.ndim != 2 or qx.shape[1] != seq_len:
        raise ValueError(
            f"query windows must have {seq_len} steps, got shape {qx.shape}"
        )
    qsteps = np.atleast_1d(np.asarray(qsteps, dtype=np.int64))
    if qsteps.shape != (qx.shape[0],):
        raise ValueError(
            f"need one periodic step per query ({qx.shape[0]}), got "
            f"{qsteps.shape}"
        )
    if qsteps.min() < 0 or qsteps.max() >= steps_per_period:
        raise ValueError("periodic steps must lie in [0, steps_per_period)")
    return qx, qsteps


def _exclusion_positions(bank: MemoryBank | None, exclude_ids, m: int,
                         position_of=None) -> np.ndarray:
    exclude_pos = np.full(m, -1, dtype=np.int64)
    if exclude_ids is None:
        return exclude_pos
    exclude_ids = np.atleast_1d(np.asarray(exclude_ids, dtype=np.int64))
    if exclude_ids.shape != (m,):
        raise ValueError(
            f"need one exclusion id per query ({m}), got {exclude_ids.shape}"
        )
    lookup = bank.position_of if position_of is None else position_of
    for i, e in enumerate(exclude_ids):
        if e >= 0:
            pos = lookup(int(e))
            if pos is not None:
                exclude_pos[i] = pos
    return exclude_pos


def predict_batch(
    bank: MemoryBank,
    queries: np.ndarray,
    periodic_steps,
    num_layers: int | None = None,
    strategy: Strategy | str = Strategy.STANDARD,
    keep_traces: bool = False,
    exclude_ids=None,
    query_ids=None,
) -> BatchResult:
    """Forecast a batch of query windows against a built bank.

    ``exclude_ids`` names, per query, a bank entry the query must not
    match (its own entry, for leave-one-out evaluation on the training
    split); pass -1 or None entries for no exclusion.
    """
    strategy = Strategy(strategy)
    cfg = bank.config
    qx, qsteps = _check_queries(queries, periodic_steps, cfg.seq_len,
                                cfg.steps_per_period)
    m = qx.shape[0]
    k = bank.num_layers if num_layers is None else int(num_layers)
    if k < 1:
        raise ValueError(f"num_layers must be >= 1, got {k}")
    exclude_pos = _exclusion_positions(bank, exclude_ids, m)

    if strategy is Strategy.STANDARD:
        if k > bank.num_layers:
            raise ComputationError(
                f"bank stores {bank.num_layers} layers; the standard "
                f"strategy cannot predict with {k}"
            )
        layer_preds = np.empty((k, m, cfg.pred_len))
        rows_by_layer = []
        q_cur = qx
        for l in range(1, k + 1):
            pred_l, q_cur, rows = _query_step(
                l, bank.x_layers[l - 1], bank.y_layers[l - 1],
                bank.periodic_steps, bank.entry_ids, cfg, q_cur, qsteps,
                exclude_pos, keep_traces,
            )
            layer_preds[l - 1] = pred_l
            rows_by_layer.append(rows)
        peak = bank.residual_nbytes
    else:
        if bank.num_layers < 1:
            raise ComputationError(
                "bank lacks the raw layer-1 residuals required by the "
                "memory-efficient strategy"
            )
        layer_preds, rows_by_layer, peak = _stream(
            bank.x_layers[0], bank.y_layers[0], bank.periodic_steps,
            bank.entry_ids, cfg, k, qx, qsteps, exclude_pos, keep_traces,
        )
    return _assemble(layer_preds, rows_by_layer, qsteps, query_ids,
                     keep_traces, peak, strategy)


def build_and_predict(
    windows: WindowSet,
    config: ModelConfig,
    queries: np.ndarray,
    periodic_steps,
    num_layers: int | None = None,
    keep_traces: bool = False,
    exclude_ids=None,
    query_ids=None,
) -> BatchResult:
    """Memory-efficient forecasting straight from training windows.

    Never materializes the full bank: layers are built as prediction
    advances and dropped once consumed.
    """
    n = len(windows)
    if n < 2:
        raise DataError(f"need at least 2 training windows, got {n}")
    if windows.seq_len != config.seq_len or windows.pred_len != config.pred_len:
        raise DataError(
            f"window shape ({windows.seq_len}, {windows.pred_len}) does not "
            f"match config ({config.seq_len}, {config.pred_len})"
        )
    if windows.steps_per_period != config.steps_per_period:
        raise DataError(
            "windows and config disagree on steps_per_period "
            f"({windows.steps_per_period} vs {config.steps_per_period})"
        )
    qx, qsteps = _check_queries(queries, periodic_steps, config.seq_len,
                                config.steps_per_period)
    bank_psteps = np.asarray(windows.periodic_steps, dtype=np.int64)
    check_layer1_coverage(bank_psteps, config.steps_per_period,
                          config.tolerance)
    entry_ids = np.asarray(windows.indices, dtype=np.int64)
    k = config.num_layers if num_layers is None else int(num_layers)
    if k < 1:
        raise ValueError(f"num_layers must be >= 1, got {k}")
    position_by_id = {int(e): i for i, e in enumerate(entry_ids)}
    exclude_pos = _exclusion_positions(
        None, exclude_ids, qx.shape[0], position_of=position_by_id.get
    )
    layer_preds, rows_by_layer, peak = _stream(
        np.asarray(windows.x, dtype=np.float64),
        np.asarray(windows.y, dtype=np.float64),
        bank_psteps, entry_ids, config, k, qx, qsteps, exclude_pos,
        keep_traces,
    )
    return _assemble(layer_preds, rows_by_layer, qsteps, query_ids,
                     keep_traces, peak, Strategy.MEMORY_EFFICIENT)


def predict(
    bank: MemoryBank,
    query_x: np.ndarray,
    query_periodic_step: int,
    num_layers: int | None = None,
    query_id: int | None = None,
    exclude_id: int | None = None,
    strategy: Strategy | str = Strategy.STANDARD,
) -> tuple[np.ndarray, PredictionTrace]:
    """Forecast one query window, always capturing the full trace."""
    result = predict_batch(
        bank,
        np.asarray(query_x, dtype=np.float64)[None, :],
        [int(query_periodic_step)],
        num_layers=num_layers,
        strategy=strategy,
        keep_traces=True,
        exclude_ids=None if exclude_id is None else [int(exclude_id)],
        query_ids=None if query_id is None else [int(query_id)],
    )
    return result.predictions[0], result.traces[0]
