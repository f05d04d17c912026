"""Instance-wise similarity scoring.

The scoring pipeline for one query against a candidate set is:
Euclidean distances -> min-max normalization -> scaling -> score
normalization (scores sum to 1).  Scaled-but-unnormalized scores are kept
around because attribution reports are built from them.

A Gaussian-kernel Nadaraya-Watson estimator lives here as well; it is the
independent cross-check for the single-layer reduction of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import KernelConfig, Scaling
from .errors import ComputationError


@dataclass(frozen=True)
class ScoreSet:
    """Raw (scaled, pre-normalization) and normalized scores for one query."""

    raw: np.ndarray
    normalized: np.ndarray
    candidate_ids: np.ndarray | None = None


def distances(x: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``x`` to each row of ``candidates``."""
    x = np.asarray(x, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("candidate set must be a non-empty 2-D array")
    if candidates.shape[1] != x.shape[-1]:
        raise ValueError(
            f"length mismatch: query has {x.shape[-1]} steps, "
            f"candidates have {candidates.shape[1]}"
        )
    return np.linalg.norm(candidates - x, axis=1)


def normalize_distances(d: np.ndarray) -> np.ndarray:
    """Min-max normalize distances to [0, 1].

    A degenerate spread (max == min, e.g. a single candidate or all
    candidates equidistant) maps to all zeros: every candidate is treated
    as maximally similar, which is the continuous limit of the formula.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("cannot normalize an empty distance vector")
    if not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite")
    lo = d.min()
    span = d.max() - lo
    if span == 0.0:
        return np.zeros_like(d)
    return (d - lo) / span


def scale_scores(d: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Turn distances into raw similarity scores.

    EXPONENTIAL and COMPLEMENT expect min-max-normalized distances in
    [0, 1] unless ``config.minmax`` disables the normalization step;
    INVERSE_SQUARE and SIGMOID expect raw distances.
    """
    d = np.asarray(d, dtype=np.float64)
    if config.scaling.uses_normalized_distances and config.minmax:
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise ValueError(
                f"{config.scaling.value} scaling expects normalized distances "
                "in [0, 1]"
            )
    if config.scaling is Scaling.EXPONENTIAL:
        return np.exp(-np.power(config.gamma * d, config.beta))
    if config.scaling is Scaling.COMPLEMENT:
        return 1.0 - d
    if config.scaling is Scaling.INVERSE_SQUARE:
        return 1.0 / (d * d + config.epsilon)
    if config.scaling is Scaling.SIGMOID:
        return 1.0 / (1.0 + np.exp(d - config.mu))
    raise ValueError(f"unknown scaling {config.scaling!r}")


def normalize_scores(raw: np.ndarray) -> np.ndarray:
    """Divide raw scores by their sum so they form a convex combination."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot normalize an empty score vector")
    total = raw.sum()
    if total <= 0.0:
        raise ComputationError("similarity scores sum to zero; cannot normalize")
    return raw / total


def score_candidates(
    x: np.ndarray,
    candidates: np.ndarray,
    config: KernelConfig,
    candidate_ids: np.ndarray | None = None,
) -> ScoreSet:
    """Run the full scoring pipeline for one query against its candidates."""
    d = distances(x, candidates)
    if config.scaling.uses_normalized_distances and config.minmax:
        d = normalize_distances(d)
    raw = scale_scores(d, config)
    return ScoreSet(raw=raw, normalized=normalize_scores(raw), candidate_ids=candidate_ids)


def nadaraya_watson(
    x: np.ndarray,
    candidates_x: np.ndarray,
    candidates_y: np.ndarray,
    sigma: float,
) -> np.ndarray:
    """Gaussian-kernel Nadaraya-Watson regression estimate.

    Returns sum_j K(x, x_j) y_j / sum_k K(x, x_k) with
    K(a, b) = exp(-||a - b||^2 / (2 sigma^2)).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    candidates_x = np.asarray(candidates_x, dtype=np.float64)
    candidates_y = np.asarray(candidates_y, dtype=np.float64)
    if candidates_x.shape[0] == 0:
        raise ValueError("candidate set must be non-empty")
    d = distances(x, candidates_x)
    weights = np.exp(-(d * d) / (2.0 * sigma * sigma))
    total = weights.sum()
    if total == 0.0:
        raise ComputationError(
            "all kernel weights underflowed to zero; increase sigma"
        )
    return (weights / total) @ candidates_y


# ---------------------------------------------------------------------------
# Batched internals used by bank construction and prediction.
# ---------------------------------------------------------------------------

# rows x columns kept in flight per distance/score block; callers split
# row ranges so transient matrices stay around tens of megabytes
BATCH_CELL_BUDGET = 8_388_608


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs Euclidean distances between rows of ``a`` and ``b``.

    Uses the expanded quadratic form so the inner product runs through
    BLAS; the clamp guards against tiny negative values from cancellation.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2, out=d2)


def batch_scores(
    dist: np.ndarray,
    config: KernelConfig,
    excluded: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise scoring of a distance matrix.

    ``excluded`` marks (row, column) pairs that must not participate (an
    entry never scores against itself); excluded cells end up with raw and
    normalized score 0 and do not influence the min-max span.

    Returns (raw, normalized) matrices of the same shape as ``dist``.
    """
    work = np.array(dist, dtype=np.float64)
    if excluded is not None and excluded.any():
        work[excluded] = np.nan
    valid = ~np.isnan(work)
    if not valid.any(axis=1).all():
        raise ComputationError("a query has no admissible candidates")

    if config.scaling.uses_normalized_distances and config.minmax:
        lo = np.nanmin(work, axis=1, keepdims=True)
        hi = np.nanmax(work, axis=1, keepdims=True)
        span = hi - lo
        flat = (span == 0.0)[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            work = (work - lo) / span
        work[flat, :] = 0.0

    if config.scaling is Scaling.EXPONENTIAL:
        raw = np.exp(-np.power(config.gamma * work, config.beta))
    elif config.scaling is Scaling.COMPLEMENT:
        raw = 1.0 - work
    elif config.scaling is Scaling.INVERSE_SQUARE:
        raw = 1.0 / (work * work + config.epsilon)
    elif config.scaling is Scaling.SIGMOID:
        raw = 1.0 / (1.0 + np.exp(work - config.mu))
    else:
        raise ValueError(f"unknown scaling {config.scaling!r}")

    raw[~valid] = 0.0
    totals = raw.sum(axis=1, keepdims=True)
    if np.any(totals <= 0.0):
        raise ComputationError("similarity scores sum to zero; cannot normalize")
    return raw, raw / totals
