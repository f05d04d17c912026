"""Non-parametric time-series forecasting over a layered residual memory.

Forecasts are similarity-weighted aggregates of stored training windows:
layer 1 matches on the periodic time step, deeper layers match residuals
after mean centering, and every layer's prediction adds up to the final
forecast.  Each prediction can be attributed back to individual bank
entries.
"""

from .bank import (
    BankEntry,
    CandidateSet,
    MemoryBank,
    build_bank,
    candidate_set,
    circular_distance,
    load_bank,
    mean_of,
    save_bank,
)
from .config import KernelConfig, ModelConfig, Scaling
from .dataset import (
    Manifest,
    NearZeroReport,
    RawSeries,
    SeriesWindow,
    SplitSpec,
    WindowSet,
    ingest,
    make_windows,
    near_zero_ratio,
    split_windows,
    weekday_of_day,
)
from .errors import (
    BankFormatError,
    ComputationError,
    DataError,
    EmptyCandidateSetError,
)
from .evaluate import (
    EvaluationResult,
    MetricSet,
    SweepResult,
    evaluate,
    evaluate_historical_inertia,
    historical_inertia,
    metrics,
    run_sweep,
)
from .interpret import (
    ContributionReport,
    aggregate_by_day_of_week,
    aggregate_by_source_day,
    contributions,
)
from .kernel import (
    ScoreSet,
    distances,
    nadaraya_watson,
    normalize_distances,
    normalize_scores,
    scale_scores,
    score_candidates,
)
from .predictor import (
    BatchResult,
    LayerTrace,
    PredictionTrace,
    Strategy,
    build_and_predict,
    predict,
    predict_batch,
    truncate_layers,
)
from .synthetic import periodic_pattern, periodic_series

__version__ = "0.1.0"

__all__ = [
    "BankEntry",
    "BankFormatError",
    "BatchResult",
    "CandidateSet",
    "ComputationError",
    "ContributionReport",
    "DataError",
    "EmptyCandidateSetError",
    "EvaluationResult",
    "KernelConfig",
    "LayerTrace",
    "Manifest",
    "MemoryBank",
    "MetricSet",
    "ModelConfig",
    "NearZeroReport",
    "PredictionTrace",
    "RawSeries",
    "Scaling",
    "ScoreSet",
    "SeriesWindow",
    "SplitSpec",
    "Strategy",
    "SweepResult",
    "WindowSet",
    "aggregate_by_day_of_week",
    "aggregate_by_source_day",
    "build_and_predict",
    "build_bank",
    "candidate_set",
    "circular_distance",
    "contributions",
    "distances",
    "evaluate",
    "evaluate_historical_inertia",
    "historical_inertia",
    "ingest",
    "load_bank",
    "make_windows",
    "mean_of",
    "metrics",
    "nadaraya_watson",
    "near_zero_ratio",
    "normalize_distances",
    "normalize_scores",
    "periodic_pattern",
    "periodic_series",
    "predict",
    "predict_batch",
    "run_sweep",
    "save_bank",
    "scale_scores",
    "score_candidates",
    "split_windows",
    "truncate_layers",
    "weekday_of_day",
]
