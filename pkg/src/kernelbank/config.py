"""Model configuration: kernel hyperparameters and bank geometry."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class Scaling(enum.Enum):
    """How raw or normalized distances are turned into similarity scores.

    EXPONENTIAL and COMPLEMENT consume min-max-normalized distances in
    [0, 1]; INVERSE_SQUARE and SIGMOID consume raw Euclidean distances.
    """

    EXPONENTIAL = "exp"
    COMPLEMENT = "complement"
    INVERSE_SQUARE = "invsq"
    SIGMOID = "sigmoid"

    @property
    def uses_normalized_distances(self) -> bool:
        return self in (Scaling.EXPONENTIAL, Scaling.COMPLEMENT)


@dataclass(frozen=True)
class KernelConfig:
    """Similarity-score parameters.

    ``minmax`` disables the per-query min-max distance normalization when
    False; that mode exists for the kernel-regression equivalence checks
    and is not the production default.
    """

    gamma: float = 10.0
    beta: float = 1.5
    scaling: Scaling = Scaling.EXPONENTIAL
    epsilon: float = 1e-5  # inverse-square only
    mu: float = 0.5        # sigmoid only
    minmax: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class ModelConfig:
    """Full configuration of a layered memory-bank forecaster.

    ``seq_len``/``pred_len`` are the history and horizon lengths,
    ``steps_per_period`` the number of time steps in one repetition cycle
    (e.g. 288 for daily periodicity at 5-minute resolution), ``tolerance``
    the circular periodic-step matching window used at layer 1.
    """

    seq_len: int = 12
    pred_len: int = 12
    num_layers: int = 10
    tolerance: int = 3
    steps_per_period: int = 288
    gamma: float = 10.0
    beta: float = 1.5
    scaling: Scaling = Scaling.EXPONENTIAL
    epsilon: float = 1e-5
    mu: float = 0.5
    minmax: bool = True

    def __post_init__(self):
        if self.seq_len < 1 or self.pred_len < 1:
            raise ValueError("seq_len and pred_len must be >= 1")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.steps_per_period < 2:
            raise ValueError(
                f"steps_per_period must be >= 2, got {self.steps_per_period}"
            )
        # delegate the kernel-parameter checks
        self.kernel  # noqa: B018

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(
            gamma=self.gamma,
            beta=self.beta,
            scaling=self.scaling,
            epsilon=self.epsilon,
            mu=self.mu,
            minmax=self.minmax,
        )

    def with_changes(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)
