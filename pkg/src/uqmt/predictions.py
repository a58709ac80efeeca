"""Containers for Gaussian predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianPrediction:
    """Predicted means and log-variances for a batch of inputs.

    ``epistemic`` and ``aleatoric`` are filled in by estimators that combine
    both (their sum is the total variance before flooring).
    """

    mean: np.ndarray
    log_variance: np.ndarray
    epistemic: np.ndarray | None = None
    aleatoric: np.ndarray | None = None

    @classmethod
    def from_variance(cls, mean, variance, **parts) -> "GaussianPrediction":
        variance = np.maximum(np.asarray(variance, dtype=np.float64), VARIANCE_FLOOR)
        return cls(np.asarray(mean, dtype=np.float64), np.log(variance), **parts)

    @property
    def variance(self) -> np.ndarray:
        # exp(log(floor)) can land an ulp below the floor
        return np.maximum(np.exp(self.log_variance), VARIANCE_FLOOR)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def __len__(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class PredictionSet:
    """Per-segment predictions paired with gold scores."""

    ids: tuple[str, ...]
    mean: np.ndarray
    variance: np.ndarray
    gold: np.ndarray
    tags: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        for name in ("mean", "variance", "gold"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        n = len(self.ids)
        if not (len(self.mean) == len(self.variance) == len(self.gold) == n):
            raise ValueError("ids, mean, variance and gold must have equal lengths")
        if len(set(self.ids)) != n:
            raise ValueError("segment ids must be unique")
        if np.any(self.variance < 0):
            raise ValueError("variances must be nonnegative")

    @classmethod
    def from_prediction(cls, ids, pred: GaussianPrediction, gold, tags=None) -> "PredictionSet":
        return cls(tuple(ids), pred.mean, pred.variance, gold, tags)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.gold - self.mean)

    def __len__(self) -> int:
        return len(self.ids)

    def with_variance(self, variance) -> "PredictionSet":
        return PredictionSet(self.ids, self.mean, variance, self.gold, self.tags)

    def select(self, mask) -> "PredictionSet":
        mask = np.asarray(mask)
        ids = tuple(np.asarray(self.ids, dtype=object)[mask])
        tags = None if self.tags is None else tuple(np.asarray(self.tags, dtype=object)[mask])
        return PredictionSet(ids, self.mean[mask], self.variance[mask], self.gold[mask], tags)
