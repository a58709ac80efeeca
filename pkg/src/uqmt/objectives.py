"""Training objectives.

Every loss is elementwise: it accepts floats, numpy arrays or autodiff
tensors and returns a value of the same kind. Training code averages the
elementwise losses over each minibatch.

Gaussian heads are parameterised by their log-variance and error heads by
their log squared error, so all predicted scales are positive by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Tensor, exp, log_

LOG_VARIANCE_BOUNDS = (-10.0, 10.0)
ANNOTATOR_VARIANCE_FLOOR = 1e-4


class DegenerateVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatorTarget:
    """Mean and sample variance of the annotator scores for each example."""

    mean: np.ndarray
    variance: np.ndarray
    count: np.ndarray

    @classmethod
    def from_scores(cls, scores, floor: float | None = ANNOTATOR_VARIANCE_FLOOR) -> "AnnotatorTarget":
        """Build targets from per-example score lists (each of length >= 2).

        ``floor`` lifts the variance of near-unanimous examples; pass ``None``
        to keep raw variances.
        """
        means, variances, counts = [], [], []
        for row in scores:
            row = np.asarray(row, dtype=np.float64)
            if row.size < 2:
                raise ValueError("annotator targets need at least two scores per example")
            means.append(row.mean())
            variances.append(row.var(ddof=1))
            counts.append(row.size)
        variance = np.asarray(variances)
        if floor is not None:
            variance = np.maximum(variance, floor)
        return cls(np.asarray(means), variance, np.asarray(counts))


def clamp_log_variance(log_variance):
    lo, hi = LOG_VARIANCE_BOUNDS
    if isinstance(log_variance, Tensor):
        return log_variance.clip(lo, hi)
    return np.clip(log_variance, lo, hi)


def mse_loss(prediction_mean, target):
    return (target - prediction_mean) ** 2


def hts_loss(mean, log_variance, target):
    """Gaussian negative log-likelihood without the constant term."""
    return (target - mean) ** 2 / (2.0 * exp(log_variance)) + 0.5 * log_variance


def kl_loss(mean, log_variance, target_mean, target_variance):
    """KL(N(target_mean, target_variance) || N(mean, exp(log_variance))).

    Targets are constants; a zero target variance is rejected, so callers must
    floor it first (see :class:`AnnotatorTarget`).
    """
    target_variance = np.asarray(target_variance, dtype=np.float64)
    if np.any(target_variance <= 0):
        raise DegenerateVarianceError("degenerate annotator variance: floor it before computing the KL loss")
    variance = exp(log_variance)
    return (((target_mean - mean) ** 2 + target_variance) / (2.0 * variance)
            + 0.5 * (log_variance - np.log(target_variance)) - 0.5)


def error_from_log_square(log_sq_error):
    """Positive error prediction from a predicted log squared error."""
    return exp(0.5 * log_sq_error)


def dup_abs_loss(pred_error, target_error):
    return (target_error - pred_error) ** 2


def dup_sq_loss(pred_error, target_error):
    return (target_error**2 - pred_error**2) ** 2


def dup_hts_loss(pred_error, target_error):
    if not isinstance(pred_error, Tensor) and np.any(np.asarray(pred_error) <= 0):
        raise ValueError("dup_hts_loss needs a strictly positive predicted error")
    sq = pred_error**2
    return target_error**2 / (2.0 * sq) + 0.5 * log_(sq)


DUP_LOSSES = {"ABS": dup_abs_loss, "SQ": dup_sq_loss, "HTS": dup_hts_loss}
