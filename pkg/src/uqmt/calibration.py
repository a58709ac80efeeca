"""Post-hoc variance calibration on a development set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictions import PredictionSet


@dataclass(frozen=True)
class CalibrationScale:
    """Multiplier applied to predicted variances."""

    scale: float
    fitted_on: str = ""
    objective: str = "NLL"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"calibration scale must be positive and finite, got {self.scale}")


def fit_variance_scale(dev: PredictionSet, fitted_on: str = "") -> CalibrationScale:
    """NLL-optimal scalar ``s`` for the rescaling ``variance -> s * variance``.

    Setting the derivative of the mean Gaussian NLL in ``s`` to zero gives the
    mean squared standardised residual.
    """
    if len(dev) == 0:
        raise ValueError("cannot calibrate on an empty set")
    if np.any(dev.variance <= 0):
        raise ValueError("zero variance in calibration set; floor variances first")
    scale = float(np.mean((dev.gold - dev.mean) ** 2 / dev.variance))
    if scale == 0.0:
        raise ValueError("all calibration residuals are zero; scale is undefined")
    return CalibrationScale(scale, fitted_on)


def apply_scale(preds: PredictionSet, cal: CalibrationScale | float) -> PredictionSet:
    scale = cal.scale if isinstance(cal, CalibrationScale) else float(cal)
    return preds.with_variance(preds.variance * scale)


def fit_scales_by_tag(dev: PredictionSet, fitted_on: str = "") -> dict[str, CalibrationScale]:
    if dev.tags is None:
        raise ValueError("prediction set carries no tags")
    tags = np.asarray(dev.tags, dtype=object)
    return {t: fit_variance_scale(dev.select(tags == t), f"{fitted_on}[{t}]") for t in sorted(set(dev.tags))}


def apply_scales_by_tag(preds: PredictionSet, scales: dict[str, CalibrationScale]) -> PredictionSet:
    if preds.tags is None:
        raise ValueError("prediction set carries no tags")
    factor = np.array([scales[t].scale for t in preds.tags])
    return preds.with_variance(preds.variance * factor)


def optimal_fixed_variance(preds: PredictionSet) -> float:
    """The single variance that minimises NLL over ``preds``."""
    return float(np.mean((preds.gold - preds.mean) ** 2))
