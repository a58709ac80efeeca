"""Accuracy and uncertainty indicators for Gaussian predictions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .predictions import PredictionSet

# Largest double below 1; keeps the top confidence level's interval finite.
_P_MAX = 1.0 - 2.0**-53

# Coefficients of Acklam's rational approximation to the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


class UndefinedCorrelationError(ValueError):
    pass


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF, refined with one Halley step."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement; work with the smaller tail to keep precision.
    if x > 0:
        err = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    else:
        err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two sequences of equal length >= 2")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise UndefinedCorrelationError("undefined correlation: constant input")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    r = float(da @ db) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def pps(preds: PredictionSet) -> float:
    """Predictive Pearson score: correlation of predicted means with gold scores."""
    return pearson(preds.mean, preds.gold)


def ups(preds: PredictionSet) -> float:
    """Uncertainty Pearson score: correlation of absolute errors with predicted std."""
    return pearson(preds.abs_error, preds.std)


def nll(preds: PredictionSet) -> float:
    v = preds.variance
    return float(np.mean(0.5 * np.log(2.0 * np.pi * v) + (preds.gold - preds.mean) ** 2 / (2.0 * v)))


def sharpness(preds: PredictionSet) -> float:
    return float(np.mean(preds.variance))


def interval_coverage(preds: PredictionSet, bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Confidence levels b/bins and the fraction of gold scores inside the
    centred interval mean +/- z * std at each level."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    levels = np.arange(1, bins + 1) / bins
    z = np.array([normal_quantile(min((1.0 + g) / 2.0, _P_MAX)) for g in levels])
    with np.errstate(divide="ignore", invalid="ignore"):
        zscore = np.where(preds.abs_error == 0, 0.0, preds.abs_error / preds.std)
    acc = (zscore[None, :] <= z[:, None]).mean(axis=1)
    return levels, acc


def ece(preds: PredictionSet, bins: int = 100) -> float:
    levels, acc = interval_coverage(preds, bins)
    return float(np.mean(np.abs(acc - levels)))


@dataclass(frozen=True)
class MetricsReport:
    pps: float | None
    ups: float | None
    nll: float
    ece: float
    sharpness: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def report(preds: PredictionSet, bins: int = 100) -> MetricsReport:
    """All five indicators; undefined correlations come back as ``None``."""

    def _maybe(fn):
        try:
            return fn(preds)
        except (UndefinedCorrelationError, ValueError):
            return None

    return MetricsReport(pps=_maybe(pps), ups=_maybe(ups), nll=nll(preds), ece=ece(preds, bins),
                         sharpness=sharpness(preds), n=len(preds))


# column name -> (attribute, higher is better)
COLUMNS = {"PPS": ("pps", True), "UPS": ("ups", True), "NLL": ("nll", False),
           "ECE": ("ece", False), "Sha.": ("sharpness", False)}


def format_table(rows: dict[str, MetricsReport]) -> str:
    """Aligned text table; the best value in each column is starred (ties share)."""
    best = {}
    for col, (attr, higher) in COLUMNS.items():
        vals = [getattr(r, attr) for r in rows.values() if getattr(r, attr) is not None]
        if vals:
            best[col] = max(vals) if higher else min(vals)
    name_w = max([len("estimator")] + [len(k) for k in rows])
    header = "estimator".ljust(name_w) + "".join(f"{c:>10}" for c in COLUMNS)
    lines = [header, "-" * len(header)]
    for name, rep in rows.items():
        cells = []
        for col, (attr, _) in COLUMNS.items():
            v = getattr(rep, attr)
            if v is None:
                cells.append(f"{'n/a':>10}")
            else:
                mark = "*" if col in best and v == best[col] else " "
                cells.append(f"{v:>9.4f}{mark}")
        lines.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(lines) + "\n"
