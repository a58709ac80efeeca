"""Uncertainty estimators for regression.

Six kinds are supported:

MCD
    a point regressor sampled with dropout switched on at inference
DE
    an ensemble of point regressors that differ only by seed
HTS
    a mean/log-variance head trained on the Gaussian likelihood
HTS_MCD
    the HTS network sampled with dropout; the variance of the sampled means is
    added to the mean of the sampled variances
KL
    a mean/log-variance head fitted to the spread of several annotator scores
DUP
    a point regressor plus a second network trained on held-out data to
    predict the first one's absolute error
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import CalibrationScale, apply_scale, apply_scales_by_tag
from .datagen import Dataset
from .nn import Mlp, MlpSpec, Tensor, TrainingConfig, fit, load_checkpoint, save_checkpoint
from .objectives import (DUP_LOSSES, AnnotatorTarget, clamp_log_variance, error_from_log_square,
                         hts_loss, kl_loss, mse_loss, ANNOTATOR_VARIANCE_FLOOR)
from .predictions import GaussianPrediction, PredictionSet

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


class EstimatorKind(str, enum.Enum):
    MCD = "MCD"
    DE = "DE"
    HTS = "HTS"
    HTS_MCD = "HTS_MCD"
    KL = "KL"
    DUP = "DUP"


class DupLoss(str, enum.Enum):
    ABS = "ABS"
    SQ = "SQ"
    HTS = "HTS"


@dataclass(frozen=True)
class EstimatorConfig:
    kind: EstimatorKind
    hidden_sizes: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.15
    activation: str = "tanh"
    mcd_samples: int = 100
    ensemble_size: int = 5
    dup_loss: DupLoss = DupLoss.HTS
    bottleneck_dim: int = 16
    annotator_floor: float = ANNOTATOR_VARIANCE_FLOOR
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        object.__setattr__(self, "dup_loss", DupLoss(self.dup_loss))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if isinstance(self.training, dict):
            object.__setattr__(self, "training", TrainingConfig(**self.training))
        if self.mcd_samples < 2:
            raise ValueError("mcd_samples must be >= 2")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be >= 2")
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be positive")

    def mlp_spec(self, input_dim: int, output_dim: int = 1) -> MlpSpec:
        return MlpSpec(input_dim, self.hidden_sizes, output_dim, self.dropout_rate, self.activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["dup_loss"] = self.dup_loss.value
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def member_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th independent stream derived from ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# training


def _train(spec: MlpSpec, inputs: np.ndarray, batch_loss, config: TrainingConfig) -> Mlp:
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if inputs.shape[1] != spec.input_dim:
        raise ValueError(f"network expects {spec.input_dim} features, data has {inputs.shape[1]}")
    rng = np.random.default_rng(config.seed)
    model = Mlp(spec, rng)
    model.history = fit(model, len(inputs), batch_loss, inputs, config, rng)
    return model


def train_point(spec: MlpSpec, dataset: Dataset, config: TrainingConfig) -> Mlp:
    """Plain regressor trained on squared error."""
    if spec.output_dim != 1:
        raise ValueError("point models need output_dim = 1")
    y = dataset.y
    return _train(spec, dataset.X, lambda out, idx: mse_loss(out[:, 0], y[idx]).mean(), config)


def train_hts(spec: MlpSpec, dataset: Dataset, config: TrainingConfig) -> Mlp:
    """Mean/log-variance network trained on the heteroscedastic Gaussian loss."""
    if spec.output_dim != 2:
        raise ValueError("heteroscedastic models need output_dim = 2")
    y = dataset.y

    def loss(out: Tensor, idx):
        return hts_loss(out[:, 0], clamp_log_variance(out[:, 1]), y[idx]).mean()

    return _train(spec, dataset.X, loss, config)


def train_kl(spec: MlpSpec, dataset: Dataset, config: TrainingConfig,
             floor: float = ANNOTATOR_VARIANCE_FLOOR) -> Mlp:
    """Mean/log-variance network fitted to annotator score distributions."""
    if spec.output_dim != 2:
        raise ValueError("KL models need output_dim = 2")
    target = AnnotatorTarget.from_scores(dataset.annotator_scores(), floor=floor)
    mu, var = target.mean, target.variance

    def loss(out: Tensor, idx):
        return kl_loss(out[:, 0], clamp_log_variance(out[:, 1]), mu[idx], var[idx]).mean()

    return _train(spec, dataset.X, loss, config)


# ---------------------------------------------------------------------------
# prediction


def gaussian_head(model: Mlp, X) -> GaussianPrediction:
    out = model.predict(X)
    return GaussianPrediction(out[:, 0], clamp_log_variance(out[:, 1]))


def gaussian_from_samples(means, variances=None) -> GaussianPrediction:
    """Moment-match ``M`` stochastic predictions (rows) into one Gaussian.

    The variance is the population variance of ``means`` plus, when given, the
    average of ``variances``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if means.shape[0] < 2:
        raise ValueError("need at least two samples")
    mu = means.mean(axis=0)
    epistemic = means.var(axis=0)
    if variances is None:
        return GaussianPrediction.from_variance(mu, epistemic, epistemic=epistemic)
    aleatoric = np.atleast_2d(np.asarray(variances, dtype=np.float64)).mean(axis=0)
    return GaussianPrediction.from_variance(mu, epistemic + aleatoric, epistemic=epistemic, aleatoric=aleatoric)


def _check_sampling(model: Mlp, M: int) -> None:
    if model.spec.dropout_rate <= 0:
        raise ValueError("MC dropout needs dropout_rate > 0 (variance would be zero)")
    if M < 2:
        raise ValueError("MC dropout needs at least 2 samples")


def mc_dropout_predict(model: Mlp, X, M: int = 100, seed: int = 0) -> GaussianPrediction:
    _check_sampling(model, M)
    rng = np.random.default_rng(seed)
    samples = np.stack([model.predict(X, dropout_active=True, rng=rng)[:, 0] for _ in range(M)])
    return gaussian_from_samples(samples)


def hts_mcd_predict(model: Mlp, X, M: int = 100, seed: int = 0) -> GaussianPrediction:
    _check_sampling(model, M)
    if model.spec.output_dim != 2:
        raise ValueError("HTS+MCD needs a mean/log-variance head")
    rng = np.random.default_rng(seed)
    means, variances = [], []
    for _ in range(M):
        out = model.predict(X, dropout_active=True, rng=rng)
        means.append(out[:, 0])
        variances.append(np.exp(clamp_log_variance(out[:, 1])))
    return gaussian_from_samples(np.stack(means), np.stack(variances))


def ensemble_predict(models: Sequence[Mlp], X) -> GaussianPrediction:
    if len(models) < 2:
        raise ValueError("an ensemble needs at least two members")
    return gaussian_from_samples(np.stack([m.predict(X)[:, 0] for m in models]))


@dataclass
class DupPipeline:
    quality_model: Mlp
    error_model: Mlp
    dup_loss: DupLoss = DupLoss.HTS

    @property
    def bottleneck_dim(self) -> int:
        return self.error_model.spec.bottleneck_dim

    def augment(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        q_hat = self.quality_model.predict(X)[:, 0]
        return q_hat, np.column_stack([X, q_hat])


def dup_train(config: EstimatorConfig, dataset_q: Dataset, dataset_e: Dataset,
              quality_model: Mlp | None = None) -> DupPipeline:
    """Fit the quality model on ``dataset_q``, then the error model on ``dataset_e``.

    Passing an already trained ``quality_model`` skips the first step.
    """
    if len(dataset_q) == 0 or len(dataset_e) == 0:
        raise ValueError("both DUP splits must be non-empty")
    overlap = set(dataset_q.ids) & set(dataset_e.ids)
    if overlap:
        raise ValueError(f"DUP splits overlap on {len(overlap)} ids (e.g. {sorted(overlap)[0]!r})")
    tc = config.training
    if quality_model is None:
        quality_model = train_point(config.mlp_spec(dataset_q.dim), dataset_q, tc)
    q_hat = quality_model.predict(dataset_e.X)[:, 0]
    target = np.abs(q_hat - dataset_e.y)
    inputs = np.column_stack([dataset_e.X, q_hat])
    spec = MlpSpec(dataset_e.dim + 1, config.hidden_sizes, 1, config.dropout_rate, config.activation,
                   bottleneck_dim=config.bottleneck_dim, side_inputs=1)
    loss_fn = DUP_LOSSES[config.dup_loss.value]

    def loss(out: Tensor, idx):
        pred = error_from_log_square(clamp_log_variance(out[:, 0]))
        return loss_fn(pred, target[idx]).mean()

    error_model = _train(spec, inputs, loss, replace(tc, seed=member_seed(tc.seed, 1)))
    return DupPipeline(quality_model, error_model, config.dup_loss)


def dup_predict(pipeline: DupPipeline, X) -> GaussianPrediction:
    q_hat, inputs = pipeline.augment(X)
    log_sq = clamp_log_variance(pipeline.error_model.predict(inputs)[:, 0])
    return GaussianPrediction(q_hat, log_sq)


# ---------------------------------------------------------------------------
# a uniform wrapper


@dataclass
class Estimator:
    config: EstimatorConfig
    models: list[Mlp]
    calibration: CalibrationScale | None = None
    tag_scales: dict[str, CalibrationScale] | None = None

    @property
    def kind(self) -> EstimatorKind:
        return self.config.kind

    def predict_raw(self, X, seed: int = 0) -> GaussianPrediction:
        k, cfg = self.kind, self.config
        if k is EstimatorKind.MCD:
            return mc_dropout_predict(self.models[0], X, cfg.mcd_samples, seed)
        if k is EstimatorKind.DE:
            return ensemble_predict(self.models, X)
        if k in (EstimatorKind.HTS, EstimatorKind.KL):
            return gaussian_head(self.models[0], X)
        if k is EstimatorKind.HTS_MCD:
            return hts_mcd_predict(self.models[0], X, cfg.mcd_samples, seed)
        return dup_predict(DupPipeline(*self.models, cfg.dup_loss), X)

    def predict(self, dataset: Dataset, seed: int = 0, calibrated: bool = True) -> PredictionSet:
        preds = PredictionSet.from_prediction(dataset.ids, self.predict_raw(dataset.X, seed), dataset.y,
                                              dataset.domain_tags)
        if not calibrated:
            return preds
        if self.tag_scales:
            return apply_scales_by_tag(preds, self.tag_scales)
        if self.calibration is not None:
            return apply_scale(preds, self.calibration)
        return preds

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for i, m in enumerate(self.models):
            name = f"model_{i}.json"
            save_checkpoint(m, directory / name)
            names.append(name)
        meta = {
            "format": "uqmt-estimator",
            "version": BUNDLE_VERSION,
            "config": self.config.to_dict(),
            "models": names,
            "calibration": None if self.calibration is None else asdict(self.calibration),
            "tag_scales": None if not self.tag_scales else {k: asdict(v) for k, v in self.tag_scales.items()},
        }
        (directory / "estimator.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_estimator(directory: str | Path) -> Estimator:
    directory = Path(directory)
    meta = json.loads((directory / "estimator.json").read_text())
    if meta.get("format") != "uqmt-estimator" or meta.get("version") != BUNDLE_VERSION:
        raise ValueError(f"{directory}: not a version {BUNDLE_VERSION} estimator bundle")
    config = EstimatorConfig(**meta["config"])
    models = [load_checkpoint(directory / name) for name in meta["models"]]
    cal = meta.get("calibration")
    tags = meta.get("tag_scales")
    return Estimator(config, models,
                     None if cal is None else CalibrationScale(**cal),
                     None if tags is None else {k: CalibrationScale(**v) for k, v in tags.items()})


def train_estimator(config: EstimatorConfig, dataset: Dataset, error_dataset: Dataset | None = None) -> Estimator:
    """Train any estimator kind. DUP additionally needs a disjoint ``error_dataset``."""
    k, tc, d = config.kind, config.training, dataset.dim
    if k is EstimatorKind.MCD:
        spec = config.mlp_spec(d)
        if spec.dropout_rate <= 0:
            raise ValueError("MC dropout needs dropout_rate > 0 (variance would be zero)")
        return Estimator(config, [train_point(spec, dataset, tc)])
    if k is EstimatorKind.DE:
        members = [train_point(config.mlp_spec(d), dataset, replace(tc, seed=member_seed(tc.seed, i)))
                   for i in range(config.ensemble_size)]
        return Estimator(config, members)
    if k in (EstimatorKind.HTS, EstimatorKind.HTS_MCD):
        spec = config.mlp_spec(d, 2)
        if k is EstimatorKind.HTS_MCD and spec.dropout_rate <= 0:
            raise ValueError("MC dropout needs dropout_rate > 0 (variance would be zero)")
        return Estimator(config, [train_hts(spec, dataset, tc)])
    if k is EstimatorKind.KL:
        return Estimator(config, [train_kl(config.mlp_spec(d, 2), dataset, tc, config.annotator_floor)])
    if error_dataset is None:
        raise ValueError("DUP needs a second, disjoint dataset for the error model")
    pipe = dup_train(config, dataset, error_dataset)
    return Estimator(config, [pipe.quality_model, pipe.error_model])
