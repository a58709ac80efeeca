"""Aleatoric and epistemic uncertainty predictors for regression, with
calibration and evaluation tooling."""

from .calibration import CalibrationScale, apply_scale, fit_variance_scale, optimal_fixed_variance
from .datagen import (Dataset, SegmentRecord, SyntheticScenario, gen_domain_shift, gen_heteroscedastic,
                      gen_multi_annotator, gen_reference_pairs, load_dataset, save_dataset)
from .estimators import (DupLoss, DupPipeline, Estimator, EstimatorConfig, EstimatorKind, dup_predict,
                         dup_train, ensemble_predict, hts_mcd_predict, load_estimator, mc_dropout_predict,
                         train_estimator, train_hts, train_kl, train_point)
from .metrics import MetricsReport, ece, nll, pearson, pps, report, sharpness, ups
from .nn import Mlp, MlpSpec, TrainingConfig
from .predictions import GaussianPrediction, PredictionSet

__version__ = "0.1.0"
