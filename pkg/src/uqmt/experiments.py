"""End-to-end experiment protocols.

Every protocol follows the same data layout. The data is split into a
training corpus A and a second corpus B, and B is split again into an
error-model part, a development part and a test part (70/10/20 by default).
Single-step estimators train on A and calibrate on the first two parts of B.
DUP trains its quality model on A and its error model on the first part of B,
then calibrates on the development part. Everything is scored on the test
part.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .calibration import fit_scales_by_tag, fit_variance_scale
from .datagen import Dataset, SyntheticScenario, gen_domain_shift, generate, load_dataset, pair_key
from .estimators import (DupLoss, Estimator, EstimatorConfig, EstimatorKind, dup_train, train_estimator,
                         train_point)
from .metrics import MetricsReport, format_table, report, sharpness
from .nn import TrainingConfig
from .predictions import PredictionSet

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class OracleLeakError(RuntimeError):
    """An estimator was trained on data that still carried oracle fields."""


@dataclass
class ExperimentConfig:
    scenario: dict | None = field(default_factory=lambda: {"kind": "heteroscedastic"})
    data_path: str | None = None
    estimators: list = field(default_factory=lambda: [{"kind": "MCD"}, {"kind": "HTS"}, {"kind": "DUP"}])
    training: dict = field(default_factory=dict)
    split: list = field(default_factory=lambda: [0.5, 0.5])
    dup_split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    seed: int = 0
    bins: int = 100
    calibrate: bool = True
    per_tag_calibration: bool = False
    bench_repeats: int = 3
    output_dir: str | None = None

    def __post_init__(self):
        if self.scenario is None and self.data_path is None:
            raise ConfigError("either scenario or data_path is required")
        for name, fr in (("split", self.split), ("dup_split", self.dup_split)):
            if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
                raise ConfigError(f"{name} fractions must be nonnegative and sum to 1, got {fr}")
        if len(self.split) != 2 or len(self.dup_split) != 3:
            raise ConfigError("split needs 2 fractions and dup_split 3")
        if not self.estimators:
            raise ConfigError("no estimators requested")
        if self.bench_repeats < 1:
            raise ConfigError("bench_repeats must be >= 1")
        try:
            TrainingConfig(**self.training)
            if self.scenario is not None:
                SyntheticScenario(**self.scenario)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields {unknown}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def training_config(self, seed_offset: int = 0) -> TrainingConfig:
        return replace(TrainingConfig(**self.training), seed=self.seed + seed_offset)

    def estimator_configs(self) -> dict[str, EstimatorConfig]:
        out = {}
        for spec in self.estimators:
            spec = dict(spec)
            name = spec.pop("name", None)
            try:
                cfg = EstimatorConfig(**spec, training=self.training_config())
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"estimator {spec}: {exc}") from None
            if name is None:
                name = cfg.kind.value if cfg.kind is not EstimatorKind.DUP or cfg.dup_loss is DupLoss.HTS \
                    else f"DUP-{cfg.dup_loss.value}"
            if name in out:
                raise ConfigError(f"duplicate estimator name {name!r}")
            out[name] = cfg
        return out


@dataclass
class Splits:
    train: Dataset
    error: Dataset
    dev: Dataset
    test: Dataset
    ood: Dataset | None = None

    @property
    def calibration(self) -> Dataset:
        return self.error.concat(self.dev, "calibration")


def make_splits(config: ExperimentConfig) -> Splits:
    ood = None
    if config.data_path is not None:
        data = load_dataset(config.data_path)
    else:
        scenario = SyntheticScenario(**{**config.scenario, "seed": config.scenario.get("seed", config.seed)})
        if scenario.kind == "domain_shift":
            data, ood = gen_domain_shift(scenario)
        else:
            data = generate(scenario)
    key = pair_key if all("/" in r.id for r in data.records) else None
    a, b = data.split(config.split, seed=config.seed, group_key=key, names=["train", "second"])
    err, dev, test = b.split(config.dup_split, seed=config.seed + 1, group_key=key,
                             names=["error", "dev", "test"])
    for part in (a, err, dev, test):
        if len(part) == 0:
            raise ConfigError(f"split {part.name!r} is empty; use more data or other fractions")
    return Splits(a, err, dev, test, ood)


def _training_view(ds: Dataset) -> Dataset:
    view = ds.strip_oracle()
    if view.has_oracle_fields():
        raise OracleLeakError(f"{ds.name}: oracle fields survived stripping")
    return view


def fit_and_calibrate(cfg: EstimatorConfig, splits: Splits, calibrate: bool = True,
                      per_tag: bool = False, quality_model=None) -> Estimator:
    """Train on the oracle-free views of the splits, then fit the variance scale."""
    train = _training_view(splits.train)
    if cfg.kind is EstimatorKind.DUP:
        error = _training_view(splits.error)
        if quality_model is not None:
            pipe = dup_train(cfg, train, error, quality_model=quality_model)
            est = Estimator(cfg, [pipe.quality_model, pipe.error_model])
        else:
            est = train_estimator(cfg, train, error)
        cal_set = splits.dev
    else:
        est = train_estimator(cfg, train)
        error = None
        cal_set = splits.calibration
    for view in (train, error):
        if view is not None and view.oracle_reads:
            raise OracleLeakError(f"training read oracle fields of {view.name}")
    if calibrate:
        dev_preds = est.predict(cal_set, seed=cfg.training.seed, calibrated=False)
        if per_tag:
            est.tag_scales = fit_scales_by_tag(dev_preds, cal_set.name)
        else:
            est.calibration = fit_variance_scale(dev_preds, cal_set.name)
    return est


# ---------------------------------------------------------------------------
# outputs


def _write_outputs(out_dir: str | None, name: str, payload: dict, table: str,
                   predictions: dict[str, PredictionSet]) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / f"{name}.txt").write_text(table)
    for est_name, preds in predictions.items():
        write_predictions_csv(preds, out / f"{name}_predictions_{est_name}.csv")


def write_predictions_csv(preds: PredictionSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "mean", "variance", "gold"])
        for i, m, v, g in zip(preds.ids, preds.mean, preds.variance, preds.gold):
            w.writerow([i, repr(float(m)), repr(float(v)), repr(float(g))])


def _header(config: ExperimentConfig, experiment: str) -> dict:
    return {"experiment": experiment, "config": config.to_dict(), "config_hash": config.config_hash()}


# ---------------------------------------------------------------------------
# protocols


@dataclass
class ComparisonResult:
    reports: dict[str, MetricsReport]
    errors: dict[str, str]
    predictions: dict[str, PredictionSet]
    config_hash: str

    @property
    def table(self) -> str:
        text = format_table(self.reports)
        for name, err in self.errors.items():
            text += f"{name}: failed ({err})\n"
        return text


def run_comparison(config: ExperimentConfig) -> ComparisonResult:
    """Train, calibrate and score every requested estimator on the same splits."""
    splits = make_splits(config)
    reports, errors, preds = {}, {}, {}
    for name, cfg in config.estimator_configs().items():
        try:
            est = fit_and_calibrate(cfg, splits, config.calibrate, config.per_tag_calibration)
        except (ValueError, RuntimeError) as exc:
            log.warning("estimator %s failed: %s", name, exc)
            errors[name] = str(exc)
            continue
        preds[name] = est.predict(splits.test, seed=config.seed + 7)
        reports[name] = report(preds[name], config.bins)
    result = ComparisonResult(reports, errors, preds, config.config_hash())
    payload = {**_header(config, "compare"),
               "results": {k: v.to_dict() for k, v in reports.items()},
               "errors": errors}
    _write_outputs(config.output_dir, "compare", payload, result.table, preds)
    return result


def detection_accuracy(preds: PredictionSet, noise_tags) -> float:
    """Fraction of pairs whose clean variant received the lower predicted variance."""
    by_pair: dict[str, dict[str, float]] = {}
    for rid, var, tag in zip(preds.ids, preds.variance, noise_tags):
        by_pair.setdefault(rid.rsplit("/", 1)[0], {})[tag] = var
    hits = [p["ref_good"] < p["ref_bad"] for p in by_pair.values() if {"ref_good", "ref_bad"} <= set(p)]
    if not hits:
        raise ValueError("no complete clean/noisy pairs to score")
    return float(np.mean(hits))


def run_noisy_reference(config: ExperimentConfig) -> dict[str, float]:
    """Per estimator, how often the clean reference gets the lower uncertainty."""
    splits = make_splits(config)
    tags = splits.test.noise_tags()
    if any(t not in ("ref_good", "ref_bad") for t in tags):
        raise ConfigError("noisy-reference detection needs reference_pairs data with ref_good/ref_bad tags")
    accuracy, errors = {}, {}
    for name, cfg in config.estimator_configs().items():
        try:
            est = fit_and_calibrate(cfg, splits, calibrate=False)
        except (ValueError, RuntimeError) as exc:
            errors[name] = str(exc)
            continue
        accuracy[name] = detection_accuracy(est.predict(splits.test, seed=config.seed + 7), tags)
    table = "".join(f"{k:<10}{v:>8.3f}\n" for k, v in accuracy.items())
    table += "".join(f"{k}: failed ({e})\n" for k, e in errors.items())
    payload = {**_header(config, "noisy-ref"), "accuracy": accuracy, "errors": errors}
    _write_outputs(config.output_dir, "noisy_ref", payload, table, {})
    return accuracy


@dataclass(frozen=True)
class SharpnessRow:
    in_domain: float
    ood: float

    @property
    def ratio(self) -> float:
        return self.ood / self.in_domain


def run_ood_sharpness(config: ExperimentConfig) -> dict[str, SharpnessRow]:
    """Sharpness on in-domain test data against out-of-domain data."""
    scenario = {**(config.scenario or {}), "kind": "domain_shift"}
    config = replace(config, scenario=scenario, data_path=None)
    splits = make_splits(config)
    n_ood = min(len(splits.ood), len(splits.test))
    ood = splits.ood.subset(range(n_ood), "ood")
    rows, errors, preds = {}, {}, {}
    for name, cfg in config.estimator_configs().items():
        try:
            est = fit_and_calibrate(cfg, splits, config.calibrate)
        except (ValueError, RuntimeError) as exc:
            errors[name] = str(exc)
            continue
        p_in = est.predict(splits.test, seed=config.seed + 7)
        p_ood = est.predict(ood, seed=config.seed + 7)
        preds[f"{name}_in"], preds[f"{name}_ood"] = p_in, p_ood
        rows[name] = SharpnessRow(sharpness(p_in), sharpness(p_ood))
    table = f"{'estimator':<10}{'in':>10}{'ood':>10}{'ratio':>10}\n"
    table += "".join(f"{k:<10}{r.in_domain:>10.4f}{r.ood:>10.4f}{r.ratio:>10.3f}\n" for k, r in rows.items())
    payload = {**_header(config, "ood"),
               "sharpness": {k: {"in": r.in_domain, "ood": r.ood, "ratio": r.ratio} for k, r in rows.items()},
               "errors": errors}
    _write_outputs(config.output_dir, "ood", payload, table, preds)
    return rows


@dataclass(frozen=True)
class BenchRow:
    train_seconds: float
    inference_seconds: float


def run_bench(config: ExperimentConfig) -> dict[str, BenchRow]:
    """Median wall-clock training and test-set inference time per estimator.

    The extra ``point`` row times a single point regressor for reference.
    """
    splits = make_splits(config)
    train, error = _training_view(splits.train), _training_view(splits.error)
    configs = config.estimator_configs()
    rows = {}

    def timed(train_fn, infer_fn) -> BenchRow:
        train_times, infer_times = [], []
        for _ in range(config.bench_repeats):
            t0 = time.perf_counter()
            model = train_fn()
            train_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            infer_fn(model)
            infer_times.append(time.perf_counter() - t0)
        return BenchRow(statistics.median(train_times), statistics.median(infer_times))

    # a bare point regressor of the first estimator's size, as the cost unit
    ref = next(iter(configs.values()))
    rows["point"] = timed(lambda: train_point(ref.mlp_spec(train.dim), train, ref.training),
                          lambda m: m.predict(splits.test.X))
    for name, cfg in configs.items():
        rows[name] = timed(lambda: train_estimator(cfg, train, error if cfg.kind is EstimatorKind.DUP else None),
                           lambda est: est.predict_raw(splits.test.X, seed=config.seed))
    table = f"{'estimator':<10}{'train [s]':>12}{'infer [s]':>12}\n"
    table += "".join(f"{k:<10}{r.train_seconds:>12.4f}{r.inference_seconds:>12.5f}\n" for k, r in rows.items())
    payload = {**_header(config, "bench"), "timings": {k: asdict(r) for k, r in rows.items()}}
    _write_outputs(config.output_dir, "bench", payload, table, {})
    return rows


def run_dup_ablation(config: ExperimentConfig) -> dict[str, MetricsReport]:
    """DUP with each of the three error losses, sharing one quality model."""
    splits = make_splits(config)
    base = {k: v for k, v in (config.estimators[0] if config.estimators else {}).items() if k != "name"}
    base["kind"] = "DUP"
    tc = config.training_config()
    quality = None
    reports, preds = {}, {}
    for loss in DupLoss:
        cfg = EstimatorConfig(**{**base, "dup_loss": loss}, training=tc)
        if quality is None:
            quality = train_point(cfg.mlp_spec(splits.train.dim), _training_view(splits.train), tc)
        est = fit_and_calibrate(cfg, splits, config.calibrate, quality_model=quality)
        name = f"DUP-{loss.value}"
        preds[name] = est.predict(splits.test)
        reports[name] = report(preds[name], config.bins)
    payload = {**_header(config, "ablate-dup"), "results": {k: v.to_dict() for k, v in reports.items()}}
    _write_outputs(config.output_dir, "ablate_dup", payload, format_table(reports), preds)
    return reports
