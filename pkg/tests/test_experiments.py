import json

import numpy as np
import pytest

from uqmt.datagen import Dataset, SyntheticScenario, gen_heteroscedastic, save_dataset
from uqmt.experiments import (ConfigError, ExperimentConfig, OracleLeakError, detection_accuracy,
                              fit_and_calibrate, make_splits, run_bench, run_comparison, run_dup_ablation,
                              run_noisy_reference, run_ood_sharpness)
from uqmt.estimators import EstimatorConfig
from uqmt.predictions import PredictionSet


def small(**kw):
    base = dict(scenario={"kind": "heteroscedastic", "n": 1200}, training={"epochs": 5},
                estimators=[{"kind": "HTS"}])
    base.update(kw)
    return ExperimentConfig(**base)


def test_comparison_reports_hts_ups():
    cfg = small(scenario={"kind": "heteroscedastic", "n": 3000}, training={"epochs": 20})
    res = run_comparison(cfg)
    assert set(res.reports) == {"HTS"} and not res.errors
    assert res.reports["HTS"].ups > 0
    assert res.reports["HTS"].n == len(make_splits(cfg).test)


def test_zero_dropout_mcd_isolated():
    res = run_comparison(small(estimators=[{"kind": "MCD", "dropout_rate": 0.0}, {"kind": "HTS"}]))
    assert "dropout_rate > 0" in res.errors["MCD"]
    assert "HTS" in res.reports
    assert "MCD: failed" in res.table


def test_reports_byte_identical(tmp_path):
    outputs = []
    for _ in range(2):
        cfg = small(estimators=[{"kind": "MCD", "mcd_samples": 10}, {"kind": "DUP"}], output_dir=str(tmp_path))
        run_comparison(cfg)
        outputs.append({p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())})
    assert outputs[0] == outputs[1]
    assert {"compare.json", "compare.txt", "compare_predictions_DUP.csv"} <= set(outputs[0])
    payload = json.loads(outputs[0]["compare.json"])
    assert payload["config_hash"] == small(estimators=[{"kind": "MCD", "mcd_samples": 10}, {"kind": "DUP"}]).config_hash()
    header = outputs[0]["compare_predictions_DUP.csv"].decode().splitlines()[0]
    assert header == "id,mean,variance,gold"


def test_config_hash_tracks_content():
    a, b = small(), small(seed=1)
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == small(output_dir="elsewhere").config_hash()


def test_splits_disjoint_and_sized():
    s = make_splits(small(scenario={"kind": "heteroscedastic", "n": 1000}))
    parts = [s.train, s.error, s.dev, s.test]
    assert [len(p) for p in parts] == [500, 350, 50, 100]
    ids = [set(p.ids) for p in parts]
    assert len(set().union(*ids)) == 1000


def test_training_only_sees_stripped_data():
    cfg = small()
    s = make_splits(cfg)
    fit_and_calibrate(EstimatorConfig("DUP", training=cfg.training_config()), s)
    assert s.train.oracle_reads == 0 and s.error.oracle_reads == 0


def test_oracle_audit_trips(monkeypatch):
    cfg = small()
    s = make_splits(cfg)
    monkeypatch.setattr(Dataset, "strip_oracle", lambda self: self)
    with pytest.raises(OracleLeakError):
        fit_and_calibrate(EstimatorConfig("HTS", training=cfg.training_config()), s)


@pytest.mark.parametrize("kw", [
    dict(split=[0.5, 0.6]), dict(dup_split=[0.5, 0.5]), dict(estimators=[]),
    dict(training={"epoch": 3}), dict(scenario={"kind": "nope"}), dict(scenario=None),
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_unknown_fields_and_estimators():
    with pytest.raises(ConfigError, match="unknown config fields"):
        ExperimentConfig.from_dict({"sede": 1})
    with pytest.raises(ConfigError):
        small(estimators=[{"kind": "BAYES"}]).estimator_configs()
    with pytest.raises(ConfigError, match="duplicate"):
        small(estimators=[{"kind": "HTS"}, {"kind": "HTS"}]).estimator_configs()


def test_config_file_round_trip(tmp_path):
    cfg = small(seed=4)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_file(tmp_path / "c.json") == cfg


def test_data_file_input(tmp_path):
    save_dataset(gen_heteroscedastic(SyntheticScenario(n=400)), tmp_path / "d.jsonl")
    res = run_comparison(small(scenario=None, data_path=str(tmp_path / "d.jsonl")))
    assert res.reports["HTS"].n == 40


def test_detection_accuracy_counts_pairs():
    preds = PredictionSet(["p0/clean", "p0/noisy", "p1/clean", "p1/noisy"], np.zeros(4), [1.0, 2.0, 3.0, 1.0],
                          np.zeros(4))
    assert detection_accuracy(preds, ["ref_good", "ref_bad", "ref_good", "ref_bad"]) == 0.5


def test_noisy_reference_null_is_a_coin_flip():
    cfg = ExperimentConfig(scenario={"kind": "reference_pairs", "n": 4000, "noise_ratio": 1.0},
                           estimators=[{"kind": "MCD", "mcd_samples": 30}, {"kind": "HTS"}, {"kind": "DUP"}],
                           training={"epochs": 5}, split=[0.3, 0.7], dup_split=[0.2, 0.1, 0.7])
    acc = run_noisy_reference(cfg)
    for name, a in acc.items():
        assert abs(a - 0.5) <= 0.05, name


def test_noisy_reference_needs_pairs():
    with pytest.raises(ConfigError):
        run_noisy_reference(small())


def test_ood_without_shift_is_flat():
    cfg = ExperimentConfig(scenario={"kind": "domain_shift", "n": 2000, "shift": 0.0},
                           estimators=[{"kind": "MCD", "mcd_samples": 30}, {"kind": "HTS"}, {"kind": "DUP"}],
                           training={"epochs": 10})
    rows = run_ood_sharpness(cfg)
    for name, row in rows.items():
        assert 0.8 <= row.ratio <= 1.25, (name, row)


def test_bench_cost_structure(tmp_path):
    cfg = ExperimentConfig(scenario={"kind": "heteroscedastic", "n": 5000}, split=[0.1, 0.9],
                           dup_split=[0.1, 0.1, 0.8], training={"epochs": 2},
                           estimators=[{"kind": "MCD"}, {"kind": "DE"}, {"kind": "HTS"}], output_dir=str(tmp_path))
    rows = run_bench(cfg)
    point = rows["point"]
    assert 50 <= rows["MCD"].inference_seconds / point.inference_seconds <= 200
    assert 2.5 <= rows["DE"].train_seconds / point.train_seconds <= 10
    assert rows["HTS"].inference_seconds <= 3 * point.inference_seconds
    assert "timings" in json.loads((tmp_path / "bench.json").read_text())


def test_ablation_trains_three_losses():
    reports = run_dup_ablation(small(estimators=[{"kind": "DUP"}]))
    assert list(reports) == ["DUP-ABS", "DUP-SQ", "DUP-HTS"]
    pps = {r.pps for r in reports.values()}
    assert len(pps) == 1  # one shared quality model
