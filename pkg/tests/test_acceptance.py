"""Acceptance suite: one test per headline criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line with the measured
values; the lines are repeated in the pytest terminal summary. Run directly
with ``python3 tests/test_acceptance.py`` to get just the twelve lines.
"""
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import check_network_gradients  # noqa: E402

from uqmt.calibration import apply_scale, fit_variance_scale, optimal_fixed_variance  # noqa: E402
from uqmt.datagen import SyntheticScenario, gen_heteroscedastic, gen_multi_annotator  # noqa: E402
from uqmt.estimators import EstimatorConfig, gaussian_from_samples, train_estimator  # noqa: E402
from uqmt.experiments import (ExperimentConfig, run_bench, run_comparison, run_dup_ablation,  # noqa: E402
                              run_noisy_reference, run_ood_sharpness)
from uqmt.metrics import ece, nll, sharpness  # noqa: E402
from uqmt.nn import Mlp, MlpSpec  # noqa: E402
from uqmt.objectives import (clamp_log_variance, dup_abs_loss, dup_hts_loss, dup_sq_loss,  # noqa: E402
                             error_from_log_square, hts_loss, kl_loss, mse_loss)
from uqmt.predictions import PredictionSet  # noqa: E402

SEEDS = (0, 1, 2)
RESULTS: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def pset(mean, var, gold):
    return PredictionSet([f"s{i}" for i in range(len(mean))], mean, var, gold)


def test_criterion_01_closed_form_values():
    t0 = time.perf_counter()
    ln = math.log
    checks = [
        (mse_loss(0.5, 0.5), 0.0), (mse_loss(0.0, 1.0), 1.0), (mse_loss(2.0, -1.0), 9.0),
        (hts_loss(0.5, ln(1.0), 0.5), 0.0), (hts_loss(0.0, ln(1.0), 1.0), 0.5),
        (hts_loss(0.0, ln(4.0), 2.0), 4 / 8 + 0.5 * ln(4)),
        (kl_loss(0.3, ln(0.7), 0.3, 0.7), 0.0), (kl_loss(0.0, 0.0, 1.0, 1.0), 0.5),
        (kl_loss(0.0, ln(2.0), 0.0, 1.0), 0.25 + 0.5 * ln(2) - 0.5),
        (dup_abs_loss(1.0, 1.0), 0.0), (dup_abs_loss(0.0, 2.0), 4.0), (dup_abs_loss(0.5, 1.5), 1.0),
        (dup_sq_loss(1.0, 1.0), 0.0), (dup_sq_loss(0.0, 1.0), 1.0), (dup_sq_loss(1.0, 2.0), 9.0),
        (dup_hts_loss(1.0, 0.0), 0.0), (dup_hts_loss(1.0, 1.0), 0.5), (dup_hts_loss(2.0, 2.0), 0.5 + 0.5 * ln(4)),
        (nll(pset([0.2], [1.0], [0.2])), 0.5 * ln(2 * math.pi)),
        (nll(pset([0.0], [1.0], [1.0])), 0.5 * ln(2 * math.pi) + 0.5),
        (sharpness(pset([0, 0], [1.0, 3.0], [0, 0])), 2.0), (sharpness(pset([0, 0], [0.0, 0.0], [0, 0])), 0.0),
        (optimal_fixed_variance(pset([0, 0], [1, 1], [1.0, -1.0])), 1.0),
        (optimal_fixed_variance(pset([0, 0], [1, 1], [0.0, 0.0])), 0.0),
        (optimal_fixed_variance(pset([0, 0], [1, 1], [0.0, 2.0])), 2.0),
        (fit_variance_scale(pset([0.0, 1.0], [0.25, 4.0], [0.5, 3.0])).scale, 1.0),
        (fit_variance_scale(pset([0.0, 0.0], [1.0, 1.0], [1.0, -1.0])).scale, 1.0),
    ]
    # two points with residuals {1, 1} at the optimal fixed variance
    p = pset([0.0, 0.0], [1.0, 1.0], [1.0, -1.0])
    checks.append((nll(p.with_variance(np.full(2, optimal_fixed_variance(p)))), 0.5 * ln(2 * math.pi) + 0.5))
    # the stationary point of the DUP likelihood loss
    grid = 2.0 * np.exp(np.linspace(-1e-3, 1e-3, 2001))
    checks.append((float(grid[np.argmin(dup_hts_loss(grid, 2.0))]), 2.0))
    # combined variance: Q = {0, 2}, S = {1, 3}
    g = gaussian_from_samples([[0.0], [2.0]], [[1.0], [3.0]])
    checks += [(g.epistemic[0], 1.0), (g.aleatoric[0], 2.0), (g.variance[0], 3.0)]
    g0 = gaussian_from_samples([[0.0], [2.0]], [[0.0], [0.0]])
    checks.append((g0.variance[0], gaussian_from_samples([[0.0], [2.0]]).variance[0]))
    worst = max(abs(float(a) - b) for a, b in checks)
    # the rounded decimals quoted for three of the examples
    rounded = max(abs(hts_loss(0.0, ln(4.0), 2.0) - 1.193147), abs(kl_loss(0.0, ln(2.0), 0.0, 1.0) - 0.096574),
                  abs(nll(pset([0.0], [1.0], [1.0])) - 1.418939), abs(0.5 * ln(2 * math.pi) - 0.918939))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-9 and rounded <= 1e-6 and elapsed < 1.0,
            f"{len(checks)} closed-form examples, worst abs error {worst:.1e}, "
            f"quoted decimals within {rounded:.1e}, {elapsed:.2f} s")


def test_criterion_02_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    X = rng.normal(size=(16, 4))
    y = rng.normal(size=16)
    tvar = rng.uniform(0.1, 1.0, 16)
    losses = {
        "mse": (1, lambda o: mse_loss(o[:, 0], y).mean()),
        "hts": (2, lambda o: hts_loss(o[:, 0], clamp_log_variance(o[:, 1]), y).mean()),
        "kl": (2, lambda o: kl_loss(o[:, 0], clamp_log_variance(o[:, 1]), y, tvar).mean()),
        "dup_abs": (1, lambda o: dup_abs_loss(error_from_log_square(o[:, 0]), np.abs(y)).mean()),
        "dup_sq": (1, lambda o: dup_sq_loss(error_from_log_square(o[:, 0]), np.abs(y)).mean()),
        "dup_hts": (1, lambda o: dup_hts_loss(error_from_log_square(o[:, 0]), np.abs(y)).mean()),
    }
    worst = {}
    for i, (name, (out_dim, loss)) in enumerate(losses.items()):
        model = Mlp(MlpSpec(4, (20,), out_dim, dropout_rate=0.0), rng=10 + i)
        worst[name] = check_network_gradients(model, X, loss, probes=100, rng=rng, h=1e-5)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    verdict(2, top <= 1e-4 and elapsed < 30,
            f"6 objectives x 100 probes, worst relative error {top:.1e}, {elapsed:.1f} s")


def test_criterion_03_kl_generalises_hts():
    rng = np.random.default_rng(3)
    n = 1000
    mean, tmean = rng.normal(size=n) * 3, rng.normal(size=n) * 3
    # log-variances in [-3, 3]; wider ranges push the terms towards 1e4 where
    # double rounding alone approaches the 1e-12 budget
    lv = rng.uniform(-3, 3, n)
    tvar = np.exp(rng.uniform(-3, 3, n))
    lhs = kl_loss(mean, lv, tmean, tvar) - hts_loss(mean, lv, tmean)
    rhs = tvar / (2 * np.exp(lv)) - 0.5 * np.log(tvar) - 0.5
    worst = float(np.max(np.abs(lhs - rhs)))
    verdict(3, worst <= 1e-12, f"{n} random inputs, worst abs deviation {worst:.1e}")


def test_criterion_04_calibration_oracle():
    rng = np.random.default_rng(4)
    scale_wins = fixed_wins = 0
    for _ in range(20):
        n = 200
        mean = rng.normal(size=n)
        var = rng.uniform(0.05, 2.0, n)
        gold = mean + rng.normal(scale=rng.uniform(0.2, 2.0), size=n) * np.sqrt(rng.uniform(0.1, 3, n))
        p = pset(mean, var, gold)
        best = nll(apply_scale(p, fit_variance_scale(p)))
        scale_wins += all(best <= nll(apply_scale(p, s)) for s in np.exp(rng.uniform(-3, 3, 100)))
        fixed = nll(p.with_variance(np.full(n, optimal_fixed_variance(p))))
        fixed_wins += all(fixed <= nll(p.with_variance(np.full(n, v))) for v in np.exp(rng.uniform(-4, 3, 100)))
    verdict(4, scale_wins == 20 and fixed_wins == 20,
            f"scale beats 100 random scales on {scale_wins}/20 sets, "
            f"fixed variance beats 100 random values on {fixed_wins}/20 sets")


def test_criterion_05_ece_sanity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    n = 10_000
    mean = rng.normal(size=n)
    var = rng.uniform(0.05, 2.0, n)
    gold = mean + np.sqrt(var) * rng.standard_normal(n)
    good = ece(pset(mean, var, gold), 100)
    halved = ece(pset(mean, var / 2, gold), 100)
    elapsed = time.perf_counter() - t0
    verdict(5, good <= 0.02 and halved >= 0.05 and elapsed < 10,
            f"calibrated ECE {good:.4f} (<= 0.02), halved-variance ECE {halved:.4f} (>= 0.05), {elapsed:.2f} s")


def test_criterion_06_hts_recovers_noise():
    t0 = time.perf_counter()
    ds = gen_heteroscedastic(SyntheticScenario(n=5000, seed=0))
    train, test = ds.split([0.8, 0.2], seed=0)
    est = train_estimator(EstimatorConfig("HTS"), train.strip_oracle())
    sigma_hat = est.predict(test, calibrated=False).std
    r = float(np.corrcoef(sigma_hat, test.true_sigma())[0, 1])
    elapsed = time.perf_counter() - t0
    verdict(6, r >= 0.8 and elapsed < 180, f"held-out Pearson(sigma_hat, sigma) = {r:.3f} (>= 0.8), {elapsed:.1f} s")


def test_criterion_07_kl_recovers_disagreement():
    ds = gen_multi_annotator(SyntheticScenario(kind="multi_annotator", n=5000, annotators=5,
                                               strata_sigmas=(0.1, 0.8), seed=0))
    train, test = ds.split([0.8, 0.2], seed=0)
    est = train_estimator(EstimatorConfig("KL"), train.strip_oracle())
    std = est.predict(test, calibrated=False).std
    high = np.array(test.noise_tags()) == "high"
    ratio = std[high].mean() / std[~high].mean()
    verdict(7, ratio >= 2.0, f"mean sigma_hat high/low stratum = {std[high].mean():.3f}/{std[~high].mean():.3f}"
                             f" = {ratio:.2f} (>= 2)")


def test_criterion_08_noisy_reference_detection():
    hts, mcd = [], []
    for seed in SEEDS:
        acc = run_noisy_reference(ExperimentConfig(
            scenario={"kind": "reference_pairs", "n": 2000, "noise_ratio": 5.0},
            estimators=[{"kind": "HTS"}, {"kind": "MCD"}], seed=seed))
        hts.append(acc["HTS"])
        mcd.append(acc["MCD"])
    h, m = statistics.median(hts), statistics.median(mcd)
    verdict(8, h >= 0.85 and 0.35 <= m <= 0.65 and h > m,
            f"median clean-reference selection HTS {h:.3f} (>= 0.85), MCD {m:.3f} (in [0.35, 0.65]); "
            f"per seed HTS {[round(v, 3) for v in hts]}, MCD {[round(v, 3) for v in mcd]}")


def test_criterion_09_ood_sharpness_direction():
    dup, hts = [], []
    for seed in SEEDS:
        rows = run_ood_sharpness(ExperimentConfig(scenario={"kind": "domain_shift", "n": 5000},
                                                  estimators=[{"kind": "HTS"}, {"kind": "DUP"}], seed=seed))
        dup.append(rows["DUP"].ratio)
        hts.append(rows["HTS"].ratio)
    d, h = statistics.median(dup), statistics.median(hts)
    verdict(9, d > 1.0 and 0.8 <= h <= 1.25,
            f"median OOD/in-domain sharpness DUP {d:.3f} (> 1), HTS {h:.3f} (in [0.8, 1.25]); "
            f"per seed DUP {[round(v, 3) for v in dup]}, HTS {[round(v, 3) for v in hts]}")


def mixed_benchmark(seed: int) -> ExperimentConfig:
    return ExperimentConfig(scenario={"kind": "heteroscedastic", "n": 10_000},
                            estimators=[{"kind": "MCD"}, {"kind": "DUP"}], seed=seed)


@pytest.fixture(scope="module")
def mixed_runs():
    runs = []
    for seed in SEEDS:
        cfg = mixed_benchmark(seed)
        runs.append((run_comparison(cfg), run_dup_ablation(cfg)))
    return runs


def test_criterion_10_dup_vs_mcd(mixed_runs):
    ups_gap = statistics.median(c.reports["DUP"].ups - c.reports["MCD"].ups for c, _ in mixed_runs)
    dup_ups = statistics.median(c.reports["DUP"].ups for c, _ in mixed_runs)
    mcd_ups = statistics.median(c.reports["MCD"].ups for c, _ in mixed_runs)
    dup_sha = statistics.median(c.reports["DUP"].sharpness for c, _ in mixed_runs)
    mcd_sha = statistics.median(c.reports["MCD"].sharpness for c, _ in mixed_runs)
    verdict(10, dup_ups >= mcd_ups and dup_sha <= mcd_sha,
            f"median calibrated UPS DUP {dup_ups:.3f} vs MCD {mcd_ups:.3f} (median gap {ups_gap:+.3f}); "
            f"median sharpness DUP {dup_sha:.4f} vs MCD {mcd_sha:.4f}")


def test_criterion_11_cost_structure():
    rows = run_bench(ExperimentConfig(scenario={"kind": "heteroscedastic", "n": 5000}, split=[0.2, 0.8],
                                      dup_split=[0.1, 0.1, 0.8], training={"epochs": 3},
                                      estimators=[{"kind": "MCD", "mcd_samples": 100}, {"kind": "HTS"},
                                                  {"kind": "DE", "ensemble_size": 5}]))
    infer = rows["MCD"].inference_seconds / rows["HTS"].inference_seconds
    train = rows["DE"].train_seconds / rows["point"].train_seconds
    verdict(11, infer >= 20 and train >= 3,
            f"MCD/HTS inference time {infer:.1f}x (>= 20), DE/single training time {train:.1f}x (>= 3)")


def test_criterion_12_dup_loss_ablation(mixed_runs):
    spreads = []
    for _, ablation in mixed_runs:
        ups = [r.ups for r in ablation.values()]
        spreads.append(max(ups) - min(ups))
    per_loss = {name: statistics.median(a[name].ups for _, a in mixed_runs) for name in mixed_runs[0][1]}
    spread = max(per_loss.values()) - min(per_loss.values())
    verdict(12, spread <= 0.05,
            "median UPS " + ", ".join(f"{k} {v:.3f}" for k, v in per_loss.items())
            + f"; spread {spread:.3f} (<= 0.05), per-seed spreads {[round(s, 3) for s in spreads]}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
