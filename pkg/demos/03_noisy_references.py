"""Telling a clean reference from a noisy one.

Every item appears twice: once with a clean label and once with a label five
times noisier, each with its own reference features. A good aleatoric
estimator should give the clean copy the lower variance. Dropout sampling
only sees model uncertainty, so it should do no better than a coin.
"""
from uqmt.experiments import ExperimentConfig, run_noisy_reference

for ratio in (5.0, 1.0):
    acc = run_noisy_reference(ExperimentConfig(
        scenario={"kind": "reference_pairs", "n": 1500, "noise_ratio": ratio},
        estimators=[{"kind": "HTS"}, {"kind": "MCD", "mcd_samples": 50}],
        training={"epochs": 20}))
    print(f"noise ratio {ratio:g}: " + ", ".join(f"{k} picks the clean copy {v:.0%} of the time"
                                              for k, v in acc.items()))
