"""What happens to predicted variance away from the training data?

The OOD copy of the data is translated along a direction the noise does not
depend on, so the label noise is unchanged while the inputs are new. A purely
aleatoric head has no reason to widen; the error predictor sees the quality
model's larger errors coming and should.
"""
from uqmt.experiments import ExperimentConfig, run_ood_sharpness

rows = run_ood_sharpness(ExperimentConfig(
    scenario={"kind": "domain_shift", "n": 4000},
    estimators=[{"kind": "MCD", "mcd_samples": 50}, {"kind": "HTS"}, {"kind": "DUP"}],
    training={"epochs": 30}, seed=1))
print(f"{'estimator':<10}{'in-domain':>11}{'OOD':>9}{'ratio':>8}")
for name, r in rows.items():
    print(f"{name:<10}{r.in_domain:>11.4f}{r.ood:>9.4f}{r.ratio:>8.2f}")
