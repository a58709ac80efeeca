"""Side-by-side comparison of the uncertainty estimators.

Each estimator is trained on the same split, its variance rescaled on held-out
data, and then scored on a test split. The table stars the best value per
column. Reports and per-segment CSVs land in ``demo_out/``.
"""
from uqmt.experiments import ExperimentConfig, run_comparison

config = ExperimentConfig(
    scenario={"kind": "heteroscedastic", "n": 4000},
    estimators=[{"kind": "MCD", "mcd_samples": 50}, {"kind": "DE", "ensemble_size": 3},
                {"kind": "HTS"}, {"kind": "HTS_MCD", "mcd_samples": 50}, {"kind": "DUP"}],
    training={"epochs": 20},
    output_dir="demo_out",
)
result = run_comparison(config)
print(result.table)
print("config hash:", result.config_hash)
