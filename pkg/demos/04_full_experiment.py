"""
Noisy, clean and artificial models side by side
================================================

Run the whole comparison with the bundled configuration for a few seeds and
print the F1 of each variant on the shared noisy test set.
"""

import statistics
from importlib import resources

from natner.pipeline import ExperimentConfig, run_experiment

cfg_path = resources.files("natner.data").joinpath("experiment.cfg")
scores = {"noisy": [], "clean": [], "artificial": []}
for seed in range(3):
    config = ExperimentConfig.from_file(str(cfg_path), {"seed": str(seed)})
    report = run_experiment(config)
    row = "  ".join(f"{v} {r.evaluation.f1:.3f}" for v, r in report.variants.items())
    print(f"seed {seed}: {row}")
    for v, r in report.variants.items():
        scores[v].append(r.evaluation.f1)

print("median:", {v: round(statistics.median(xs), 3) for v, xs in scores.items()})

# training data amounts (the artificial model sees the clean data twice over)
print(report.data_amount_csv())
