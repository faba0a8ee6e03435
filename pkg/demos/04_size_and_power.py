"""Empirical size and power from the experiment harness.

The size cell uses Model 1 (R = I).  The power cells use the two perturbed
populations; the scan over theta for Scenario 2 shows where the power curve
actually rises: the distance ||R - R0||_F^2 grows like theta^2 p^2, so the
tests saturate long before theta reaches 0.1.

    python3 demos/04_size_and_power.py [reps]
"""
import sys

import numpy as np

from corrspec import ExperimentConfig, population_correlation, run_power_experiment, run_size_experiment
from corrspec.experiments import setup_cell

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

size = run_size_experiment(ExperimentConfig(experiment="Size", model="Model1", p_grid=[100],
                                            y_grid=[0.5], replications=reps, seed=1))
r = size.rows[0]
print(f"size of T1, Model 1, p=100, n=200: {r['percent']:.2f}% (se {r['se']:.2f})")

print("\nScenario 2, p = 100, y = 0.5")
print(f"{'theta':>8s}{'||R-R0||^2':>12s}{'T1':>8s}{'T2':>8s}{'Tm':>8s}")
for theta in (0.001, 0.004, 0.01, 0.03, 0.1):
    cfg = ExperimentConfig(experiment="Power", model="Scenario2", p_grid=[100], y_grid=[0.5],
                           theta=theta, replications=reps, seed=1)
    cell = setup_cell(cfg, 100, 0.5, 200)
    dist = float(np.sum((population_correlation(cell.spec)[0] - cell.R0) ** 2))
    pw = {row["statistic"]: row["percent"] for row in run_power_experiment(cfg).rows}
    print(f"{theta:8.3f}{dist:12.3f}{pw['T1']:8.1f}{pw['T2']:8.1f}{pw['Tm']:8.1f}")

# with R0 = I the two statistics coincide sample by sample
cfg = ExperimentConfig(experiment="Power", model="Scenario1", p_grid=[100], y_grid=[0.5],
                       theta=0.2, replications=reps, seed=1)
pw = {row["statistic"]: row["percent"] for row in run_power_experiment(cfg).rows}
print(f"\nScenario 1, theta = 0.2: T1 {pw['T1']:.1f}%, T2 {pw['T2']:.1f}%, Tm {pw['Tm']:.1f}%")
