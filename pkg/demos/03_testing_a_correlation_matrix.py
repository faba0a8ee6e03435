"""Testing H0: R = R0 with T1, T2 and their combination.

Computes the null centers, scales and the correlation lambda of the two
statistics for an AR(1) R0, runs the tests on a sample drawn under H0 and
on one drawn under a nearby alternative, and shows why the shortcut for the T2 null moments cannot be used when R0
is not I.

    python3 demos/03_testing_a_correlation_matrix.py
"""
import numpy as np

from corrspec import (Elliptical, ModelInconsistencyError, PopulationSpec, critical_value,
                      generate_batch, null_params, run_test)
from corrspec.htest import t2_null_params

p, n = 100, 200
i = np.arange(p)
R0 = 0.5 ** np.abs(i[:, None] - i[None, :])

par = null_params(p, n, R0, Elliptical(2.0))
print(f"T1 under H0: mean {par.mu1:.4f}, sd {par.sd1:.4f}")
print(f"T2 under H0: mean {par.mu2:.4f}, sd {par.sd2:.4f}")
print(f"lambda = {par.lam:.4f}; combined critical value {par.t_alpha:.4f} "
      f"(independent: {critical_value(0.0):.4f}, identical: {critical_value(1.0):.4f})")

for label, R in (("H0", R0), ("AR(1) rho=0.55", 0.55 ** np.abs(i[:, None] - i[None, :]))):
    spec = PopulationSpec(kind="Elliptical", gamma=np.linalg.cholesky(R))
    rep = run_test(generate_batch(spec, n, seed=3), R0, params=par)
    print(f"\n{label}: z1 = {rep.z1:+.3f}, z2 = {rep.z2:+.3f}, Tm = {rep.tm:.3f} -> {rep.decision}")
    print(f"  marginal p-values {rep.p1:.4f} / {rep.p2:.4f}")

# the shortcut replaces moments of tr(Rhat^2) by their R = I values
try:
    t2_null_params(p, n, R0, Elliptical(2.0), variant="legacy")
except ModelInconsistencyError as exc:
    print(f"\nshortcut T2 moments for AR(1) R0: {exc}")
