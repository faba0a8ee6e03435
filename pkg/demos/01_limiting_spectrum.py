"""Limiting spectrum of a rescaled sample correlation matrix.

Draws one sample from an AR(1) population, forms Rhat M with M = R^{-1},
and compares its eigenvalue distribution with the deterministic limit
F^{y,H}, where H is the spectrum of R M.

    python3 demos/01_limiting_spectrum.py
"""
import numpy as np

from corrspec import (PopulationSpec, RescaledSpec, esd_measure, generate_batch, lsd_cdf,
                      lsd_density, rescaled_spectrum, sample_correlation_of, support_interval)
from corrspec.experiments import esd_ks_distance

p, n, rho = 300, 600, 0.6
i = np.arange(p)
R = rho ** np.abs(i[:, None] - i[None, :])
M = RescaledSpec(np.linalg.inv(R))

spec = PopulationSpec(kind="Elliptical", gamma=np.linalg.cholesky(R), radius_law="ChiSq")
Rhat = sample_correlation_of(generate_batch(spec, n, seed=1))
ev = rescaled_spectrum(Rhat, M).eigenvalues

# R M = I, so H is a point mass and the limit is Marchenko-Pastur with ratio p/(n-1)
H = esd_measure(R, M, p / (n - 1))
sup = support_interval(H)
print(f"support [{sup.a:.4f}, {sup.b:.4f}]; sample range [{ev.min():.4f}, {ev.max():.4f}]")
print(f"Kolmogorov distance ESD vs limit: {esd_ks_distance(ev, H, sup):.4f}")

# coarse histogram against the limiting density
edges = np.linspace(sup.a, sup.b, 11)
counts, _ = np.histogram(ev, edges)
F = lsd_cdf(edges, H, sup)
print("\n   bin          empirical   limit")
for k in range(10):
    print(f"[{edges[k]:.2f}, {edges[k + 1]:.2f})   {counts[k] / p:8.4f}  {F[k + 1] - F[k]:8.4f}")

mid = 0.5 * (sup.a + sup.b)
print(f"\nlimiting density at the support midpoint {mid:.3f}: {lsd_density(np.array([mid]), H, sup)[0]:.4f}")
