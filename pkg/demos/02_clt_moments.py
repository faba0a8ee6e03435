"""Limit means and covariances of linear spectral statistics.

Part 1 evaluates E X_g and Cov(X_g1, X_g2) three ways when R M = I: the
general contour kernels, the closed form, and a unit-circle quadrature.
Part 2 takes a rescaling that does not invert R and compares the contour
prediction for g(x) = x^2 with a small simulation.

    python3 demos/02_clt_moments.py
"""
import numpy as np

from corrspec import (CltContext, Elliptical, PopulationSpec, RescaledSpec, centering_integral,
                      clt_moments, esd_measure, generate_batch, identity_case_moments,
                      population_summaries, sample_correlation_of)
from corrspec.clt import unit_circle_cov, unit_circle_mean


def ar1(p, rho):
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :])


# --- part 1: three routes at R M = I ----------------------------------------------------
p, y, tau = 20, 0.5, 2.0
R = ar1(p, 0.5)
n = p / y
ctx = CltContext(R, M=RescaledSpec.inverse_of(R), n=n, structure=Elliptical(tau))
a, b, c = population_summaries(R, n)
contour = clt_moments([("x", ctx), ("x^2", ctx)])
closed = identity_case_moments(a, b, c, y, tau)
circle_mean = [unit_circle_mean(g, a, b, y, tau) for g in ("x", "x^2")]
circle_var = [unit_circle_cov(g, g, c, y) for g in ("x", "x^2")]
print("R M = I, AR(1) R, y = 0.5, tau = 2")
print(f"{'':12s}{'contour':>14s}{'closed form':>14s}{'unit circle':>14s}")
for k, g in enumerate(("x", "x^2")):
    print(f"E X_{g:<7s}{contour.means[k]:14.10f}{closed.means[k]:14.10f}{circle_mean[k]:14.10f}")
    print(f"Var X_{g:<5s}{contour.cov[k, k]:14.10f}{closed.cov[k, k]:14.10f}{circle_var[k]:14.10f}")

# --- part 2: a general rescaling against simulation --------------------------------------
p, n, reps = 40, 80, 2000
R = ar1(p, 0.5)
M = RescaledSpec(ar1(p, 0.3) + 0.3 * np.eye(p))
ctx = CltContext(R, M=M, n=n - 1, structure=Elliptical(2.0))
theory = clt_moments([("x^2", ctx)])

spec = PopulationSpec(kind="Elliptical", gamma=np.linalg.cholesky(R), radius_law="ChiSq")
rng = np.random.default_rng(7)
w = np.empty(reps)
for r in range(reps):
    A = sample_correlation_of(generate_batch(spec, n, rng)) @ M.M
    w[r] = np.sum(A * A.T)          # tr((Rhat M)^2)
w -= centering_integral(lambda x: x ** 2, p, n, esd_measure(R, M, p / (n - 1)))

se = w.std(ddof=1) / np.sqrt(reps)
print(f"\nM = AR(1, 0.3) + 0.3 I, g = x^2, p = {p}, n = {n}, {reps} samples")
print(f"mean: theory {theory.means[0]:.4f}, simulation {w.mean():.4f} +- {se:.4f}")
print(f"var : theory {theory.cov[0, 0]:.4f}, simulation {w.var(ddof=1):.4f}")
