import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from corrspec.clt import Elliptical, Linear
from corrspec.errors import ConfigurationError, ModelInconsistencyError, SingularMatrixError
from corrspec.htest import (box_probability, critical_value, joint_lambda, lss_moments,
                            null_params, report, run_test, t1_null_params, t1_statistic,
                            t2_null_params, t2_statistic)
from corrspec.population import PopulationSpec, generate_batch

from conftest import ar1


# --- statistics ---------------------------------------------------------------------

def test_statistics_direct():
    rng = np.random.default_rng(0)
    R0 = ar1(6, 0.4)
    X = rng.standard_normal((6, 30))
    Rhat = np.corrcoef(X)
    D = Rhat @ np.linalg.inv(R0) - np.eye(6)
    assert t1_statistic(Rhat, R0) == pytest.approx(np.trace(D @ D), rel=1e-12)
    E = Rhat - R0
    assert t2_statistic(Rhat, R0) == pytest.approx(np.trace(E @ E), rel=1e-12)


def test_statistics_coincide_at_identity():
    rng = np.random.default_rng(1)
    Rhat = np.corrcoef(rng.standard_normal((8, 20)))
    assert t1_statistic(Rhat, np.eye(8)) == pytest.approx(t2_statistic(Rhat, np.eye(8)), rel=1e-13)


def test_statistics_vanish_at_truth():
    R0 = ar1(7, 0.6)
    assert t1_statistic(R0, R0) == pytest.approx(0.0, abs=1e-20)
    assert t2_statistic(R0, R0) == 0.0


@given(st.integers(2, 8), st.integers(0, 10 ** 6))
@settings(max_examples=30)
def test_statistics_nonnegative_and_permutation_invariant(p, seed):
    rng = np.random.default_rng(seed)
    Rhat = np.corrcoef(rng.standard_normal((p, p + 5)))
    R0 = ar1(p, float(rng.uniform(-0.7, 0.7)))
    perm = rng.permutation(p)
    P = np.eye(p)[perm]
    for f in (t1_statistic, t2_statistic):
        v = f(Rhat, R0)
        assert v >= 0
        assert f(P @ Rhat @ P.T, P @ R0 @ P.T) == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_singular_R0_rejected():
    R0 = np.ones((3, 3))
    with pytest.raises(SingularMatrixError):
        t1_statistic(np.eye(3), R0)
    with pytest.raises(ConfigurationError):
        t1_statistic(np.eye(3), np.triu(ar1(3, 0.5)))


# --- critical value -------------------------------------------------------------------

@pytest.mark.parametrize("lam", [-0.8, -0.3, 0.0, 0.2, 0.5, 0.9, 0.99])
@pytest.mark.parametrize("t", [1.5, 2.2, 2.8])
def test_box_probability_against_scipy(lam, t):
    mvn = stats.multivariate_normal(mean=[0, 0], cov=[[1, lam], [lam, 1]])
    ref = mvn.cdf([t, t]) - mvn.cdf([-t, t]) - mvn.cdf([t, -t]) + mvn.cdf([-t, -t])
    assert box_probability(t, lam) == pytest.approx(ref, abs=2e-6)


def test_critical_value_independent_case():
    # (2 Phi(t) - 1)^2 = 0.95  =>  t = Phi^{-1}((1 + sqrt(0.95)) / 2)
    exact = stats.norm.ppf((1 + np.sqrt(0.95)) / 2)
    assert critical_value(0.0) == pytest.approx(exact, abs=1e-9)
    assert exact == pytest.approx(2.2365, abs=1e-4)


def test_critical_value_perfect_correlation():
    assert critical_value(1.0) == pytest.approx(stats.norm.ppf(0.975), abs=1e-12)
    assert critical_value(-1.0) == pytest.approx(stats.norm.ppf(0.975), abs=1e-12)


def test_critical_value_monotone_and_symmetric():
    grid = np.linspace(0, 1, 21)
    t = np.array([critical_value(l) for l in grid])
    assert np.all(np.diff(t) <= 1e-12)
    assert t[0] > t[-1]
    for l in (0.3, 0.7):
        assert critical_value(l) == pytest.approx(critical_value(-l), abs=1e-9)


def test_critical_value_validates():
    with pytest.raises(ConfigurationError):
        critical_value(1.5)
    with pytest.raises(ConfigurationError):
        critical_value(0.2, alpha=0.0)


# --- null parameters --------------------------------------------------------------------

@pytest.mark.parametrize("tau", [0.0, 2.0, 4.0])
@pytest.mark.parametrize("p,n", [(100, 200), (50, 40)])
def test_model1_closed_form(tau, p, n):
    y = p / (n - 1)
    par = null_params(p, n, np.eye(p), Elliptical(tau))
    assert par.mu1 == pytest.approx(p * y + (tau - 3) * y, abs=1e-8)
    assert par.var1 == pytest.approx(4 * y * y, abs=1e-8)
    assert par.degenerate and par.lam == 1.0
    assert par.mu2 == par.mu1 and par.var2 == par.var1


def test_model1_linear_contour_path():
    # the linear structure goes through the contour kernels; beta_x = 0 matches tau = 2
    p, n = 40, 81
    y = p / (n - 1)
    mu, var = t1_null_params(p, n, np.eye(p), Linear(0.0), G=np.eye(p))
    assert mu == pytest.approx(p * y - y, abs=1e-8)
    assert var == pytest.approx(4 * y * y, abs=1e-8)


def test_t1_closed_form_matches_contour():
    # elliptical T1 uses the R M = I closed form; the five-statistic contour route must agree
    p, n = 30, 61
    R0 = ar1(p, 0.5)
    mu, var = t1_null_params(p, n, R0, Elliptical(2.0))
    mom = lss_moments(p, n, R0, Elliptical(2.0))
    c = np.array([-2.0, 1.0, 0, 0, 0])
    assert mu == pytest.approx(p * p / (n - 1) + c @ mom.means, abs=1e-8)
    assert var == pytest.approx(c @ mom.cov @ c, rel=1e-8)


def test_legacy_t2_inconsistent_for_ar1():
    with pytest.raises(ModelInconsistencyError):
        t2_null_params(100, 200, ar1(100, 0.5), Elliptical(2.0), variant="legacy")


def test_legacy_t2_agrees_at_identity():
    p, n = 30, 61
    R0 = np.eye(p) + 1e-4 * (ar1(p, 0.5) - np.eye(p))
    a = t2_null_params(p, n, R0, Elliptical(2.0), variant="legacy")
    b = t2_null_params(p, n, R0, Elliptical(2.0))
    assert a == pytest.approx(b, abs=1e-4)


def test_lambda_and_parts():
    p, n = 40, 81
    R0 = ar1(p, 0.5)
    lam, parts = joint_lambda(p, n, R0, Elliptical(2.0), return_parts=True)
    assert 0 < lam < 1
    par = null_params(p, n, R0, Elliptical(2.0))
    assert par.lam == pytest.approx(lam)
    assert par.sigma12 == pytest.approx(parts)
    assert par.t_alpha == pytest.approx(critical_value(lam), abs=1e-12)
    assert stats.norm.ppf(0.975) < par.t_alpha < critical_value(0.0)


def test_need_t2_false_skips_joint():
    par = null_params(20, 41, ar1(20, 0.3), Elliptical(2.0), need_t2=False)
    assert np.isnan(par.mu2) and np.isnan(par.lam)


# --- reports ------------------------------------------------------------------------------

def test_report_at_truth_gives_minus_mu_over_sigma():
    p, n = 20, 41
    R0 = ar1(p, 0.4)
    par = null_params(p, n, R0, Elliptical(2.0))
    rep = report(R0, R0, par)
    assert rep.z1 == pytest.approx(-par.mu1 / par.sd1)
    assert rep.z2 == pytest.approx(-par.mu2 / par.sd2)
    assert rep.tm == pytest.approx(max(abs(rep.z1), abs(rep.z2)))


def test_run_test_end_to_end():
    p, n = 30, 60
    R0 = ar1(p, 0.5)
    spec = PopulationSpec(kind="Elliptical", gamma=np.linalg.cholesky(R0))
    batch = generate_batch(spec, n, seed=3)
    rep = run_test(batch, R0)
    assert rep.decision in ("reject", "retain")
    assert 0 <= rep.p1 <= 1 and 0 <= rep.p2 <= 1
    d = rep.to_dict()
    assert d["null_params"]["lam"] == rep.null_params.lam
    with pytest.raises(ConfigurationError):
        run_test(batch, np.eye(p + 1))
