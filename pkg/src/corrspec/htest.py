"""Tests of H0: R = R0 built on T1 = tr(Rhat R0^{-1} - I)^2 and T2 = tr(Rhat - R0)^2.

Under H0 both statistics are affine in linear spectral statistics:

    T1 = LSS_{x^2}(R0^{-1}) - 2 LSS_x(R0^{-1}) + p
    T2 = LSS_{x^2}(I) - 2 LSS_x(R0) + tr R0^2

so their centers, variances and correlation all follow from one joint
evaluation of the CLT moments of five statistics on three rescalings.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .clt import CltContext, Elliptical, Linear, clt_moments, identity_case_moments
from .correlation import RescaledSpec, _sym_sqrt, population_summaries, sample_correlation_of
from .errors import (ConfigurationError, DegenerateJointError, ModelInconsistencyError,
                     SingularMatrixError)
from .spectral import _gauss_legendre

# coefficient vectors over the LSS order (x|R0^-1, x^2|R0^-1, x|I, x^2|I, x|R0)
_T1 = np.array([-2.0, 1.0, 0.0, 0.0, 0.0])
_T2 = np.array([0.0, 0.0, 0.0, 1.0, -2.0])


@dataclass(frozen=True)
class NullParams:
    mu1: float
    var1: float
    mu2: float
    var2: float
    lam: float
    t_alpha: float
    alpha: float
    sigma12: tuple = ()
    degenerate: bool = False
    variant: str = "corrected"

    @property
    def sd1(self) -> float:
        return float(np.sqrt(self.var1))

    @property
    def sd2(self) -> float:
        return float(np.sqrt(self.var2))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma12"] = list(self.sigma12)
        return d


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # keep pytest from collecting this class

    t1: float
    t2: float
    z1: float
    z2: float
    tm: float
    reject: bool
    reject_t1: bool
    reject_t2: bool
    p1: float
    p2: float
    null_params: NullParams

    @property
    def decision(self) -> str:
        return "reject" if self.reject else "retain"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decision"] = self.decision
        d["null_params"] = self.null_params.to_dict()
        return d


# --- statistics -----------------------------------------------------------------

def _check_R0(R0) -> np.ndarray:
    R0 = np.asarray(R0, dtype=float)
    if R0.ndim != 2 or R0.shape[0] != R0.shape[1]:
        raise ConfigurationError("R0 must be a square matrix")
    if not np.allclose(R0, R0.T, atol=1e-10):
        raise ConfigurationError("R0 must be symmetric")
    return 0.5 * (R0 + R0.T)


def t1_statistic(Rhat, R0) -> float:
    """tr((Rhat R0^{-1} - I)^2) through R0^{-1/2} Rhat R0^{-1/2}."""
    R0 = _check_R0(R0)
    w = np.linalg.eigvalsh(R0)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise SingularMatrixError("R0 is singular")
    S = _sym_sqrt(R0, -0.5)
    A = S @ np.asarray(Rhat, dtype=float) @ S
    A[np.diag_indices_from(A)] -= 1.0
    return float(np.sum(A * A))


def t2_statistic(Rhat, R0) -> float:
    D = np.asarray(Rhat, dtype=float) - np.asarray(R0, dtype=float)
    return float(np.sum(D * D))


# --- critical value ----------------------------------------------------------------

_NODES, _WEIGHTS = _gauss_legendre(16)


def box_probability(t: float, lam: float, panels: int = 32) -> float:
    """P(|X1| <= t, |X2| <= t) for a standard bivariate normal with correlation lam.

    Conditions on X1: the inner probability is a difference of normal CDFs,
    and the outer integral uses composite Gauss-Legendre on [-t, t].
    """
    if t <= 0:
        return 0.0
    if abs(lam) >= 1.0 - 1e-12:
        return float(2.0 * stats.norm.cdf(t) - 1.0)
    s = np.sqrt(1.0 - lam * lam)
    edges = np.linspace(-t, t, panels + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + h[:, None] * _NODES[None, :]).ravel()
    w = (h[:, None] * _WEIGHTS[None, :]).ravel()
    inner = stats.norm.cdf((t - lam * x) / s) - stats.norm.cdf((-t - lam * x) / s)
    return float(np.sum(w * stats.norm.pdf(x) * inner))


def critical_value(lam: float, alpha: float = 0.05, tol: float = 1e-10) -> float:
    """t with P(|X1| <= t, |X2| <= t) = 1 - alpha, by bisection on [1, 5]."""
    if not 0.0 < alpha <= 0.5:
        raise ConfigurationError("alpha must lie in (0, 0.5]")
    if abs(lam) > 1.0 + 1e-8 or not np.isfinite(lam):
        raise ConfigurationError("|lambda| must not exceed 1")
    lam = float(np.clip(lam, -1.0, 1.0))
    if abs(lam) >= 1.0 - 1e-12:
        return float(stats.norm.ppf(1.0 - alpha / 2.0))
    target = 1.0 - alpha
    lo, hi = 1.0, 5.0
    if box_probability(lo, lam) >= target or box_probability(hi, lam) <= target:
        raise ConfigurationError("critical value outside [1, 5]")
    while True:
        mid = 0.5 * (lo + hi)
        pm = box_probability(mid, lam)
        if abs(pm - target) < tol or hi - lo < 1e-13:
            return mid
        if pm < target:
            lo = mid
        else:
            hi = mid


# --- null parameters -------------------------------------------------------------------

def _structure_of(structure) -> Elliptical | Linear:
    if isinstance(structure, (Elliptical, Linear)):
        return structure
    raise ConfigurationError("structure must be Elliptical(tau) or Linear(beta_x)")


_CACHE: dict = {}


def _key(*parts) -> str:
    h = hashlib.sha256()
    for x in parts:
        if isinstance(x, np.ndarray):
            h.update(np.ascontiguousarray(x).tobytes())
        else:
            h.update(repr(x).encode())
    return h.hexdigest()


def lss_moments(p: int, n: int, R0, structure, G=None, num_nodes: int = 1024,
                variant: str = "corrected"):
    """Joint CLT moments of (x|R0^-1, x^2|R0^-1, x|I, x^2|I, x|R0) under H0.

    Plug-ins use n - 1 and y_{n-1} = p / (n - 1).  Results are cached per input.
    """
    R0 = _check_R0(R0)
    structure = _structure_of(structure)
    if R0.shape[0] != p:
        raise ConfigurationError("R0 dimension does not match p")
    if n < 3:
        raise ConfigurationError("need n >= 3")
    key = _key(p, n, R0, structure, G, num_nodes, variant)
    if key in _CACHE:
        return _CACHE[key]
    neff = n - 1
    kw = dict(G=G, n=neff, structure=structure, variant=variant)
    c_inv = CltContext(R0, M=RescaledSpec.inverse_of(R0), **kw)
    c_id = CltContext(R0, M=None, **kw)
    c_r0 = CltContext(R0, M=RescaledSpec(R0), **kw)
    mom = clt_moments([("x", c_inv), ("x^2", c_inv), ("x", c_id), ("x^2", c_id), ("x", c_r0)],
                      num_nodes=num_nodes)
    _CACHE[key] = mom
    return mom


def t1_null_params(p: int, n: int, R0, structure, G=None, variant: str = "corrected", **kw):
    """(mu1, var1) for T1 under H0."""
    structure = _structure_of(structure)
    R0 = _check_R0(R0)
    y = p / (n - 1)
    if isinstance(structure, Elliptical):
        a, b, c = population_summaries(R0, n - 1, variant=variant)
        m = identity_case_moments(a, b, c, y, structure.tau)
        mean_vec = np.array([-2.0, 1.0])
        mu = p * y + mean_vec @ m.means
        var = float(mean_vec @ m.cov @ mean_vec)
    else:
        mom = lss_moments(p, n, R0, structure, G=G, variant=variant, **kw)
        mu = p * y + _T1 @ mom.means
        var = float(_T1 @ mom.cov @ _T1)
    return float(mu), _check_var(var, "var1")


def _check_var(v: float, what: str) -> float:
    if v < -1e-6:
        raise ModelInconsistencyError(f"{what} = {v:.3e} is negative")
    return max(v, 0.0)


def t2_null_params(p: int, n: int, R0, structure, G=None, variant: str = "corrected", num_nodes: int = 1024):
    """(mu2, var2) for T2 under H0.

    The default treats T2 - p y_{n-1} as LSS_{x^2}(I) - 2 LSS_x(R0) centered
    by the limit moments.  variant="legacy" uses the shortcut
    that replaces E X_{x^2}(I) by (tau - 3) y + p - tr R0^2 and
    Var X_{x^2}(I) by 4 y^2; both agree with the default only when R0 = I.
    """
    R0 = _check_R0(R0)
    structure = _structure_of(structure)
    y = p / (n - 1)
    mom = lss_moments(p, n, R0, structure, G=G, num_nodes=num_nodes,
                      variant="legacy" if variant == "legacy" else "corrected")
    if variant == "legacy":
        tau = structure.tau if isinstance(structure, Elliptical) else 2.0
        mu = (p + tau - 3) * y - p + float(np.sum(R0 * R0)) - 2.0 * mom.means[4]
        var = 4 * y * y + 4 * mom.cov[4, 4] - 4 * mom.cov[3, 4]
    else:
        mu = p * y + _T2 @ mom.means
        var = float(_T2 @ mom.cov @ _T2)
    return float(mu), _check_var(float(var), "var2")


def joint_lambda(p: int, n: int, R0, structure, G=None, variant: str = "corrected",
                 num_nodes: int = 1024, return_parts: bool = False):
    """Correlation of the limits of T1 and T2 under H0.

    sigma12 = s121 - 2 s122 - 2 s123 + 4 s124 with
    s121 = Cov(X_{x^2}|R0^-1, X_{x^2}|I), s122 = Cov(X_{x^2}|R0^-1, X_x|R0),
    s123 = Cov(X_x|R0^-1, X_{x^2}|I),     s124 = Cov(X_x|R0^-1, X_x|R0).
    """
    mom = lss_moments(p, n, R0, structure, G=G, num_nodes=num_nodes, variant=variant)
    C = mom.cov
    parts = (C[1, 3], C[1, 4], C[0, 3], C[0, 4])
    s12 = parts[0] - 2 * parts[1] - 2 * parts[2] + 4 * parts[3]
    v1 = float(_T1 @ C @ _T1)
    v2 = float(_T2 @ C @ _T2)
    if v1 <= 0 or v2 <= 0:
        raise DegenerateJointError(f"non-positive variance (var1={v1:.3e}, var2={v2:.3e})")
    lam = s12 / np.sqrt(v1 * v2)
    if abs(lam) > 1 + 1e-6:
        warnings.warn(f"lambda = {lam:.8f} outside [-1, 1] before clamping", RuntimeWarning)
    lam = float(np.clip(lam, -1.0, 1.0))
    if return_parts:
        return lam, tuple(float(x) for x in parts)
    return lam


def _is_identity(R0) -> bool:
    return bool(np.allclose(R0, np.eye(R0.shape[0]), atol=1e-12))


def null_params(p: int, n: int, R0, structure, alpha: float = 0.05, G=None,
                variant: str = "corrected", num_nodes: int = 1024, need_t2: bool = True) -> NullParams:
    """All null quantities for the marginal and combined tests.

    With R0 = I the two statistics coincide; lambda is then 1, the critical
    value is the univariate one, and the result is flagged degenerate.
    ``need_t2=False`` skips the contour work when only T1 is used.
    """
    R0 = _check_R0(R0)
    structure = _structure_of(structure)
    mu1, var1 = t1_null_params(p, n, R0, structure, G=G, variant=variant, num_nodes=num_nodes)
    if _is_identity(R0):
        return NullParams(mu1, var1, mu1, var1, 1.0, critical_value(1.0, alpha), alpha,
                          degenerate=True, variant=variant)
    if not need_t2:
        nan = float("nan")
        return NullParams(mu1, var1, nan, nan, nan, nan, alpha, variant=variant)
    mu2, var2 = t2_null_params(p, n, R0, structure, G=G, variant=variant, num_nodes=num_nodes)
    lam, parts = joint_lambda(p, n, R0, structure, G=G, variant=variant, num_nodes=num_nodes,
                              return_parts=True)
    degenerate = abs(lam) > 1 - 1e-9
    return NullParams(mu1, var1, mu2, var2, lam, critical_value(lam, alpha), alpha,
                      sigma12=parts, degenerate=degenerate, variant=variant)


def standardize(t1: float, t2: float, params: NullParams) -> tuple[float, float]:
    z1 = (t1 - params.mu1) / params.sd1 if params.var1 > 0 else np.inf * np.sign(t1 - params.mu1)
    z2 = (t2 - params.mu2) / params.sd2 if params.var2 > 0 else np.inf * np.sign(t2 - params.mu2)
    return float(z1), float(z2)


def report(Rhat, R0, params: NullParams) -> TestReport:
    t1, t2 = t1_statistic(Rhat, R0), t2_statistic(Rhat, R0)
    z1, z2 = standardize(t1, t2, params)
    q = stats.norm.ppf(1.0 - params.alpha / 2.0)
    tm = max(abs(z1), abs(z2))
    return TestReport(
        t1=t1, t2=t2, z1=z1, z2=z2, tm=tm,
        reject=bool(tm > params.t_alpha),
        reject_t1=bool(abs(z1) > q), reject_t2=bool(abs(z2) > q),
        p1=float(2 * stats.norm.sf(abs(z1))), p2=float(2 * stats.norm.sf(abs(z2))),
        null_params=params,
    )


def run_test(batch, R0, alpha: float = 0.05, structure=Elliptical(2.0), G=None,
             params: Optional[NullParams] = None, variant: str = "corrected") -> TestReport:
    """Marginal and combined tests of H0: R = R0 on one sample."""
    R0 = _check_R0(R0)
    Rhat = sample_correlation_of(batch)
    if Rhat.shape != R0.shape:
        raise ConfigurationError("data dimension does not match R0")
    if params is None:
        n = batch.n if hasattr(batch, "n") else np.asarray(batch).shape[1]
        params = null_params(R0.shape[0], n, R0, structure, alpha=alpha, G=G, variant=variant)
    return report(Rhat, R0, params)
