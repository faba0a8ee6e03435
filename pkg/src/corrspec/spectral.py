"""Limiting spectral distribution of rescaled sample correlation matrices.

The companion Stieltjes transform m(z) of F^{y,H} solves

    z = -1/m + y * int t / (1 + t m) dH(t),

with Im m * sign(Im z) > 0.  The density is Im m(x + i0) / (y pi) and, for
y > 1, F carries an extra atom 1 - 1/y at the origin.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .correlation import RescaledSpec
from .errors import (BranchError, ConfigurationError, PrecisionError, SolverError,
                     UnsupportedSupportError)

_CHUNK = 2 ** 22  # max atoms x points evaluated in one block


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Discrete H with positive atoms t_i and weights w_i, plus the ratio y."""

    atoms: np.ndarray
    weights: np.ndarray
    y: float

    def __post_init__(self):
        t = np.asarray(self.atoms, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if t.shape != w.shape or t.size == 0:
            raise ConfigurationError("atoms and weights must be non-empty and of equal length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be positive and sum to 1")
        if np.any(t <= 0):
            raise ConfigurationError("atoms must be positive (RM is positive definite)")
        if not self.y > 0:
            raise ConfigurationError(f"y must be positive, got {self.y}")
        order = np.argsort(t)
        object.__setattr__(self, "atoms", t[order])
        object.__setattr__(self, "weights", w[order])
        object.__setattr__(self, "y", float(self.y))

    @classmethod
    def point(cls, c: float, y: float) -> "SpectralMeasure":
        return cls(np.array([float(c)]), np.array([1.0]), y)

    @classmethod
    def from_eigenvalues(cls, ev, y: float, merge_tol: float = 1e-10) -> "SpectralMeasure":
        """Equal-weight measure on ``ev``; eigenvalues closer than merge_tol (relative) are pooled."""
        ev = np.sort(np.asarray(ev, dtype=float).reshape(-1))
        p = ev.size
        if p == 0:
            raise ConfigurationError("empty spectrum")
        groups = [[ev[0]]]
        for v in ev[1:]:
            if v - groups[-1][0] <= merge_tol * max(1.0, abs(v)):
                groups[-1].append(v)
            else:
                groups.append([v])
        atoms = np.array([np.mean(g) for g in groups])
        counts = np.array([len(g) for g in groups], dtype=float)
        return cls(atoms, counts / p, y)

    def with_y(self, y: float) -> "SpectralMeasure":
        return SpectralMeasure(self.atoms, self.weights, y)

    def moment(self, k: int) -> float:
        return float(np.sum(self.weights * self.atoms ** k))


@dataclass(frozen=True)
class StieltjesEval:
    """Solution of the companion fixed point at (an array of) points z."""

    z: np.ndarray
    s: np.ndarray
    m: np.ndarray
    m_prime: np.ndarray
    residual: np.ndarray
    y: float


@dataclass(frozen=True)
class SupportInfo:
    a: float
    b: float
    atom_at_zero: float

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ConfigurationError(f"invalid support [{self.a}, {self.b}]")


def esd_measure(R: np.ndarray, M: Optional[RescaledSpec], y: float, merge_tol: float = 1e-10) -> SpectralMeasure:
    """Empirical spectral distribution of R M (eigenvalues of M^{1/2} R M^{1/2})."""
    R = np.asarray(R, dtype=float)
    A = R if M is None else M.sqrt @ R @ M.sqrt
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return SpectralMeasure.from_eigenvalues(ev, y, merge_tol)


# --- fixed point ----------------------------------------------------------

def _moments(m: np.ndarray, t: np.ndarray, w: np.ndarray, orders=(1,)):
    """Return sum_i w_i t_i^k / (1 + t_i m)^k for each k in ``orders``."""
    m = np.asarray(m)
    out = [np.zeros(m.shape, dtype=np.result_type(m, float)) for _ in orders]
    flat = m.reshape(-1)
    outs = [o.reshape(-1) for o in out]
    step = max(1, _CHUNK // max(1, t.size))
    for lo in range(0, flat.size, step):
        blk = flat[lo:lo + step]
        q = t[:, None] / (1.0 + t[:, None] * blk[None, :])
        qk = q
        for j, k in enumerate(range(1, max(orders) + 1)):
            if k > 1:
                qk = qk * q
            if k in orders:
                outs[orders.index(k)][lo:lo + step] = w @ qk
    return out


def z_of_m(m, H: SpectralMeasure):
    """Inverse map z(m) = -1/m + y int t/(1+tm) dH."""
    (i1,) = _moments(m, H.atoms, H.weights, (1,))
    return -1.0 / m + H.y * i1


def _residual(m, z, H):
    return np.abs(z - z_of_m(m, H))


def _newton(m, z, H, iters=60, tol=1e-15):
    m = m.copy()
    active = np.ones(m.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        ma = m[active]
        i1, i2 = _moments(ma, H.atoms, H.weights, (1, 2))
        f = -1.0 / ma + H.y * i1 - z[active]
        fp = 1.0 / ma ** 2 - H.y * i2
        step = f / fp
        step[~np.isfinite(step)] = 0.0
        m[active] = ma - step
        done = np.abs(step) <= tol * (1.0 + np.abs(ma))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return m


def _fixed_point(m, z, H, max_iter, tol):
    """Damped iteration m <- 1/(-z + y int t/(1+tm) dH); damping 0.5 when the residual grows."""
    m = m.copy()
    active = np.ones(m.shape, dtype=bool)
    prev_res = np.full(m.shape, np.inf)
    it = 0
    while active.any() and it < max_iter:
        it += 1
        ma = m[active]
        za = z[active]
        (i1,) = _moments(ma, H.atoms, H.weights, (1,))
        res = np.abs(-1.0 / ma + H.y * i1 - za)
        new = 1.0 / (-za + H.y * i1)
        grow = res > prev_res[active]
        new = np.where(grow, ma + 0.5 * (new - ma), new)
        dm = np.abs(new - ma)
        m[active] = new
        prev_res[active] = res
        idx = np.flatnonzero(active)
        active[idx[dm < tol]] = False
    return m, it


def solve_underline_s(z, H: SpectralMeasure, m0=None, *, tol: float = 1e-12, max_iter: int = 10_000,
                      residual_tol: float = 1e-10) -> StieltjesEval:
    """Companion Stieltjes transform at z (scalar or array).

    A short damped fixed-point phase locates the admissible branch; Newton
    steps on the same equation then polish to machine precision.  Points
    that Newton cannot certify fall back to the full fixed-point budget.
    ``m0`` optionally warm-starts from a nearby solution (continuation).
    """
    z_in = np.asarray(z, dtype=complex)
    shape = z_in.shape
    zf = z_in.reshape(-1)
    lower = zf.imag < 0
    zu = np.where(lower, np.conj(zf), zf)
    if m0 is None:
        m = -1.0 / zu
        m, _ = _fixed_point(m, zu, H, 200, 1e-8)
    else:
        m = np.asarray(m0, dtype=complex).reshape(-1).copy()
        m = np.where(lower, np.conj(m), m)
    m = _newton(m, zu, H)

    scale = np.maximum(1.0, np.abs(zu))
    res = _residual(m, zu, H)
    bad = ~np.isfinite(m) | (res > 1e-13 * scale) | ((zu.imag > 0) & ~(m.imag > 0))
    if bad.any():
        mb = -1.0 / zu[bad]
        mb, _ = _fixed_point(mb, zu[bad], H, max_iter, tol)
        mb = _newton(mb, zu[bad], H)
        m[bad] = mb
        res = _residual(m, zu, H)

    if np.any(~np.isfinite(m)) or np.any(res > residual_tol * scale):
        raise SolverError("companion fixed point did not converge", float(np.nanmax(res)))
    if np.any((zu.imag > 0) & ~(m.imag > 0)):
        raise BranchError("solution violates Im m * sign(Im z) > 0")

    (i2,) = _moments(m, H.atoms, H.weights, (2,))
    mp = 1.0 / (1.0 / m ** 2 - H.y * i2)
    m = np.where(lower, np.conj(m), m)
    mp = np.where(lower, np.conj(mp), mp)
    y = H.y
    s = (m + (1.0 - y) / zf) / y
    return StieltjesEval(z=zf.reshape(shape), s=s.reshape(shape), m=m.reshape(shape),
                         m_prime=mp.reshape(shape), residual=res.reshape(shape), y=y)


def mp_companion(z, y: float, c: float = 1.0):
    """Closed-form companion transform for H = delta_c (root of a quadratic).

    With H = delta_c the fixed point reads c z m^2 + (z + c - c y) m + 1 = 0 after
    clearing denominators; the root with Im m * sign(Im z) > 0 is returned.
    """
    z = np.asarray(z, dtype=complex)
    A = c * z
    B = z + c - c * y
    disc = np.sqrt(B * B - 4.0 * A)
    r1 = (-B + disc) / (2.0 * A)
    r2 = (-B - disc) / (2.0 * A)
    sgn = np.sign(z.imag)
    pick1 = (r1.imag * sgn) > (r2.imag * sgn)
    return np.where(pick1, r1, r2)


# --- support ----------------------------------------------------------------

def _z_real(m, H):
    return np.real(z_of_m(np.asarray(m, dtype=float), H))


def _zprime_real(m, H):
    (i2,) = _moments(np.asarray(m, dtype=float), H.atoms, H.weights, (2,))
    return 1.0 / m ** 2 - H.y * np.real(i2)


def _crit_points(lo, hi, H, npts, mapping):
    """Roots of z'(m) on (lo, hi) via a sign-change grid in a clustered parameter u."""
    k = np.arange(1, npts + 1)
    u = 0.5 * (1.0 - np.cos(np.pi * k / (npts + 1)))
    m = mapping(u)
    zp = _zprime_real(m, H)
    sign = np.sign(zp)
    roots = []
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        f = lambda uu: float(_zprime_real(np.array([mapping(np.array([uu]))[0]]), H)[0])
        ur = brentq(f, u[i], u[i + 1], xtol=1e-15, rtol=1e-15, maxiter=200)
        mr = mapping(np.array([ur]))[0]
        roots.append((float(mr), int(np.sign(zp[i + 1]))))
    return roots


def support_interval(H: SpectralMeasure, npts: int = 10_000) -> SupportInfo:
    """Single-interval support [a, b] from the critical points of z(m).

    Raises UnsupportedSupportError when z'(m) turns positive between two poles
    -1/t_i, i.e. when the support has more than one component.
    """
    t, y = H.atoms, H.y
    poles = np.sort(-1.0 / t)  # ascending, all negative
    edges = []
    # right edge: interval (-1/t_max, 0)
    q = poles[-1]
    right = _crit_points(q, 0.0, H, npts, lambda u: q * (1.0 - u))
    # inner intervals between consecutive poles
    gaps = []
    for lo, hi in zip(poles[:-1], poles[1:]):
        gaps += _crit_points(lo, hi, H, npts, lambda u, lo=lo, hi=hi: lo + (hi - lo) * u)
    # left edge
    if y < 1:
        q0 = poles[0]
        left = _crit_points(-np.inf, q0, H, npts, lambda u: q0 / np.clip(u, 1e-300, None))
    elif y > 1:
        scale = 1.0 / float(np.sum(H.weights * t))
        left = _crit_points(0.0, np.inf, H, npts, lambda u: scale * u / (1.0 - u))
    else:
        left = []

    edges = sorted(_z_real(np.array([r[0]]), H)[0] for r in right + gaps + left)
    if len(right) != 1 or gaps or (y != 1 and len(left) != 1):
        raise UnsupportedSupportError("support is not a single interval", edges)
    b = float(_z_real(np.array([right[0][0]]), H)[0])
    a = 0.0 if y == 1 else float(_z_real(np.array([left[0][0]]), H)[0])
    lo_br = t[0] * (1 - np.sqrt(y)) ** 2 if y < 1 else 0.0
    hi_br = t[-1] * (1 + np.sqrt(y)) ** 2
    if a < 0.99 * lo_br - 1e-12 or b > 1.01 * hi_br + 1e-12 or a < 0:
        raise UnsupportedSupportError("support edges fall outside the theoretical bracket", [a, b])
    return SupportInfo(a=max(a, 0.0), b=b, atom_at_zero=(1.0 - 1.0 / y) if y > 1 else 0.0)


# --- density and integrals ----------------------------------------------------

_RICHARDSON_V = (1e-5, 1e-6, 1e-7)


def _density_inside(x: np.ndarray, H: SpectralMeasure) -> np.ndarray:
    z = x + 0.1j
    ev = solve_underline_s(z, H)
    m = ev.m
    vals = {}
    for v in (1e-2, 1e-3, 1e-4) + _RICHARDSON_V:
        m = solve_underline_s(x + 1j * v, H, m0=m).m
        vals[v] = m.imag
    v0, v1, v2 = _RICHARDSON_V
    f0, f1, f2 = vals[v0], vals[v1], vals[v2]
    # quadratic extrapolation to v = 0 through the three samples
    l0 = v1 * v2 / ((v0 - v1) * (v0 - v2))
    l1 = v0 * v2 / ((v1 - v0) * (v1 - v2))
    l2 = v0 * v1 / ((v2 - v0) * (v2 - v1))
    im0 = l0 * f0 + l1 * f1 + l2 * f2
    return im0 / (H.y * np.pi)


def lsd_density(x, H: SpectralMeasure, support: Optional[SupportInfo] = None, return_flag: bool = False):
    """Density f^{y,H}(x); zero (and flagged) outside [a, b]."""
    x = np.asarray(x, dtype=float)
    xs = x.reshape(-1)
    sup = support if support is not None else support_interval(H)
    inside = (xs > sup.a) & (xs < sup.b)
    f = np.zeros_like(xs)
    if inside.any():
        f[inside] = _density_inside(xs[inside], H)
    if np.any(f < -1e-8):
        warnings.warn("negative density values clamped to zero", RuntimeWarning)
    f = np.maximum(f, 0.0)
    f = f.reshape(x.shape)
    if return_flag:
        return f, (~inside).reshape(x.shape)
    return f


@lru_cache(maxsize=8)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _theta_rule(a: float, b: float, n: int):
    """Nodes/weights on [a, b] via x = a + (b-a)(1 - cos th)/2, GL in th on [0, pi].

    The substitution absorbs the square-root edge behaviour of the density.
    """
    u, wu = _gauss_legendre(n)
    th = 0.5 * np.pi * (u + 1.0)
    x = a + 0.5 * (b - a) * (1.0 - np.cos(th))
    w = wu * 0.5 * np.pi * 0.5 * (b - a) * np.sin(th)
    return x, w


def lsd_integral(g: Callable, H: SpectralMeasure, n_nodes: int = 512, support: Optional[SupportInfo] = None,
                 check: bool = True) -> float:
    """int_a^b g(x) f^{y,H}(x) dx (continuous part only)."""
    sup = support if support is not None else support_interval(H)
    x, w = _theta_rule(sup.a, sup.b, n_nodes)
    val = float(np.sum(w * g(x) * lsd_density(x, H, sup)))
    if check:
        x2, w2 = _theta_rule(sup.a, sup.b, n_nodes // 2)
        val2 = float(np.sum(w2 * g(x2) * lsd_density(x2, H, sup)))
        if abs(val - val2) > 1e-6 * max(1.0, abs(val)):
            raise PrecisionError(f"centering quadrature not converged: {val!r} vs {val2!r}")
    return val


def lsd_cdf(x, H: SpectralMeasure, support: Optional[SupportInfo] = None, nodes_per_panel: int = 16) -> np.ndarray:
    """CDF of F^{y,H}, including the atom at 0 when y > 1."""
    sup = support if support is not None else support_interval(H)
    x = np.asarray(x, dtype=float)
    xs = np.clip(x.reshape(-1), sup.a, sup.b)
    th = np.arccos(np.clip(1.0 - 2.0 * (xs - sup.a) / (sup.b - sup.a), -1.0, 1.0))
    # query points plus a fixed panel grid, so a handful of queries stays accurate
    base = np.linspace(0.0, np.pi, 65)
    brk = np.union1d(base, th)
    u, wu = _gauss_legendre(nodes_per_panel)
    lo, hi = brk[:-1], brk[1:]
    T = 0.5 * (hi - lo)[:, None] * (u[None, :] + 1.0) + lo[:, None]
    W = 0.5 * (hi - lo)[:, None] * wu[None, :]
    X = sup.a + 0.5 * (sup.b - sup.a) * (1.0 - np.cos(T))
    F = lsd_density(X.reshape(-1), H, sup).reshape(X.shape)
    pieces = np.sum(W * F * 0.5 * (sup.b - sup.a) * np.sin(T), axis=1)
    csum = np.concatenate([[0.0], np.cumsum(pieces)])
    cum = csum[np.searchsorted(brk, th)]
    out = np.where(x.reshape(-1) < 0, 0.0, sup.atom_at_zero + cum)
    return np.minimum(out, 1.0).reshape(x.shape)


def centering_integral(g: Callable, p: int, n: int, H_n: SpectralMeasure, include_atom: bool = True,
                       n_nodes: int = 512) -> float:
    """p * int g dF^{y_{n-1}, H_n}, with y_{n-1} = p/(n-1).

    ``include_atom`` adds g(0)(1 - 1/y) for y > 1.  Pair ``include_atom=False``
    with a positive-part LSS (zero eigenvalues dropped).
    """
    y = p / (n - 1)
    H = H_n.with_y(y)
    sup = support_interval(H)
    val = lsd_integral(g, H, n_nodes=n_nodes, support=sup)
    if include_atom and sup.atom_at_zero > 0:
        val += float(g(np.array([0.0]))[0]) * sup.atom_at_zero
    return p * val


def mp_moment(k: int, y: float) -> float:
    """k-th moment of the Marchenko-Pastur law with ratio y."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    return float(sum(comb(k, r) * comb(k - 1, r) * y ** r / (r + 1) for r in range(k)))


def lsd_moment(k: int, H: SpectralMeasure) -> float:
    """Exact k-th moment of F^{y,H} for k in {1, 2}: E = m1(H); m2(H) + y m1(H)^2."""
    h1, h2 = H.moment(1), H.moment(2)
    if k == 1:
        return h1
    if k == 2:
        return h2 + H.y * h1 ** 2
    raise ConfigurationError("closed-form moments available for k <= 2")
