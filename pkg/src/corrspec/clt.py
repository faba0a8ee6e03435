"""Mean and covariance of the Gaussian limit of linear spectral statistics.

For W(g) = sum_i g(lambda_i) - p int g dF^{y_{n-1}, H_n} the limit has

    E X_g        = -1/(2 pi i)   oint g(z) EM(z) dz
    Cov(X_g, X_h) = -1/(4 pi^2) oint oint g(z1) h(z2) Cov(M(z1), M(z2)) dz2 dz1

with kernels depending on the companion transform m(z), its derivative and
the resolvent  RR(z) = (I + m(z) R M)^{-1}.  Every kernel below is evaluated in
the eigenbasis of R M: with  M^{1/2} R M^{1/2} = V diag(lam) V^T,
P = M^{-1/2} V and Q = P^{-1} = V^T M^{1/2} we have R M = P diag(lam) Q and

    RR(z) = P diag(d) Q,   d_i = 1/(1 + m lam_i),   d/dz d_i = -m' lam_i d_i^2.

Diagonals of A RR B are then fixed p x p matrices applied to d, and the
double sums over (k, l) collapse to quadratic forms in d with precomputed
p x p tensors.  Trace limits (1/n) sum_k are finite-(p, n) plug-ins.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .contour import Contour, build_contour, build_nested_contours, check_nested, union_support
from .correlation import RescaledSpec, _sym_sqrt
from .errors import ConfigurationError, ContourError, NumericalError, PrecisionError
from .spectral import SpectralMeasure, StieltjesEval, solve_underline_s, support_interval


# --- structures and context ---------------------------------------------------

@dataclass(frozen=True)
class Elliptical:
    tau: float = 2.0


@dataclass(frozen=True)
class Linear:
    beta_x: float = 0.0


Structure = Union[Elliptical, Linear]
KERNEL_VARIANTS = ("corrected", "legacy")


def _beta(structure) -> float:
    return structure.beta_x if isinstance(structure, Linear) else 0.0


class CltContext:
    """Finite-(p, n) plug-in bundle for the kernels.

    Parameters
    ----------
    R : population correlation matrix.
    M : rescaling matrix (RescaledSpec or array); identity by default.
    G : matrix with G G^T = R; only the linear structure uses it.  Defaults
        to the symmetric square root of R.
    n : effective sample size used in every (1/n) plug-in; may be fractional.
    y : ratio; defaults to p / n.
    variant : "corrected" (default) or "legacy".  Two legacy mean terms carry
        M twice in one factor, which breaks the invariance under M -> cM;
        "corrected" uses M^{-1} there.  The legacy beta_x terms built from
        G^T M RR G also carry an extra factor y; "corrected" drops it.  For
        elliptical data with M = I the variants coincide.  In the covariance, the
        mixed beta_x terms use G^T RR G under "legacy"; "corrected" uses G^T M RR G,
        the only choice that keeps the kernel invariant under M -> cM.
    """

    def __init__(self, R, M=None, G=None, n=None, structure: Structure = Elliptical(), y=None,
                 variant: str = "corrected"):
        R = np.asarray(R, dtype=float)
        p = R.shape[0]
        if R.shape != (p, p):
            raise ConfigurationError("R must be square")
        if n is None or not n > 0:
            raise ConfigurationError("sample size n must be positive")
        if M is None:
            M = RescaledSpec.identity(p)
        elif not isinstance(M, RescaledSpec):
            M = RescaledSpec(M)
        if M.p != p:
            raise ConfigurationError("R and M dimensions differ")
        G = _sym_sqrt(R) if G is None else np.asarray(G, dtype=float)
        if np.abs(G @ G.T - R).max() > 1e-10 * max(1.0, np.abs(R).max()):
            raise ConfigurationError("G G^T must equal R")
        self.R, self.M, self.G = R, M, G
        self.n = float(n)
        self.p = p
        self.y = float(p / self.n if y is None else y)
        self.structure = structure
        if variant not in KERNEL_VARIANTS:
            raise ConfigurationError(f"variant must be one of {KERNEL_VARIANTS}")
        self.variant = variant

    # eigenbasis ------------------------------------------------------------
    @cached_property
    def _eig(self):
        S = self.M.sqrt @ self.R @ self.M.sqrt
        lam, V = np.linalg.eigh(0.5 * (S + S.T))
        Minv_sqrt = np.linalg.inv(self.M.sqrt)
        P = Minv_sqrt @ V
        Q = V.T @ self.M.sqrt
        return lam, P, Q

    @property
    def lam(self):
        return self._eig[0]

    @cached_property
    def H(self) -> SpectralMeasure:
        return SpectralMeasure.from_eigenvalues(self.lam, self.y)

    @cached_property
    def support(self):
        return support_interval(self.H)

    @property
    def tau(self) -> float:
        return self.structure.tau if isinstance(self.structure, Elliptical) else 2.0

    @property
    def beta(self) -> float:
        return _beta(self.structure)

    @property
    def beta_scale(self) -> float:
        """Factor in front of the (1/n) sum of the G^T M RR G products."""
        return self.y if self.variant == "legacy" else 1.0

    def same_population(self, other: "CltContext") -> bool:
        return (self.p == other.p and self.n == other.n and self.structure == other.structure
                and self.variant == other.variant
                and np.array_equal(self.R, other.R) and np.array_equal(self.G, other.G))

    # coefficient matrices: diag(A RR B) = coef(A, B) @ d ----------------------
    def coef(self, A=None, B=None) -> np.ndarray:
        _, P, Q = self._eig
        AP = P if A is None else A @ P
        QB = Q if B is None else Q @ B
        return AP * QB.T

    @cached_property
    def C(self) -> dict:
        lam, P, Q = self._eig
        R, M, Mi, G = self.R, self.M.M, self.M.m_inv, self.G
        RM = R @ M
        tail = M if self.variant == "legacy" else Mi
        return {
            "I": self.coef(),                       # RR
            "IR": self.coef(None, R),               # RR R
            "RMI": self.coef() * lam[None, :],      # R M RR
            "MR": self.coef(M, R),                  # M RR R
            "RMM": self.coef(None, tail) * lam[None, :],  # R M RR M^{-1} (legacy: M)
            "MMi": self.coef(M, Mi),                # M RR M^{-1}
            "GtMG": self.coef(G.T @ M, G),          # G^T M RR G
            "GtG": self.coef(G.T, G),               # G^T RR G
            "RMR": self.coef(None, RM @ R),         # RR^2 R M R   (used with d^2)
            "RM": self.coef(None, RM),              # RR^2 R M     (used with d^2)
        }

    @cached_property
    def W_r(self) -> np.ndarray:
        return self.R ** 2

    @cached_property
    def W_g(self) -> np.ndarray:
        return self.G ** 2

    @cached_property
    def W2(self) -> np.ndarray:
        """r_kl^2 + beta/2 sum_j g_lj^2 g_kj^2."""
        G2 = self.G ** 2
        return self.W_r + 0.5 * self.beta * (G2 @ G2.T)

    @cached_property
    def W3(self) -> np.ndarray:
        """beta sum_i g_ki^2 g_li^2 + 2 r_kl^2."""
        G2 = self.G ** 2
        return self.beta * (G2 @ G2.T) + 2.0 * self.W_r

    @cached_property
    def omega(self) -> np.ndarray:
        """beta/2 sum_j g_lj^4 + 1."""
        return 0.5 * self.beta * np.sum(self.G ** 4, axis=1) + 1.0

    def weighted_vec(self, W) -> np.ndarray:
        """c_i with sum_kl W_kl (M^{-1})_lk (M RR)_kl = c @ d."""
        _, P, Q = self._eig
        MP = self.M.M @ P
        Wp = W * self.M.m_inv.T
        return np.sum(MP * (Wp @ Q.T), axis=0)

    def tensor(self, W, A, B, Cm, D, block: int = 16) -> np.ndarray:
        """T_ij = sum_kl W_kl A_ki B_il C_lj D_jk (quadratic form kernel in d)."""
        p = self.p
        T = np.zeros((p, p))
        for k0 in range(0, p, block):
            ks = slice(k0, min(p, k0 + block))
            X = (W[ks][:, None, :] * B[None, :, :]) @ Cm
            T += np.sum(A[ks][:, :, None] * X * D[:, ks].T[:, None, :], axis=0)
        return T

    @cached_property
    def tensors(self) -> dict:
        lam, P, Q = self._eig
        M, Mi, G = self.M.M, self.M.m_inv, self.G
        MP, QMi, QM, QG, GtMP = M @ P, Q @ Mi, Q @ M, Q @ G, G.T @ M @ P
        out = {}
        Wr = self.W_r
        out["RR"] = self.tensor(Wr, P, Q, P, Q)
        out["RMi_MR"] = self.tensor(Wr, P, QMi, MP, Q)
        out["MRMi2"] = self.tensor(Wr, MP, QMi, MP, QMi)
        if isinstance(self.structure, Linear):
            W2 = self.W2
            out["L_RR"] = self.tensor(W2, P, Q, P, Q)
            out["L_RMi_MR"] = self.tensor(W2, P, QMi, MP, Q)
            out["L_MRMi2"] = self.tensor(W2, MP, QMi, MP, QMi)
            out["GtMR_RG"] = self.tensor(self.W_g, Q.T, GtMP.T, QG.T, P.T)
            QT = QM if self.variant == "legacy" else QMi
            out["GtMRM_MRG"] = self.tensor(self.W_g, QT.T, GtMP.T, QG.T, MP.T)
        return out

    @cached_property
    def c9(self) -> np.ndarray:
        return self.weighted_vec(self.W_r)

    @cached_property
    def c9_linear(self) -> np.ndarray:
        return self.weighted_vec(self.W2)

    @cached_property
    def cross_K0(self):
        """Cache for Q_j P_h o (Q_h P_j)^T keyed by partner id."""
        return {}

    # nodes -------------------------------------------------------------------
    def nodes(self, z) -> "NodeState":
        if isinstance(z, StieltjesEval):
            ev = z
        else:
            ev = solve_underline_s(np.asarray(z, dtype=complex), self.H)
        return NodeState.build(ev, self.lam)


@dataclass(frozen=True, eq=False)
class NodeState:
    """m, m' and the diagonal resolvent factors at a set of points."""

    z: np.ndarray
    m: np.ndarray
    dm: np.ndarray
    d: np.ndarray   # (p, N)
    dd: np.ndarray  # d/dz of d

    @classmethod
    def build(cls, ev: StieltjesEval, lam: np.ndarray) -> "NodeState":
        z = np.atleast_1d(ev.z)
        m = np.atleast_1d(ev.m)
        dm = np.atleast_1d(ev.m_prime)
        d = 1.0 / (1.0 + lam[:, None] * m[None, :])
        dd = -dm[None, :] * lam[:, None] * d * d
        return cls(z=z, m=m, dm=dm, d=d, dd=dd)

    @cached_property
    def d2(self):
        return self.d * self.d

    @cached_property
    def dd2(self):
        return 2.0 * self.d * self.dd


def _as_state(z_eval, ctx: CltContext) -> NodeState:
    if isinstance(z_eval, NodeState):
        return z_eval
    return ctx.nodes(z_eval)


# --- resolvent ------------------------------------------------------------------

def resolvent(z_eval: StieltjesEval, ctx: CltContext, derivative: bool = False):
    """Explicit (I + m RM)^{-1} at a single point (and optionally d/dz of it).

    A near-singular system is re-evaluated with Im z pushed up tenfold.
    """
    m = complex(np.asarray(z_eval.m).reshape(-1)[0])
    dm = complex(np.asarray(z_eval.m_prime).reshape(-1)[0])
    RM = ctx.R @ ctx.M.M
    A = np.eye(ctx.p) + m * RM
    if np.linalg.cond(A) > 1e12:
        z = complex(np.asarray(z_eval.z).reshape(-1)[0])
        z2 = z.real + 1j * (10.0 * z.imag if z.imag != 0 else 1e-6)
        warnings.warn(f"resolvent near-singular at z={z}; shifted to {z2}", RuntimeWarning)
        return resolvent(solve_underline_s(np.array([z2]), ctx.H), ctx, derivative)
    Rz = np.linalg.inv(A)
    if not derivative:
        return Rz
    return Rz, -dm * RM @ Rz @ Rz


# --- differentiated primitives --------------------------------------------------
# Each function returns (value, d/dz value) for the quantities that appear under
# a derivative in the kernels.  Kernels use the derivative parts; the values are
# exposed so finite differences can audit every derivative.

def _colsum_prod(a, b):
    return np.sum(a * b, axis=0)


def prim_mean_diag_rr_rm(ctx, s):
    """F(z) = (1/n) sum_k m (RR R)_kk (R M RR)_kk."""
    C = ctx.C
    al, be = C["IR"] @ s.d, C["RMI"] @ s.d
    dal, dbe = C["IR"] @ s.dd, C["RMI"] @ s.dd
    v = s.m * _colsum_prod(al, be) / ctx.n
    dv = (s.dm * _colsum_prod(al, be) + s.m * (_colsum_prod(dal, be) + _colsum_prod(al, dbe))) / ctx.n
    return v, dv


def prim_mean_diag_mrr_rmm(ctx, s):
    """F(z) = (1/n) sum_k m (M RR R)_kk (R M RR M)_kk."""
    C = ctx.C
    ga, de = C["MR"] @ s.d, C["RMM"] @ s.d
    dga, dde = C["MR"] @ s.dd, C["RMM"] @ s.dd
    v = s.m * _colsum_prod(ga, de) / ctx.n
    dv = (s.dm * _colsum_prod(ga, de) + s.m * (_colsum_prod(dga, de) + _colsum_prod(ga, dde))) / ctx.n
    return v, dv


def _quad(T, s, scale=None):
    Td = T @ s.d
    v = _colsum_prod(s.d, Td)
    dv = _colsum_prod(s.dd, Td) + _colsum_prod(s.d, T @ s.dd)
    return v, dv


def _quad_m(T, s):
    v, dv = _quad(T, s)
    return s.m * v, s.dm * v + s.m * dv


def prim_pair(ctx, s, key):
    """(1/n) sum_kl W_kl X_kl X'_lk for the tensor ``key`` (quadratic in d)."""
    v, dv = _quad(ctx.tensors[key], s)
    return v / ctx.n, dv / ctx.n


def prim_pair_m(ctx, s, key):
    """(1/n) m(z) sum_kl g_kl^2 X_lk X'_kl for the linear-structure tensors."""
    v, dv = _quad_m(ctx.tensors[key], s)
    return v / ctx.n, dv / ctx.n


def prim_diag(ctx, s, key, with_m=False):
    """Vector diag(A RR B) (and derivative) for coefficient ``key``."""
    C = ctx.C[key]
    v, dv = C @ s.d, C @ s.dd
    if with_m:
        return s.m * v, s.dm * v + s.m * dv
    return v, dv


# --- mean kernels -------------------------------------------------------------------

def _lam_moment(ctx, s, arr, power):
    return (ctx.lam ** power) @ arr / ctx.p


def em_term_integral_h(ctx, s):
    """y int (t m')^2 / (m (1 + t m)^3) dH."""
    return ctx.y * s.dm ** 2 / s.m * _lam_moment(ctx, s, s.d2 * s.d, 2)


def em_term_tau(ctx, s):
    """(tau - 2)(1 + z m) int t m' / (1 + t m)^2 dH."""
    return (ctx.tau - 2.0) * (1.0 + s.z * s.m) * s.dm * _lam_moment(ctx, s, s.d2, 1)


def em_term_diag_rr_rm(ctx, s):
    return prim_mean_diag_rr_rm(ctx, s)[1]


def em_term_diag_mrr_rmm(ctx, s):
    return prim_mean_diag_mrr_rmm(ctx, s)[1]


def _trace_diag(ctx, s, key, sq=False, weights=None):
    v = ctx.C[key] @ (s.d2 if sq else s.d)
    w = np.ones(ctx.p) if weights is None else weights
    return w @ v / ctx.n


def em_term_tr_rr(ctx, s, weights=None):
    return _trace_diag(ctx, s, "I", False, weights) / (4.0 * s.z)


def em_term_tr_mrrmi(ctx, s, weights=None):
    return _trace_diag(ctx, s, "MMi", False, weights) / (4.0 * s.z)


def em_term_tr_rr2(ctx, s, weights=None):
    return -_trace_diag(ctx, s, "I", True, weights) / (4.0 * s.z)


def em_term_tr_mrr2mi(ctx, s, weights=None):
    return -_trace_diag(ctx, s, "MMi", True, weights) / (4.0 * s.z)


def em_term_weighted_mrr(ctx, s, c=None):
    c = ctx.c9 if c is None else c
    return -(c @ s.d) / ctx.n / (2.0 * s.z)


def em_term_weighted_mrr2(ctx, s, c=None):
    c = ctx.c9 if c is None else c
    return (c @ s.d2) / ctx.n / (2.0 * s.z)


def em_term_pair_rr(ctx, s, key="RR"):
    return 0.25 * prim_pair(ctx, s, key)[1]


def em_term_pair_rmi_mr(ctx, s, key="RMi_MR"):
    return 0.5 * prim_pair(ctx, s, key)[1]


def em_term_pair_mrmi(ctx, s, key="MRMi2"):
    return 0.25 * prim_pair(ctx, s, key)[1]


ELLIPTICAL_MEAN_TERMS = (
    ("integral_h", em_term_integral_h),
    ("tau", em_term_tau),
    ("diag_rr_rm", em_term_diag_rr_rm),
    ("diag_mrr_rmm", em_term_diag_mrr_rmm),
    ("tr_rr", em_term_tr_rr),
    ("tr_mrrmi", em_term_tr_mrrmi),
    ("tr_rr2", em_term_tr_rr2),
    ("tr_mrr2mi", em_term_tr_mrr2mi),
    ("weighted_mrr", em_term_weighted_mrr),
    ("weighted_mrr2", em_term_weighted_mrr2),
    ("pair_rr", em_term_pair_rr),
    ("pair_rmi_mr", em_term_pair_rmi_mr),
    ("pair_mrmi", em_term_pair_mrmi),
)


def em_elliptical_terms(z_eval, ctx: CltContext) -> dict:
    s = _as_state(z_eval, ctx)
    return {name: f(ctx, s) for name, f in ELLIPTICAL_MEAN_TERMS}


def em_elliptical(z_eval, ctx: CltContext):
    """Mean kernel EM(z) for the elliptical structure."""
    return sum(em_elliptical_terms(z_eval, ctx).values())


def em_term_beta_diag(ctx, s):
    """beta y m m' (1/n) sum_k (G^T M RR G)_kk (G^T M RR^2 G)_kk (legacy).

    The corrected variant drops the factor y: with it the kernel no longer
    reproduces Var tr(Rhat) = 0 at M = I.
    """
    C = ctx.C["GtMG"]
    return ctx.beta * ctx.beta_scale * s.m * s.dm * _colsum_prod(C @ s.d, C @ s.d2) / ctx.n


def em_term_beta_pair_gmr(ctx, s):
    return 0.5 * ctx.beta * prim_pair_m(ctx, s, "GtMR_RG")[1]


def em_term_beta_pair_gmrm(ctx, s):
    return 0.5 * ctx.beta * prim_pair_m(ctx, s, "GtMRM_MRG")[1]


def em_linear_terms(z_eval, ctx: CltContext) -> dict:
    s = _as_state(z_eval, ctx)
    om = ctx.omega
    c = ctx.c9_linear
    return {
        "integral_h": em_term_integral_h(ctx, s),
        "beta_diag": em_term_beta_diag(ctx, s),
        "diag_rm_rr": em_term_diag_rr_rm(ctx, s),
        "diag_rmm_mrr": em_term_diag_mrr_rmm(ctx, s),
        "beta_pair_gmr": em_term_beta_pair_gmr(ctx, s),
        "beta_pair_gmrm": em_term_beta_pair_gmrm(ctx, s),
        "tr_rr": em_term_tr_rr(ctx, s, om),
        "tr_mrrmi": em_term_tr_mrrmi(ctx, s, om),
        "tr_rr2": em_term_tr_rr2(ctx, s, om),
        "tr_mrr2mi": em_term_tr_mrr2mi(ctx, s, om),
        "weighted_mrr": em_term_weighted_mrr(ctx, s, c),
        "weighted_mrr2": em_term_weighted_mrr2(ctx, s, c),
        "pair_rmi_mr": em_term_pair_rmi_mr(ctx, s, "L_RMi_MR"),
        "pair_rr": em_term_pair_rr(ctx, s, "L_RR"),
        "pair_mrmi": em_term_pair_mrmi(ctx, s, "L_MRMi2"),
    }


def em_linear(z_eval, ctx: CltContext):
    """Mean kernel EM(z) for the linear independent-component structure."""
    if not isinstance(ctx.structure, Linear):
        raise ConfigurationError("em_linear needs a Linear structure")
    return sum(em_linear_terms(z_eval, ctx).values())


def em_kernel(z_eval, ctx: CltContext):
    if isinstance(ctx.structure, Linear):
        return em_linear(z_eval, ctx)
    return em_elliptical(z_eval, ctx)


# --- covariance kernels -----------------------------------------------------------

def _outer(a, b):
    return a[:, None] * b[None, :]


def cov_term_universal(s1: NodeState, s2: NodeState):
    """2 { m1' m2' / (m2 - m1)^2 - 1 / (z1 - z2)^2 }."""
    dmm = s2.m[None, :] - s1.m[:, None]
    dz = s1.z[:, None] - s2.z[None, :]
    if np.any(np.abs(dmm) < 1e-10) or np.any(np.abs(dz) < 1e-12):
        raise ContourError("coincident kernel arguments: use non-overlapping contours")
    return 2.0 * (_outer(s1.dm, s2.dm) / dmm ** 2 - 1.0 / dz ** 2)


def _bilinear(u1, W, u2):
    """sum_kl u1[k] W[k, l] u2[l] for all node pairs -> (N1, N2)."""
    if W is None:
        return u1.T @ u2
    return u1.T @ (W @ u2)


def _derivs(ctx, s):
    C = ctx.C
    out = {
        "R": C["I"] @ s.dd,
        "M": C["MMi"] @ s.dd,
        "RR": C["IR"] @ s.dd,
    }
    return out


def _elliptical_cov_terms(ctx, s1, s2, u1, u2):
    nf = 1.0 / ctx.n
    W = ctx.W_r
    C = ctx.C
    va1, va2 = C["RMR"] @ s1.d2, C["RMR"] @ s2.d2
    vb1, vb2 = C["RM"] @ s1.d2, C["RM"] @ s2.d2
    vc1, vc2 = C["MR"] @ s1.d2, C["MR"] @ s2.d2
    f1, f2 = s1.dm[None, :], s2.dm[None, :]
    return {
        "w_mrmi_mrmi": 0.5 * nf * _bilinear(u1["M"], W, u2["M"]),
        "w_rr_rr": 0.5 * nf * _bilinear(u1["R"], W, u2["R"]),
        "w_mrmi_rr": 0.5 * nf * _bilinear(u1["M"], W, u2["R"]),
        "w_rr_mrmi": 0.5 * nf * _bilinear(u1["R"], W.T, u2["M"]),
        "rr2rm_rr2rmr": -nf * _bilinear(f1 * vb1, None, f2 * va2),
        "rr2rmr_rr2rm": -nf * _bilinear(f1 * va1, None, f2 * vb2),
        "mrr2r_rr2rmr": -nf * _bilinear(f1 * vc1, None, f2 * va2),
        "rr2rmr_mrr2r": -nf * _bilinear(f1 * va1, None, f2 * vc2),
    }


def cov_elliptical_terms(z1_eval, z2_eval, ctx: CltContext) -> dict:
    s1, s2 = _as_state(z1_eval, ctx), _as_state(z2_eval, ctx)
    out = {"universal": cov_term_universal(s1, s2)}
    out.update(_elliptical_cov_terms(ctx, s1, s2, _derivs(ctx, s1), _derivs(ctx, s2)))
    return out


def cov_elliptical(z1_eval, z2_eval, ctx: CltContext):
    """Cov(M(z1), M(z2)) for the elliptical structure; (N1, N2) array."""
    return sum(cov_elliptical_terms(z1_eval, z2_eval, ctx).values())


def _linear_derivs(ctx, s):
    out = _derivs(ctx, s)
    out["GM"] = prim_diag(ctx, s, "GtMG", with_m=True)[1]
    out["G"] = prim_diag(ctx, s, "GtG", with_m=True)[1]
    return out


def _structured_cov_terms(ctx1, ctx2, u1, u2):
    """Terms shared by the linear same-matrix kernel and the cross kernel."""
    nf = 1.0 / ctx1.n
    beta = ctx1.beta
    W3, Wg = ctx1.W3, ctx1.W_g
    out = {
        "w3_rr_rr": 0.25 * nf * _bilinear(u1["R"], W3, u2["R"]),
        "w3_mrmi_mrmi": 0.25 * nf * _bilinear(u1["M"], W3, u2["M"]),
        "w3_rr_mrmi": 0.25 * nf * _bilinear(u1["R"], W3, u2["M"]),
        "w3_mrmi_rr": 0.25 * nf * _bilinear(u1["M"], W3.T, u2["R"]),
        "rr_rrr": -nf * _bilinear(u1["R"], None, u2["RR"]),
        "rrr_rr": -nf * _bilinear(u1["RR"], None, u2["R"]),
        "mrmi_rrr": -nf * _bilinear(u1["M"], None, u2["RR"]),
        "rrr_mrmi": -nf * _bilinear(u1["RR"], None, u2["M"]),
    }
    if beta != 0.0:
        # legacy: G^T RR G in the mixed terms; corrected: G^T M RR G
        g1, g2 = (u1["G"], u2["G"]) if ctx1.variant == "legacy" else (u1["GM"], u2["GM"])
        out["beta_gmg"] = beta * ctx1.beta_scale * nf * _bilinear(u1["GM"], None, u2["GM"])
        out["beta_rr_g"] = 0.5 * beta * nf * _bilinear(u1["R"], Wg, g2)
        out["beta_g_rr"] = 0.5 * beta * nf * _bilinear(g1, Wg.T, u2["R"])
        out["beta_mrmi_g"] = 0.5 * beta * nf * _bilinear(u1["M"], Wg, g2)
        out["beta_g_mrmi"] = 0.5 * beta * nf * _bilinear(g1, Wg.T, u2["M"])
    else:
        z = np.zeros((u1["R"].shape[1], u2["R"].shape[1]), dtype=complex)
        for k in ("beta_gmg", "beta_rr_g", "beta_g_rr", "beta_mrmi_g", "beta_g_mrmi"):
            out[k] = z
    return out


def cov_linear_terms(z1_eval, z2_eval, ctx: CltContext) -> dict:
    s1, s2 = _as_state(z1_eval, ctx), _as_state(z2_eval, ctx)
    out = {"universal": cov_term_universal(s1, s2)}
    out.update(_structured_cov_terms(ctx, ctx, _linear_derivs(ctx, s1), _linear_derivs(ctx, s2)))
    return out


def cov_linear(z1_eval, z2_eval, ctx: CltContext):
    """Cov(M(z1), M(z2)) for the linear structure; (N1, N2) array."""
    return sum(cov_linear_terms(z1_eval, z2_eval, ctx).values())


def cross_a(ctx_j: CltContext, ctx_h: CltContext, s1: NodeState, s2: NodeState):
    """a(z1, z2) = m_j m_h (1/n) tr[R M_j RR_j R M_h RR_h] and its derivatives.

    Uses m lam_i d_i = 1 - d_i, so a = (1/n) (1 - d_j)^T K0 (1 - d_h) with
    K0 = (Q_j P_h) o (Q_h P_j)^T.  Returns (a, a_1, a_2, a_12).
    """
    _, Pj, Qj = ctx_j._eig
    _, Ph, Qh = ctx_h._eig
    K0 = (Qj @ Ph) * (Qh @ Pj).T
    nf = 1.0 / ctx_j.n
    e1, e2 = 1.0 - s1.d, 1.0 - s2.d
    K_e2 = K0 @ e2
    K_dd2 = K0 @ s2.dd
    a = nf * (e1.T @ K_e2)
    a1 = -nf * (s1.dd.T @ K_e2)
    a2 = -nf * (e1.T @ K_dd2)
    a12 = nf * (s1.dd.T @ K_dd2)
    return a, a1, a2, a12


def cross_term_log(ctx_j, ctx_h, s1, s2):
    """-2 d^2/dz1 dz2 log(1 - a) = 2 [a_12 (1 - a) + a_1 a_2] / (1 - a)^2."""
    a, a1, a2, a12 = cross_a(ctx_j, ctx_h, s1, s2)
    one = 1.0 - a
    if np.any(np.abs(one) < 1e-10):
        raise ContourError("1 - a(z1, z2) vanishes: separate the contours")
    return 2.0 * (a12 * one + a1 * a2) / one ** 2


def cross_cov_terms(z1_eval, ctx_j: CltContext, z2_eval, ctx_h: CltContext) -> dict:
    if not ctx_j.same_population(ctx_h):
        raise ConfigurationError("cross covariance needs contexts sharing R, G, n and structure")
    s1, s2 = _as_state(z1_eval, ctx_j), _as_state(z2_eval, ctx_h)
    out = {"log_term": cross_term_log(ctx_j, ctx_h, s1, s2)}
    out.update(_structured_cov_terms(ctx_j, ctx_h, _linear_derivs(ctx_j, s1), _linear_derivs(ctx_h, s2)))
    return out


def cross_cov(z1_eval, ctx_j: CltContext, z2_eval, ctx_h: CltContext):
    """Cov(M^j(z1), M^h(z2)) between rescalings M_j and M_h of the same sample."""
    return sum(cross_cov_terms(z1_eval, ctx_j, z2_eval, ctx_h).values())


def cov_kernel(s1, ctx1, s2, ctx2):
    if ctx1 is ctx2:
        if isinstance(ctx1.structure, Linear):
            return cov_linear(s1, s2, ctx1)
        return cov_elliptical(s1, s2, ctx1)
    return cross_cov(s1, ctx1, s2, ctx2)


# --- simplified kernels for R M = I ----------------------------------------------

def identity_em(z_eval, a_R, b_R, y, tau):
    """EM(z) when R M = I, in terms of the summaries a_R, b_R (sum_k r_kk^2 / n = y)."""
    z, m, dm = z_eval.z, z_eval.m, z_eval.m_prime
    return (y * dm ** 2 / (m * (1 + m) ** 3)
            + (tau - 2) * (1 + z * m) * dm / (1 + m) ** 2
            + (z * m + 1) / (2 * z * (1 + m))
            + a_R * dm * (1 - m) / (1 + m) ** 3
            - b_R * m / (2 * z * (1 + m) ** 2)
            - (y + b_R) * dm / (1 + m) ** 3)


def identity_cov(z1_eval, z2_eval, c_R, y):
    """Cov(M(z1), M(z2)) when R M = I; (N1, N2) array."""
    m1, m2 = np.atleast_1d(z1_eval.m), np.atleast_1d(z2_eval.m)
    d1, d2 = np.atleast_1d(z1_eval.m_prime), np.atleast_1d(z2_eval.m_prime)
    z1, z2 = np.atleast_1d(z1_eval.z), np.atleast_1d(z2_eval.z)
    uni = 2.0 * (_outer(d1, d2) / (m2[None, :] - m1[:, None]) ** 2 - 1.0 / (z1[:, None] - z2[None, :]) ** 2)
    extra = 2.0 * (c_R - 2.0 * y) * _outer(d1 / (1 + m1) ** 2, d2 / (1 + m2) ** 2)
    return uni + extra


# --- contour integration ------------------------------------------------------------

TestFunction = Callable[[np.ndarray], np.ndarray]

TEST_FUNCTIONS: dict = {
    "x": lambda x: x,
    "x^2": lambda x: x ** 2,
    "x^3": lambda x: x ** 3,
    "log": np.log,
}


def resolve_test_function(g) -> TestFunction:
    if callable(g):
        return g
    try:
        return TEST_FUNCTIONS[str(g)]
    except KeyError:
        raise ConfigurationError(f"unknown test function {g!r}; choose from {sorted(TEST_FUNCTIONS)}")


@dataclass
class CltMoments:
    means: np.ndarray
    cov: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "cov": self.cov.tolist(),
                "diagnostics": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                for k, v in self.diagnostics.items()}}


def _check_real(val: complex, what: str) -> float:
    re, im = val.real, val.imag
    if abs(im) > 1e-3 * (1 + abs(re)):
        raise PrecisionError(f"{what}: imaginary part {im:.3e} too large (real part {re:.6g})")
    if abs(im) > 1e-6 * (1 + abs(re)):
        warnings.warn(f"{what}: imaginary part {im:.3e} exceeds 1e-6 relative", RuntimeWarning)
    return float(re)


def default_contour(ctx: CltContext, num_nodes: int = 2048, v0: float = 0.5) -> Contour:
    return build_contour(ctx.support, v0=v0, num_nodes=num_nodes)


def clt_mean(g, ctx: CltContext, contour: Contour | None = None, return_imag: bool = False):
    """E X_g = -1/(2 pi i) oint g(z) EM(z) dz."""
    g = resolve_test_function(g)
    C = contour if contour is not None else default_contour(ctx)
    if not C.spec.encloses(ctx.support.a, ctx.support.b):
        raise ContourError("contour does not enclose the support")
    s = ctx.nodes(C.z)
    val = -C.integrate(g(C.z) * em_kernel(s, ctx)) / (2j * np.pi)
    re = _check_real(val, "clt_mean")
    return (re, val.imag) if return_imag else re


def _double_integral(gs1, s1, ctx1, c1: Contour, gs2, s2, ctx2, c2: Contour, block: int = 512):
    """-1/(4 pi^2) sum w1 g1 K w2 g2 for stacks of test functions; returns complex (K1, K2)."""
    A = np.stack([c1.w * g(c1.z) for g in gs1])  # (K1, N1)
    B = np.stack([c2.w * g(c2.z) for g in gs2])  # (K2, N2)
    out = np.zeros((len(gs1), len(gs2)), dtype=complex)
    N1 = c1.z.size
    for lo in range(0, N1, block):
        sl = slice(lo, min(N1, lo + block))
        sub = _slice_state(s1, sl)
        K = cov_kernel(sub, ctx1, s2, ctx2)
        out += A[:, sl] @ K @ B.T
    return -out / (4.0 * np.pi ** 2)


def _slice_state(s: NodeState, sl) -> NodeState:
    return NodeState(z=s.z[sl], m=s.m[sl], dm=s.dm[sl], d=s.d[:, sl], dd=s.dd[:, sl])


def clt_cov(g1, g2, ctx: CltContext, c1: Contour | None = None, c2: Contour | None = None,
            ctx2: CltContext | None = None, return_imag: bool = False, num_nodes: int = 2048):
    """Cov(X_g1, X_g2); with ``ctx2`` the cross covariance between two rescalings."""
    g1, g2 = resolve_test_function(g1), resolve_test_function(g2)
    other = ctx if ctx2 is None else ctx2
    if c1 is None or c2 is None:
        sup = ctx.support if other is ctx else union_support(ctx.support, other.support)
        c1, c2 = build_nested_contours(sup, num_nodes=num_nodes)
    check_nested(c1, c2)
    s1, s2 = ctx.nodes(c1.z), other.nodes(c2.z)
    val = complex(_double_integral([g1], s1, ctx, c1, [g2], s2, other, c2)[0, 0])
    re = _check_real(val, "clt_cov")
    return (re, val.imag) if return_imag else re


def clt_moments(items: Sequence, num_nodes: int = 2048, v0: float = 0.5) -> CltMoments:
    """Joint means and covariance for a list of (g, ctx) pairs.

    Items that share a context use the same-matrix kernels; items on different
    rescalings of the same population use the cross kernel.  One pair of
    nested contours enclosing every support serves all entries.
    """
    gs = [resolve_test_function(g) for g, _ in items]
    ctxs = []
    idx = []
    for _, c in items:
        for j, c0 in enumerate(ctxs):
            if c0 is c:
                idx.append(j)
                break
        else:
            ctxs.append(c)
            idx.append(len(ctxs) - 1)
    sup = union_support(*[c.support for c in ctxs])
    inner, outer = build_nested_contours(sup, v0=v0, num_nodes=num_nodes)
    st_in = [c.nodes(inner.z) for c in ctxs]
    st_out = [c.nodes(outer.z) for c in ctxs]
    K = len(items)
    means = np.zeros(K)
    mean_im = np.zeros(K)
    for a, (g, j) in enumerate(zip(gs, idx)):
        v = -outer.integrate(g(outer.z) * em_kernel(st_out[j], ctxs[j])) / (2j * np.pi)
        means[a] = _check_real(v, f"mean[{a}]")
        mean_im[a] = v.imag
    cov = np.zeros((K, K), dtype=complex)
    for j1 in range(len(ctxs)):
        for j2 in range(len(ctxs)):
            rows = [a for a in range(K) if idx[a] == j1]
            cols = [b for b in range(K) if idx[b] == j2]
            block = _double_integral([gs[a] for a in rows], st_in[j1], ctxs[j1], inner,
                                     [gs[b] for b in cols], st_out[j2], ctxs[j2], outer)
            for ii, a in enumerate(rows):
                for jj, b in enumerate(cols):
                    cov[a, b] = block[ii, jj]
    re = cov.real
    asym = float(np.abs(re - re.T).max()) if K > 1 else 0.0
    for a in range(K):
        for b in range(K):
            _check_real(cov[a, b], f"cov[{a},{b}]")
    re = 0.5 * (re + re.T)
    re = _clamp_psd(re)
    return CltMoments(means=means, cov=re, diagnostics={
        "mean_imag": mean_im, "cov_imag_max": float(np.abs(cov.imag).max()),
        "cov_asymmetry": asym, "num_nodes": num_nodes,
        "inner": inner.spec.__dict__, "outer": outer.spec.__dict__})


def _clamp_psd(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-8 * max(1.0, np.abs(w).max()):
        warnings.warn(f"covariance has negative eigenvalue {w.min():.3e}; clamped", RuntimeWarning)
    if w.min() < 0:
        w = np.maximum(w, 0.0)
        C = (V * w) @ V.T
    return C


# --- closed forms for R M = I ---------------------------------------------------------

def identity_case_moments(a_R: float, b_R: float, c_R: float, y: float, tau: float) -> CltMoments:
    """Limit moments of (W(x), W(x^2)) when R M = I.

    E X_{x^2} is obtained from the residue calculus of the unit-circle
    representation; it agrees with the general contour kernels for every
    correlation matrix R.  A frequently used shorter form differs from it by
    (y - 1)^2 (1 - b_R / y), which vanishes only for R = I or y = 1.
    """
    m1 = 1.5 * y - a_R + 0.5 * b_R
    m2 = 2.5 * y ** 2 + (tau + 3.0 - 2.0 * a_R + 1.5 * b_R) * y - 4.0 * a_R + 2.0 * b_R
    v1 = 2.0 * c_R - 2.0 * y
    v2 = 4.0 * y ** 2 + 8.0 * (1.0 + y) ** 2 * (c_R - y)
    c12 = 4.0 * (1.0 + y) * (c_R - y)
    return CltMoments(means=np.array([m1, m2]), cov=np.array([[v1, c12], [c12, v2]]),
                      diagnostics={"path": "closed-form"})


# --- unit-circle representation for R M = I ------------------------------------------

def _circle_radius(y: float) -> float:
    """Radius for the deformed unit circle.

    All poles of the integrands sit at 0, +-1 and -sqrt(y); g(G(xi)) is
    analytic in 1 <= |xi| < max(sqrt(y), 1/sqrt(y)) for g analytic near the
    support.  Halfway to that bound keeps the trapezoidal rule geometric.
    """
    if abs(y - 1.0) < 1e-3:
        raise ConfigurationError("unit-circle path needs y away from 1")
    rstar = max(np.sqrt(y), 1.0 / np.sqrt(y))
    return 1.0 + 0.5 * (min(rstar, 2.0) - 1.0)


def g_of_xi(g, xi, y):
    """g(|1 + sqrt(y) xi|^2) continued off the circle as g(1 + y + sqrt(y)(xi + 1/xi))."""
    return g(1.0 + y + np.sqrt(y) * (xi + 1.0 / xi))


def _circle(rho, N):
    th = 2.0 * np.pi * np.arange(N) / N
    xi = rho * np.exp(1j * th)
    # (1 / 2 pi i) oint f dxi ~ (1/N) sum f(xi) xi
    return xi, xi / N


def unit_circle_primitives(g, y: float, num_nodes: int = 4096) -> np.ndarray:
    """(mu1, ..., mu5) by trapezoidal quadrature on a deformed circle.

    mu1 = lim (1/2 pi i) oint g (xi/(xi^2 - r^-2) - 1/xi),  mu2 = oint g/xi^3,
    mu3 = oint g/xi^2,  mu4 = oint g/xi,  mu5 = oint g/(xi + sqrt(y)), each
    with the 1/(2 pi i) factor.
    """
    g = resolve_test_function(g)
    xi, w = _circle(_circle_radius(y), num_nodes)
    f = g_of_xi(g, xi, y)
    sy = np.sqrt(y)
    mus = [
        xi / (xi ** 2 - 1.0) - 1.0 / xi,
        xi ** -3, xi ** -2, xi ** -1,
        1.0 / (xi + sy),
    ]
    return np.array([np.sum(w * f * k) for k in mus]).real


def mean_from_primitives(mu, a_R, b_R, y, tau) -> float:
    """Combine (mu1..mu5) into E X_g for R M = I (sum_k r_kk^2 / n = y)."""
    mu1, mu2, mu3, mu4, mu5 = mu
    sy = np.sqrt(y)
    J = (y - 1) / (y * sy) * mu4 + mu3 / y - mu2 / sy + (1 - y) / (y * sy) * mu5
    return float(mu1 + (tau - 2) * mu2 + 0.5 * sy * J
                 - a_R * (2 * mu2 + sy * mu3) / y
                 - b_R * J / (2 * sy)
                 + (y + b_R) * (mu2 + sy * mu3) / y)


def unit_circle_mean(g, a_R, b_R, y, tau, num_nodes: int = 4096) -> float:
    return mean_from_primitives(unit_circle_primitives(g, y, num_nodes), a_R, b_R, y, tau)


def unit_circle_cov(g1, g2, c_R, y, num_nodes: int = 2048, block: int = 256) -> float:
    """Cov(X_g1, X_g2) for R M = I from the double circle integral.

    The r -> 1+ limit is taken by placing xi_1 inside xi_2 (radii rho_1 < rho_2)
    and setting r = 1.
    """
    g1, g2 = resolve_test_function(g1), resolve_test_function(g2)
    rho2 = _circle_radius(y)
    rho1 = 0.5 * (1.0 + rho2)
    x1, w1 = _circle(rho1, num_nodes)
    x2, w2 = _circle(rho2, num_nodes)
    f1, f2 = w1 * g_of_xi(g1, x1, y), w2 * g_of_xi(g2, x2, y)
    acc = 0.0 + 0.0j
    for lo in range(0, num_nodes, block):
        sl = slice(lo, lo + block)
        acc += f1[sl] @ ((1.0 / (x1[sl, None] - x2[None, :]) ** 2) @ f2)
    # the weights carry 1/(2 pi i) each and -(2 pi i)^2 / (2 pi^2) = 2
    first = 2.0 * acc
    second = 2.0 * (c_R - 2.0 * y) / y * np.sum(f1 / x1 ** 2) * np.sum(f2 / x2 ** 2)
    return _check_real(first + second, "unit_circle_cov")


# closed forms for polynomial test functions

def laurent_coefficients(coeffs, y: float) -> tuple[np.ndarray, int]:
    """Laurent coefficients of g(G(xi)) for g(x) = sum_k coeffs[k] x^k.

    Returns (c, K) with c[K + j] the coefficient of xi^j.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    K = len(coeffs) - 1
    sy = np.sqrt(y)
    base = np.array([sy, 1.0 + y, sy])
    out = np.zeros(2 * K + 1)
    power = np.array([1.0])
    for k, ck in enumerate(coeffs):
        if k > 0:
            power = np.convolve(power, base)
        off = K - k
        out[off:off + power.size] += ck * power
    return out, K


def primitives_closed_form(coeffs, y: float) -> np.ndarray:
    """(mu1..mu5) from residues for a polynomial g."""
    c, K = laurent_coefficients(coeffs, y)
    coef = lambda j: c[K + j] if -K <= j <= K else 0.0
    g = np.polynomial.polynomial.Polynomial(coeffs)
    sy = np.sqrt(y)
    G = lambda xi: 1.0 + y + sy * (xi + 1.0 / xi)
    mu1 = 0.5 * (g(G(1.0)) + g(G(-1.0))) - coef(0) - sum(coef(-2 - 2 * j) for j in range(K))
    mu5 = sum(coef(-k) * (-1) ** (k - 1) * y ** (-k / 2) for k in range(1, K + 1))
    if y < 1:
        mu5 += g(G(-sy))
    return np.array([mu1, coef(2), coef(1), coef(0), mu5])


def poly_unit_circle_cov(coeffs1, coeffs2, c_R: float, y: float) -> float:
    """2 sum_{k>=1} k a_{-k} b_k + 2 (c_R - 2y)/y a_1 b_1."""
    a, Ka = laurent_coefficients(coeffs1, y)
    b, Kb = laurent_coefficients(coeffs2, y)
    K = min(Ka, Kb)
    s = sum(k * a[Ka - k] * b[Kb + k] for k in range(1, K + 1))
    a1 = a[Ka + 1] if Ka >= 1 else 0.0
    b1 = b[Kb + 1] if Kb >= 1 else 0.0
    return float(2.0 * s + 2.0 * (c_R - 2.0 * y) / y * a1 * b1)
