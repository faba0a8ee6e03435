"""Kernel terms against direct matrix evaluations (explicit inverses, finite differences)."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrspec.clt import (CltContext, Elliptical, Linear, clt_moments, cov_elliptical_terms,
                          cov_linear_terms, cov_term_universal, cross_cov_terms, cross_term_log,
                          em_elliptical, em_elliptical_terms, em_linear_terms, identity_cov,
                          identity_em, resolvent)
from corrspec.correlation import RescaledSpec, population_summaries
from corrspec.errors import ConfigurationError
from corrspec.spectral import solve_underline_s

from conftest import ar1, random_corr, random_spd

P, N = 7, 12.0
Z = np.array([1.3 + 0.4j, 0.2 + 0.9j, 3.1 - 0.5j])


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(1)
    R = random_corr(P, rng)
    M = random_spd(P, rng)
    Mh = random_spd(P, rng, shift=0.5)
    G = np.linalg.cholesky(R) @ np.linalg.qr(rng.standard_normal((P, P)))[0]
    return R, M, Mh, G


class Direct:
    """Explicit-matrix versions of the kernel ingredients."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.R, self.M, self.G = ctx.R, ctx.M.M, ctx.G
        self.Mi = np.linalg.inv(self.M)
        self.RM = self.R @ self.M
        self.I = np.eye(ctx.p)

    def res(self, m):
        return np.linalg.inv(self.I + m * self.RM)

    def m_at(self, z):
        return solve_underline_s(np.array([z]), self.ctx.H).m[0]

    def dz(self, f, z, h=1e-6):
        return (f(self.m_at(z + h)) - f(self.m_at(z - h))) / (2 * h)


def elliptical_mean_direct(ctx, z):
    D = Direct(ctx)
    R, M, Mi, RM, n, y = D.R, D.M, D.Mi, D.RM, ctx.n, ctx.y
    tail = M if ctx.variant == "legacy" else Mi
    ev = solve_underline_s(np.array([z]), ctx.H)
    m, dm = ev.m[0], ev.m_prime[0]
    lam = np.linalg.eigvals(RM).real
    r = D.res(m)
    r2 = r @ r
    W = R ** 2
    return {
        "integral_h": y * np.mean(lam ** 2 * dm ** 2 / (1 + lam * m) ** 3) / m,
        "tau": (ctx.tau - 2) * (1 + z * m) * dm * np.mean(lam / (1 + lam * m) ** 2),
        "diag_rr_rm": D.dz(lambda m: m * np.sum(np.diag(D.res(m) @ R) * np.diag(RM @ D.res(m))) / n, z),
        "diag_mrr_rmm": D.dz(lambda m: m * np.sum(np.diag(M @ D.res(m) @ R)
                                                  * np.diag(RM @ D.res(m) @ tail)) / n, z),
        "tr_rr": np.trace(r) / (4 * z * n),
        "tr_mrrmi": np.trace(M @ r @ Mi) / (4 * z * n),
        "tr_rr2": -np.trace(r2) / (4 * z * n),
        "tr_mrr2mi": -np.trace(M @ r2 @ Mi) / (4 * z * n),
        "weighted_mrr": -np.sum(W * Mi.T * (M @ r)) / (2 * z * n),
        "weighted_mrr2": np.sum(W * Mi.T * (M @ r2)) / (2 * z * n),
        "pair_rr": D.dz(lambda m: np.sum(W * D.res(m) * D.res(m).T), z) / (4 * n),
        "pair_rmi_mr": D.dz(lambda m: np.sum(W * (D.res(m) @ Mi) * (M @ D.res(m)).T), z) / (2 * n),
        "pair_mrmi": D.dz(lambda m: np.sum(W * (M @ D.res(m) @ Mi) * (M @ D.res(m) @ Mi).T), z) / (4 * n),
    }


def linear_mean_direct(ctx, z):
    D = Direct(ctx)
    R, M, Mi, RM, G, n, y = D.R, D.M, D.Mi, D.RM, D.G, ctx.n, ctx.y
    beta = ctx.beta
    legacy = ctx.variant == "legacy"
    tail = M if legacy else Mi
    ev = solve_underline_s(np.array([z]), ctx.H)
    m, dm = ev.m[0], ev.m_prime[0]
    lam = np.linalg.eigvals(RM).real
    r = D.res(m)
    r2 = r @ r
    Wg = G ** 2
    W2 = R ** 2 + beta / 2 * Wg @ Wg.T
    om = beta / 2 * np.sum(G ** 4, 1) + 1
    return {
        "integral_h": y * np.mean(lam ** 2 * dm ** 2 / (1 + lam * m) ** 3) / m,
        "beta_diag": beta * (y if legacy else 1.0) * m * dm
        * np.sum(np.diag(G.T @ M @ r @ G) * np.diag(G.T @ M @ r2 @ G)) / n,
        "diag_rm_rr": D.dz(lambda m: m * np.sum(np.diag(D.res(m) @ R) * np.diag(RM @ D.res(m))) / n, z),
        "diag_rmm_mrr": D.dz(lambda m: m * np.sum(np.diag(M @ D.res(m) @ R)
                                                  * np.diag(RM @ D.res(m) @ tail)) / n, z),
        "beta_pair_gmr": beta / 2 / n * D.dz(
            lambda m: m * np.sum(Wg * (G.T @ M @ D.res(m)).T * (D.res(m) @ G)), z),
        "beta_pair_gmrm": beta / 2 / n * D.dz(
            lambda m: m * np.sum(Wg * (G.T @ M @ D.res(m) @ tail).T * (M @ D.res(m) @ G)), z),
        "tr_rr": np.sum(om * np.diag(r)) / (4 * z * n),
        "tr_mrrmi": np.sum(om * np.diag(M @ r @ Mi)) / (4 * z * n),
        "tr_rr2": -np.sum(om * np.diag(r2)) / (4 * z * n),
        "tr_mrr2mi": -np.sum(om * np.diag(M @ r2 @ Mi)) / (4 * z * n),
        "weighted_mrr": -np.sum(W2 * Mi.T * (M @ r)) / (2 * z * n),
        "weighted_mrr2": np.sum(W2 * Mi.T * (M @ r2)) / (2 * z * n),
        "pair_rmi_mr": D.dz(lambda m: np.sum(W2 * (D.res(m) @ Mi) * (M @ D.res(m)).T), z) / (2 * n),
        "pair_rr": D.dz(lambda m: np.sum(W2 * D.res(m) * D.res(m).T), z) / (4 * n),
        "pair_mrmi": D.dz(lambda m: np.sum(W2 * (M @ D.res(m) @ Mi) * (M @ D.res(m) @ Mi).T), z) / (4 * n),
    }


def _close(terms, direct, k, tol=1e-6):
    bad = {t: (terms[t][k], v) for t, v in direct.items()
           if abs(terms[t][k] - v) > tol * max(1.0, abs(v))}
    assert not bad, bad


@pytest.mark.parametrize("variant", ["corrected", "legacy"])
@pytest.mark.parametrize("tau", [0.0, 2.0, 4.5])
def test_elliptical_mean_terms(setup, variant, tau):
    R, M, _, _ = setup
    ctx = CltContext(R, M=M, n=N, structure=Elliptical(tau), variant=variant)
    terms = em_elliptical_terms(solve_underline_s(Z, ctx.H), ctx)
    assert len(terms) == 13
    for k, z in enumerate(Z):
        _close(terms, elliptical_mean_direct(ctx, z), k)


@pytest.mark.parametrize("variant", ["corrected", "legacy"])
def test_linear_mean_terms(setup, variant):
    R, M, _, G = setup
    ctx = CltContext(R, M=M, G=G, n=N, structure=Linear(1.7), variant=variant)
    terms = em_linear_terms(solve_underline_s(Z, ctx.H), ctx)
    assert len(terms) == 15
    for k, z in enumerate(Z):
        _close(terms, linear_mean_direct(ctx, z), k)


def structured_cov_direct(ctx_j, ctx_h, z1, z2):
    """Cross covariance terms between rescalings M_j and M_h, by explicit matrices."""
    Dj, Dh = Direct(ctx_j), Direct(ctx_h)
    R, G, n, y, beta = ctx_j.R, ctx_j.G, ctx_j.n, ctx_j.y, ctx_j.beta
    legacy = ctx_j.variant == "legacy"
    Wg = G ** 2
    W3 = beta * Wg @ Wg.T + 2 * R ** 2

    def us(D, z):
        Mx, Mxi = D.M, D.Mi
        return {
            "R": D.dz(lambda m: np.diag(D.res(m)), z),
            "M": D.dz(lambda m: np.diag(Mx @ D.res(m) @ Mxi), z),
            "RR": D.dz(lambda m: np.diag(D.res(m) @ R), z),
            "G": D.dz(lambda m: m * np.diag(G.T @ D.res(m) @ G), z),
            "GM": D.dz(lambda m: m * np.diag(G.T @ Mx @ D.res(m) @ G), z),
        }

    u1, u2 = us(Dj, z1), us(Dh, z2)
    g1, g2 = (u1["G"], u2["G"]) if legacy else (u1["GM"], u2["GM"])

    def a_val(a, b):
        m1, m2 = Dj.m_at(a), Dh.m_at(b)
        return m1 * m2 / n * np.trace(R @ Dj.M @ Dj.res(m1) @ R @ Dh.M @ Dh.res(m2))

    h = 1e-4
    L = lambda a, b: np.log(1 - a_val(a, b))
    d12 = (L(z1 + h, z2 + h) - L(z1 + h, z2 - h) - L(z1 - h, z2 + h) + L(z1 - h, z2 - h)) / (4 * h * h)
    return {
        "log_term": -2 * d12,
        "beta_gmg": beta * (y if legacy else 1.0) / n * u1["GM"] @ u2["GM"],
        "w3_rr_rr": u1["R"] @ W3 @ u2["R"] / (4 * n),
        "w3_mrmi_mrmi": u1["M"] @ W3 @ u2["M"] / (4 * n),
        "w3_rr_mrmi": u1["R"] @ W3 @ u2["M"] / (4 * n),
        "w3_mrmi_rr": u1["M"] @ W3.T @ u2["R"] / (4 * n),
        "rr_rrr": -u1["R"] @ u2["RR"] / n,
        "rrr_rr": -u1["RR"] @ u2["R"] / n,
        "beta_rr_g": beta / (2 * n) * u1["R"] @ Wg @ g2,
        "beta_g_rr": beta / (2 * n) * g1 @ Wg.T @ u2["R"],
        "mrmi_rrr": -u1["M"] @ u2["RR"] / n,
        "rrr_mrmi": -u1["RR"] @ u2["M"] / n,
        "beta_mrmi_g": beta / (2 * n) * u1["M"] @ Wg @ g2,
        "beta_g_mrmi": beta / (2 * n) * g1 @ Wg.T @ u2["M"],
    }


Z1 = np.array([1.3 + 0.4j, 0.5 - 0.7j])
Z2 = np.array([2.0 + 1.1j, 0.9 + 0.3j, 1.0 - 1.0j])


@pytest.mark.parametrize("variant", ["corrected", "legacy"])
def test_cross_cov_terms(setup, variant):
    R, M, Mh, G = setup
    cj = CltContext(R, M=M, G=G, n=N, structure=Linear(1.7), variant=variant)
    ch = CltContext(R, M=Mh, G=G, n=N, structure=Linear(1.7), variant=variant)
    T = cross_cov_terms(solve_underline_s(Z1, cj.H), cj, solve_underline_s(Z2, ch.H), ch)
    assert len(T) == 14
    for a, z1 in enumerate(Z1):
        for b, z2 in enumerate(Z2):
            o = structured_cov_direct(cj, ch, z1, z2)
            bad = {t: (T[t][a, b], v) for t, v in o.items() if abs(T[t][a, b] - v) > 1e-5 * max(1, abs(v))}
            assert not bad, bad


def test_linear_same_matrix_terms(setup):
    R, M, _, G = setup
    ctx = CltContext(R, M=M, G=G, n=N, structure=Linear(2.2))
    T = cov_linear_terms(solve_underline_s(Z1, ctx.H), solve_underline_s(Z2, ctx.H), ctx)
    for a, z1 in enumerate(Z1):
        for b, z2 in enumerate(Z2):
            o = structured_cov_direct(ctx, ctx, z1, z2)
            uni = o.pop("log_term")
            assert abs(T["universal"][a, b] - uni) < 1e-5 * max(1, abs(uni))
            for t, v in o.items():
                assert abs(T[t][a, b] - v) < 1e-5 * max(1, abs(v)), t


def test_elliptical_cov_terms(setup):
    R, M, _, _ = setup
    ctx = CltContext(R, M=M, n=N, structure=Elliptical(3.0))
    D = Direct(ctx)
    e1, e2 = solve_underline_s(Z1, ctx.H), solve_underline_s(Z2, ctx.H)
    T = cov_elliptical_terms(e1, e2, ctx)
    assert len(T) == 9
    W, n, Mi, RM = R ** 2, N, D.Mi, D.RM
    for a, z1 in enumerate(Z1):
        for b, z2 in enumerate(Z2):
            u = {}
            for tag, z in (("1", z1), ("2", z2)):
                u["R" + tag] = D.dz(lambda m: np.diag(D.res(m)), z)
                u["M" + tag] = D.dz(lambda m: np.diag(M @ D.res(m) @ Mi), z)
            m1, dm1, m2, dm2 = e1.m[a], e1.m_prime[a], e2.m[b], e2.m_prime[b]
            r1, r2 = D.res(m1), D.res(m2)
            q1, q2 = r1 @ r1, r2 @ r2
            va1, va2 = np.diag(q1 @ RM @ R), np.diag(q2 @ RM @ R)
            vb1, vb2 = np.diag(q1 @ RM), np.diag(q2 @ RM)
            vc1, vc2 = np.diag(M @ q1 @ R), np.diag(M @ q2 @ R)
            o = {
                "universal": 2 * (dm1 * dm2 / (m2 - m1) ** 2 - 1 / (z1 - z2) ** 2),
                "w_mrmi_mrmi": u["M1"] @ W @ u["M2"] / (2 * n),
                "w_rr_rr": u["R1"] @ W @ u["R2"] / (2 * n),
                "w_mrmi_rr": u["M1"] @ W @ u["R2"] / (2 * n),
                "w_rr_mrmi": u["R1"] @ W.T @ u["M2"] / (2 * n),
                "rr2rm_rr2rmr": -dm1 * dm2 * vb1 @ va2 / n,
                "rr2rmr_rr2rm": -dm1 * dm2 * va1 @ vb2 / n,
                "mrr2r_rr2rmr": -dm1 * dm2 * vc1 @ va2 / n,
                "rr2rmr_mrr2r": -dm1 * dm2 * va1 @ vc2 / n,
            }
            for t, v in o.items():
                assert abs(T[t][a, b] - v) < 1e-6 * max(1, abs(v)), t


def test_universal_equals_log_term(setup):
    R, M, _, _ = setup
    ctx = CltContext(R, M=M, n=N)
    s1, s2 = ctx.nodes(Z1), ctx.nodes(Z2)
    assert np.abs(cov_term_universal(s1, s2) - cross_term_log(ctx, ctx, s1, s2)).max() < 1e-12


@given(st.integers(2, 6), st.integers(0, 10 ** 6))
def test_tensor_contraction(p, seed):
    rng = np.random.default_rng(seed)
    ctx = CltContext(np.eye(p), n=10.0)
    W, A, B, C, D = (rng.standard_normal((p, p)) for _ in range(5))
    ref = np.einsum("kl,ki,il,lj,jk->ij", W, A, B, C, D)
    assert np.allclose(ctx.tensor(W, A, B, C, D, block=3), ref, atol=1e-10)


def test_resolvent_matches_eigenbasis(setup):
    R, M, _, _ = setup
    ctx = CltContext(R, M=M, n=N)
    ev = solve_underline_s(np.array([0.7 + 0.3j]), ctx.H)
    Rz, dRz = resolvent(ev, ctx, derivative=True)
    s = ctx.nodes(ev)
    _, P, Q = ctx._eig
    assert np.allclose(Rz, P @ np.diag(s.d[:, 0]) @ Q, atol=1e-12)
    assert np.allclose(dRz, P @ np.diag(s.dd[:, 0]) @ Q, atol=1e-12)


@pytest.mark.parametrize("variant", ["corrected", "legacy"])
def test_identity_case_kernels(variant):
    # R M = I: the general kernels collapse to the summaries (a_R, b_R, c_R)
    p, n = 12, 30.0
    R = ar1(p, 0.4)
    ctx = CltContext(R, M=RescaledSpec.inverse_of(R), n=n, structure=Elliptical(3.0), variant=variant)
    a, b, c = population_summaries(R, n, variant=variant)
    ev = solve_underline_s(Z, ctx.H)
    assert np.allclose(em_elliptical(ev, ctx), identity_em(ev, a, b, ctx.y, 3.0), atol=1e-11)
    e1, e2 = solve_underline_s(Z1, ctx.H), solve_underline_s(Z2, ctx.H)
    full = sum(cov_elliptical_terms(e1, e2, ctx).values())
    assert np.allclose(full, identity_cov(e1, e2, c, ctx.y), atol=1e-11)


def _diag_M_moments(structure, variant, p=10, n=25.0):
    R = ar1(p, 0.5)
    M = np.diag(np.linspace(0.5, 2.0, p))
    ctx = CltContext(R, M=M, n=n, structure=structure, variant=variant)
    return clt_moments([("x", ctx)], num_nodes=1024)


@pytest.mark.parametrize("structure", [Elliptical(4.0), Linear(3.0)])
def test_trace_is_deterministic_for_diagonal_M(structure):
    # tr(Rhat M) = sum_k M_kk exactly, so X_x has mean 0 and variance 0
    mom = _diag_M_moments(structure, "corrected")
    assert abs(mom.means[0]) < 1e-9
    assert abs(mom.cov[0, 0]) < 1e-9


def test_legacy_kernels_break_the_trace_identity():
    mom = _diag_M_moments(Elliptical(2.0), "legacy")
    assert abs(mom.means[0]) > 1e-3


@pytest.mark.parametrize("structure", [Elliptical(2.0), Linear(3.0)])
def test_scale_equivariance(structure):
    # LSS_x(Rhat cM) = c LSS_x(Rhat M): mean scales by c, variance by c^2
    p, n, c = 8, 20.0, 2.5
    R = ar1(p, 0.4)
    M = ar1(p, 0.2) + 0.3 * np.eye(p)
    out = []
    for scale in (1.0, c):
        ctx = CltContext(R, M=scale * M, n=n, structure=structure)
        out.append(clt_moments([("x", ctx), ("x^2", ctx)], num_nodes=1024))
    assert np.allclose(out[1].means, [c * out[0].means[0], c * c * out[0].means[1]], rtol=1e-8, atol=1e-10)
    assert np.allclose(out[1].cov[0, 0], c * c * out[0].cov[0, 0], rtol=1e-8)
    assert np.allclose(out[1].cov[1, 1], c ** 4 * out[0].cov[1, 1], rtol=1e-8)


def test_context_validation(setup):
    R, M, _, G = setup
    with pytest.raises(ConfigurationError):
        CltContext(R, n=0)
    with pytest.raises(ConfigurationError):
        CltContext(R, G=np.eye(P), n=N)
    with pytest.raises(ConfigurationError):
        CltContext(R, n=N, variant="other")
    cj = CltContext(R, M=M, n=N)
    ch = CltContext(R, M=M, n=N + 1)
    with pytest.raises(ConfigurationError):
        cross_cov_terms(Z1, cj, Z2, ch)
