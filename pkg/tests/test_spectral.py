import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrspec.errors import ConfigurationError
from corrspec.spectral import (SpectralMeasure, centering_integral, esd_measure, lsd_cdf, lsd_density,
                               lsd_integral, lsd_moment, mp_companion, mp_moment, solve_underline_s,
                               support_interval)


def mp_density(x, y):
    a, b = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2
    return np.sqrt(np.maximum((b - x) * (x - a), 0)) / (2 * np.pi * y * x)


@given(st.floats(-1, 4), st.sampled_from([0.01, 0.1, 1.0]), st.sampled_from([0.2, 0.5, 0.8, 1.5, 3.0]))
def test_solver_matches_quadratic(x, v, y):
    z = x + 1j * v
    H = SpectralMeasure.point(1.0, y)
    m = solve_underline_s(np.array([z]), H).m[0]
    assert abs(m - mp_companion(z, y)) < 1e-9 * max(1, abs(m))


def test_solver_branch_symmetry_and_derivative():
    H = SpectralMeasure(np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.5, 0.3]), 0.4)
    z = np.array([0.3 + 0.2j, 1.5 + 0.01j, 5 - 1j, -0.5 + 0.3j])
    ev = solve_underline_s(z, H)
    assert np.all(np.sign(ev.m.imag) == np.sign(z.imag))
    assert np.allclose(solve_underline_s(np.conj(z), H).m, np.conj(ev.m), atol=1e-14)
    h = 1e-6
    fd = (solve_underline_s(z + h, H).m - solve_underline_s(z - h, H).m) / (2 * h)
    assert np.allclose(fd, ev.m_prime, rtol=1e-6)
    # the relation between s and the companion transform
    assert np.allclose(ev.m, -(1 - H.y) / z + H.y * ev.s, atol=1e-13)


def test_warm_start_gives_same_root():
    H = SpectralMeasure(np.array([1.0, 3.0]), np.array([0.5, 0.5]), 0.3)
    z = np.linspace(0.5, 6, 50) + 0.05j
    cold = solve_underline_s(z, H).m
    warm = solve_underline_s(z, H, m0=solve_underline_s(z + 0.01j, H).m).m
    assert np.allclose(cold, warm, atol=1e-12)


@pytest.mark.parametrize("y", [0.1, 0.5, 0.8, 2.0, 4.0])
def test_mp_support_and_atom(y):
    sup = support_interval(SpectralMeasure.point(1.0, y))
    assert abs(sup.a - (1 - np.sqrt(y)) ** 2) < 1e-9
    assert abs(sup.b - (1 + np.sqrt(y)) ** 2) < 1e-9
    assert abs(sup.atom_at_zero - max(0.0, 1 - 1 / y)) < 1e-15


@pytest.mark.parametrize("y", [0.25, 0.7, 2.5])
def test_mp_density_closed_form(y):
    H = SpectralMeasure.point(1.0, y)
    sup = support_interval(H)
    x = np.linspace(sup.a, sup.b, 41)[1:-1]
    assert np.allclose(lsd_density(x, H, sup), mp_density(x, y), rtol=1e-6, atol=1e-9)
    assert abs(lsd_integral(lambda t: np.ones_like(t), H) - (1 - sup.atom_at_zero)) < 1e-8
    F = lsd_cdf(np.array([-1.0, 0.0, sup.b + 1]), H, sup)
    assert F[0] == 0 and abs(F[1] - sup.atom_at_zero) < 1e-12 and abs(F[2] - 1) < 1e-8


@pytest.mark.parametrize("k,y", [(1, 0.3), (2, 0.3), (3, 0.3), (4, 1.7)])
def test_mp_moments(k, y):
    # Narayana-polynomial moments against the quadrature
    assert abs(lsd_integral(lambda t: t ** k, SpectralMeasure.point(1.0, y)) - mp_moment(k, y)) < 1e-8
    assert mp_moment(2, y) == pytest.approx(1 + y)
    assert mp_moment(3, y) == pytest.approx(1 + 3 * y + y * y)


def test_two_atom_moments():
    H = SpectralMeasure(np.array([0.8, 1.3]), np.array([0.6, 0.4]), 0.2)
    for k in (1, 2):
        assert abs(lsd_integral(lambda t: t ** k, H) - lsd_moment(k, H)) < 1e-8
    assert lsd_moment(2, H) == pytest.approx(H.moment(2) + 0.2 * H.moment(1) ** 2)
    with pytest.raises(ConfigurationError):
        lsd_moment(3, H)


def test_centering_identities():
    p, n = 200, 401
    H = esd_measure(np.eye(p), None, p / (n - 1))
    y = p / (n - 1)
    assert abs(centering_integral(lambda x: x, p, n, H) - p) < 1e-6 * p
    assert abs(centering_integral(lambda x: x ** 2, p, n, H) - p * (1 + y)) < 1e-6 * p
    # with p > n the atom at zero pairs with the full spectrum
    p, n = 60, 31
    H = esd_measure(np.eye(p), None, p / (n - 1))
    assert abs(centering_integral(lambda x: x + 1, p, n, H) - 2 * p) < 1e-6 * p
    assert abs(centering_integral(lambda x: x + 1, p, n, H, include_atom=False)
               - p * (1 + 1 / (p / (n - 1)))) < 1e-6 * p


def test_measure_validation():
    with pytest.raises(ConfigurationError):
        SpectralMeasure(np.array([1.0, -1.0]), np.array([0.5, 0.5]), 0.5)
    with pytest.raises(ConfigurationError):
        SpectralMeasure(np.array([1.0]), np.array([0.9]), 0.5)
    m = SpectralMeasure.from_eigenvalues([1.0, 1.0 + 1e-13, 2.0], 0.5)
    assert m.atoms.size == 2 and np.allclose(m.weights, [2 / 3, 1 / 3])
