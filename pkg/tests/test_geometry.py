import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from fsidelay.errors import InadmissibleProfileError
from fsidelay.geometry import (
    PlateProfile,
    TorusGrid,
    cofactor,
    domain_map,
    map_jacobian,
    piola_transform,
    project_mean_zero,
)

L = 2.0
TOR = TorusGrid(2, L, 16)
K = 2 * np.pi / L


def cos_profile(a, k=1):
    x = TOR.axes()[0]
    return PlateProfile(TOR, a * np.cos(k * K * x))


def test_torus_nodes_and_validation():
    assert TOR.shape == (32,)
    with pytest.raises(ValueError):
        TorusGrid(2, 1.0, 5)
    with pytest.raises(ValueError):
        TorusGrid(4, 1.0, 8)


def test_domain_map_hand_values():
    e1, e2 = cos_profile(0.2), cos_profile(-0.1)
    y = np.array([[0.0, 0.6], [L / 2, 0.4], [L / 4, 1.0]])
    x = domain_map(e1, e2, y)
    # eta1 = 0.2 cos, eta2 = -0.1 cos: at x = 0 and L/2 the cosine is +1 and -1, at L/4 zero
    expected = np.array([[0.0, 0.6 * 0.9 / 1.2], [L / 2, 0.4 * 1.1 / 0.8], [L / 4, 1.0]])
    np.testing.assert_allclose(x, expected, atol=1e-13)


def test_jacobian_matches_finite_differences():
    e1, e2 = cos_profile(0.2), cos_profile(0.15, 2)
    y = np.array([[0.3, 0.5]])
    J, det = map_jacobian(e1, e2, y)
    h = 1e-6
    fd = np.zeros((2, 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = h
        fd[:, j] = (domain_map(e1, e2, y + d)[0] - domain_map(e1, e2, y - d)[0]) / (2 * h)
    np.testing.assert_allclose(J[0], fd, atol=1e-8)
    assert det[0] == pytest.approx(np.linalg.det(fd), abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0, 1), st.floats(0, 1))
def test_round_trip_and_determinant(a1, a2, s, t):
    e1, e2 = cos_profile(a1), cos_profile(a2, 2)
    xh = t * L
    top = 1 + e1.evaluate(np.array([[xh]]))[0]
    y = np.array([[xh, s * top]])
    back = domain_map(e2, e1, domain_map(e1, e2, y))
    assert np.max(np.abs(back - y)) <= 1e-12
    _, det = map_jacobian(e1, e2, y)
    ratio = (1 + e2.evaluate(y[:, :1])) / (1 + e1.evaluate(y[:, :1]))
    assert abs(det[0] - ratio[0]) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_cofactor_identity(entries):
    M = np.array(entries).reshape(3, 3)
    C = cofactor(M)
    np.testing.assert_allclose(M @ C.T, np.linalg.det(M) * np.eye(3), atol=1e-9 * (1 + np.abs(M).max() ** 3))


def test_piola_preserves_flux_through_vertical_lines():
    # the horizontal flux of U across x = const equals the integral of u~_1 over the
    # reference section because Cof(grad X)^T scales the first component by 1 + eta2 / (1 + eta1)
    e1, e2 = cos_profile(0.0), cos_profile(0.25)
    z = np.linspace(0, 1, 2001)
    xh = 0.1
    y = np.stack([np.full_like(z, xh), z], axis=-1)
    U = lambda p: np.stack([1.0 + p[..., 1] ** 2, np.zeros(p.shape[:-1])], axis=-1)
    ut = piola_transform(U, e1, e2, y)
    top = 1 + e2.evaluate(np.array([[xh]]))[0]
    flux_ref = trapezoid(ut[:, 0], z)
    flux_phys = top + top**3 / 3
    assert flux_ref == pytest.approx(flux_phys, rel=1e-6)


def test_inadmissible_profile_rejected():
    bad = cos_profile(1.5)
    with pytest.raises(InadmissibleProfileError):
        domain_map(bad, cos_profile(0.0), np.array([[0.5, 0.1]]))


def test_mean_zero_projection():
    v = np.arange(10.0)
    assert project_mean_zero(v).mean() == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        PlateProfile(TOR, np.ones(32), mean_zero=True)
