import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsidelay import transform_ops as tops
from fsidelay.errors import IllConditionedError
from fsidelay.fluid_grid import FluidGrid
from fsidelay.geometry import PlateProfile, TorusGrid, cofactor
from fsidelay.verify import _random_field, _random_profile

NU = 0.1


def flat_grid(n=12, nz=16, L=1.0):
    return FluidGrid(TorusGrid(2, L, n), nz)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_flat_limit_of_every_operator(seed):
    rng = np.random.default_rng(seed)
    g = flat_grid()
    geom = tops.TransformGeometry(g, np.zeros(g.nx))
    u = _random_field(g, rng)
    p = rng.standard_normal() * g.coordinates()[1] ** 2
    lap = g.laplacian(u)
    scale = np.max(np.abs(lap))
    assert np.max(np.abs(tops.op_L(geom, u, NU) + NU * lap)) <= 1e-10 * NU * scale
    assert np.max(np.abs(tops.op_E(geom, u, NU))) <= 1e-12 * scale
    np.testing.assert_allclose(tops.op_K(geom, u), u, atol=1e-14)
    # op_G is the pressure-gradient defect (grad - G_eta) p, which vanishes
    assert np.max(np.abs(tops.op_G(geom, p))) <= 1e-12 * (1 + np.max(np.abs(g.grad(p))))
    conv = np.einsum("il...,l...->i...", g.grad(u), u)
    np.testing.assert_allclose(tops.op_N(geom, u), -conv, atol=1e-10 * np.max(np.abs(conv)))


def test_viscous_operator_against_stream_function_oracle():
    # U = curl psi with psi = sin(k x) x3^3 on Omega(eta); Delta U is known in closed form
    L, n, nz = 1.0, 24, 20
    k = 2 * np.pi / L
    tor = TorusGrid(2, L, n)
    g = FluidGrid(tor, nz)
    x = tor.axes()[0]
    eta = 0.1 * np.cos(k * x)
    deta = -0.1 * k * np.sin(k * x)
    geom = tops.TransformGeometry(g, eta)
    y1, y3 = g.coordinates()
    r = 1 + eta
    X3 = y3 * r
    U = np.array([3 * np.sin(k * y1) * X3**2, -k * np.cos(k * y1) * X3**3])
    lapU = np.array([
        (-3 * k**2 * X3**2 + 6) * np.sin(k * y1),
        (k**3 * X3**3 - 6 * k * X3) * np.cos(k * y1),
    ])
    J = np.zeros(g.shape + (2, 2))
    J[..., 0, 0] = 1.0
    J[..., 1, 0] = y3 * deta
    J[..., 1, 1] = r
    C = cofactor(J)
    ut = np.einsum("...ki,k...->i...", C, U)
    det = np.broadcast_to(r, g.shape)
    expected = -NU * det * lapU
    got = tops.op_L(geom, ut, NU)
    assert np.max(np.abs(got - expected)) <= 1e-8 * np.max(np.abs(expected))


@pytest.mark.parametrize("seed", range(3))
def test_divergence_identity(seed):
    rng = np.random.default_rng(seed)
    tor = TorusGrid(2, 1.0, 24)
    ref = PlateProfile(tor, _random_profile(tor, rng, 0.1))
    g = FluidGrid(tor, 16, ref)
    geom = tops.TransformGeometry(g, ref.values + _random_profile(tor, rng, 0.1))
    u = _random_field(g, rng)
    divE = tops.div_matrix(g, tops.op_E(geom, u, NU))
    res = divE + NU * g.laplacian(u) + tops.op_L(geom, u, NU) - tops.op_F1(geom, u, NU)
    assert np.max(np.abs(res)) <= 1e-8 * np.max(np.abs(divE))


def test_gateaux_exact_on_quadratics():
    a, b, c = np.array([1.0, 2.0]), np.array([0.5, -3.0]), np.array([7.0, 1.0])
    d = tops.gateaux(lambda h: a + b * h + c * h**2, 1.0)
    np.testing.assert_allclose(d, b, rtol=1e-9)


def test_gateaux_rejects_non_smooth_maps():
    with pytest.raises(IllConditionedError):
        tops.gateaux(lambda h: np.array([np.sign(h) * abs(h) ** 1.5]), 1.0)


def test_taylor_remainder_closed_form():
    # f = (y3^2, 0), flat reference, constant xi: det f(X) - f = y3^2 ((1 + xi)^3 - 1)
    g = flat_grid(8, 12)
    st_ = tops.StationaryState(g, np.zeros((2,) + g.shape), np.zeros(g.shape), nu=NU,
                               forcing=lambda y1, y3: np.array([y3**2 + 0 * y1, 0 * y1]))
    xi = 0.03
    rem = tops.taylor_remainder(st_, np.full(g.nx, xi))
    y3 = g.coordinates()[1]
    np.testing.assert_allclose(rem[0], y3**2 * (3 * xi**2 + xi**3), atol=1e-12)
    np.testing.assert_allclose(rem[1], 0.0, atol=1e-14)
