import numpy as np
import pytest

from fsidelay import discretization as disc
from fsidelay.errors import AssemblyError
from fsidelay.steady import SteadyProblem

PHYS = dict(nu=0.1, alpha=1.0, delta=0.5, beta1=0.1, beta2=0.1)


def test_zero_forcing_gives_rest(small_pipe):
    st, log = disc.steady_state_solve(small_pipe.basis, **PHYS)
    assert log["iterations"] == 0
    assert np.all(st.w == 0) and np.all(st.eta.values == 0)


def test_uniform_forcing_matches_slip_channel_profile(small_pipe):
    # -nu U'' = f, nu U'(0) = beta1 U(0), -nu U'(1) = beta2 U(1): U = 2.5 (1 + z - z^2)
    basis = small_pipe.basis
    f = lambda x1, x3: np.array([0.5 + 0 * x1, 0 * x1])
    st, log = disc.steady_state_solve(basis, forcing=f, **PHYS)
    assert log["residual_history"][-1] <= 1e-10
    z = st.grid.coordinates()[1]
    np.testing.assert_allclose(st.w[0], 2.5 * (1 + z - z**2), atol=1e-9)
    np.testing.assert_allclose(st.w[1], 0.0, atol=1e-9)
    assert np.max(np.abs(st.eta.values)) <= 1e-12
    assert np.ptp(st.p) <= 1e-8
    flat = disc.flatten_state(st, basis)
    assert flat.grid is basis.grid


def test_cosine_load_bends_plate_statically(small_pipe):
    basis = small_pipe.basis
    load = lambda x: 0.5 * np.cos(2 * np.pi * x)
    prob = SteadyProblem(basis, plate_load=load, **PHYS)
    st, log = prob.solve()
    assert log["residual_history"][-1] <= 1e-10
    g = st.grid
    # the fluid stays at rest with constant pressure, so alpha d^4 eta / dx^4 = h
    x = g.x
    np.testing.assert_allclose(st.eta.values, 0.5 * np.cos(2 * np.pi * x) / (2 * np.pi) ** 4, atol=1e-12)
    np.testing.assert_allclose(st.w, 0.0, atol=1e-10)
    with pytest.raises(AssemblyError):
        disc.flatten_state(st, basis)


def test_newton_divergence_is_reported(small_pipe):
    f = lambda x1, x3: np.array([1e6 * np.sin(2 * np.pi * x1) * x3, 0 * x1])
    with pytest.raises(AssemblyError):
        disc.steady_state_solve(small_pipe.basis, forcing=f, max_iter=3, **PHYS)


def test_forced_deformed_state_is_divergence_free_and_impermeable(small_pipe):
    from fsidelay.grids import fourier_derivative

    k = 2 * np.pi
    f = lambda x1, x3: 0.5 * np.array([np.sin(k * x1) * x3, np.cos(k * x1) * x3 * (1 - x3)])
    st, log = disc.steady_state_solve(small_pipe.basis, forcing=f, **PHYS)
    g, U = st.grid, st.w
    assert np.max(np.abs(st.eta.values)) > 1e-6
    assert np.max(np.abs(g.div(U))) <= 1e-10
    slope = fourier_derivative(st.eta.values, 1.0)
    top = U[:, -1]
    assert np.max(np.abs(top[1] - slope * top[0])) <= 1e-12
    assert np.max(np.abs(U[1, 0])) <= 1e-12
