import numpy as np
import pytest
from scipy.integrate import quad

from fsidelay import discretization as disc
from fsidelay.errors import AssemblyError
from fsidelay.geometry import PlateProfile, TorusGrid
from fsidelay.transform_ops import StationaryState


def test_state_space_is_constrained_and_energy_orthonormal(small_pipe, rng):
    basis = small_pipe.basis
    Z = basis.Z
    np.testing.assert_allclose(Z.T @ (basis.mass[:, None] * Z), np.eye(basis.n_state), atol=1e-10)
    vec = basis.from_state(rng.standard_normal(basis.n_state))
    assert basis.divergence_residual(vec) <= 1e-10 * np.max(np.abs(vec))
    top = basis.boundary_values(vec, "top")
    bottom = basis.boundary_values(vec, "bottom")
    # normal velocity: plate velocity on top, zero at the bottom wall
    np.testing.assert_allclose(top[1], basis.plate_values(vec[basis.xi2]), atol=1e-10)
    np.testing.assert_allclose(bottom[1], 0.0, atol=1e-10)
    P = basis.projector
    np.testing.assert_allclose(P @ P, P, atol=1e-10)


def test_adjoint_and_dissipativity(small_pipe, rng):
    s = small_pipe.system
    for _ in range(20):
        x, y = rng.standard_normal(s.n), rng.standard_normal(s.n)
        assert abs((s.A @ x) @ y - x @ (s.A_adj @ y)) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)
    assert disc.dissipativity_margin(s) >= 0.0


def test_energy_supply_equals_field_dissipation(small_pipe, rng):
    # at rest the supply x . A x is minus the viscous, friction and damping dissipation
    s = small_pipe.open_system
    x = rng.standard_normal(s.n)
    d = s.energy_parts(x)
    assert d["supply"] == pytest.approx(-(d["viscous"] + d["friction"] + d["damping"]), rel=1e-10)


def test_plate_only_eigenvalues_match_mode_polynomials():
    tor = TorusGrid(2, 1.0, 8)
    alpha, delta = 1.0, 0.5
    plate = disc.assemble_plate_ops(alpha, delta, tor)
    got = np.sort_complex(disc.plate_only_eigenvalues(plate))
    expected = []
    for k in range(1, 5):
        w = 2 * np.pi * k
        r = np.roots([1.0, delta * w**2, alpha * w**4])
        expected += list(r) * 2  # cosine and sine modes
    expected = np.sort_complex(np.array(expected))
    np.testing.assert_allclose(got, expected, rtol=1e-10)
    mat = np.sort_complex(np.linalg.eigvals(disc.assemble_plate_only(plate)))
    np.testing.assert_allclose(mat, expected, rtol=1e-8)


def test_rest_state_spectrum_is_stable(small_pipe):
    vals = np.linalg.eigvals(small_pipe.open_system.A)
    assert np.max(vals.real) < 0
    assert np.max(vals.real) == pytest.approx(-0.1707052975, abs=1e-8)


def test_control_bump_weight():
    tor = TorusGrid(2, 1.0, 8)
    shape = disc.ControlShape(tor, n_act=2, kind="auto", beta1=0.1)
    total, _ = quad(shape.weight, 0.0, 1.0, points=[1 / 3, 2 / 3])
    assert total == pytest.approx(1.0, abs=1e-10)
    assert shape.weight(0.1) == 0.0 and shape.weight(0.9) == 0.0
    # vanishing to fourth order at the support edge
    h = 1e-3
    assert shape.weight(1 / 3 + h) <= 10 * (h * 3 * np.pi) ** 4 * 8
    assert shape.n_inputs == 4 + 5
    assert disc.ControlShape(tor, 2, "normal").n_inputs == 4
    assert disc.ControlShape(tor, 2, "none").n_inputs == 0


def test_flatten_state_rejects_deformed_profiles(small_pipe):
    basis = small_pipe.basis
    tor = basis.torus
    x = tor.axes()[0]
    deformed = basis.grid.with_reference(PlateProfile(tor, 0.01 * np.cos(2 * np.pi * x)))
    st = StationaryState.at_rest(deformed, nu=0.1)
    with pytest.raises(AssemblyError):
        disc.flatten_state(st, basis)
    flat = StationaryState.at_rest(basis.grid, nu=0.1)
    assert disc.flatten_state(flat, basis).grid is basis.grid


def test_export_import_round_trip(small_pipe, tmp_path):
    s = small_pipe.system
    disc.export_system(s, tmp_path)
    back = disc.import_system(tmp_path)
    np.testing.assert_array_equal(back["A"], s.A)
    np.testing.assert_array_equal(back["B"], s.B)
    (tmp_path / "A.csv").write_text((tmp_path / "A.csv").read_text().replace("e", "E", 1))
    with pytest.raises(AssemblyError):
        disc.import_system(tmp_path)
