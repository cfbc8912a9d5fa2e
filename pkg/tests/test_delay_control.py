import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsidelay.delay_control import (
    FeedbackLaw,
    KernelController,
    RecursionController,
    artstein_reduce,
    controllability_rank,
    delay_steps,
    export_kernel,
    place_poles,
    pole_targets,
    synthesize,
)
from fsidelay.errors import CriterionError
from fsidelay.spectral_analysis import MatrixSystem


def toy_law(t0=0.3, seed=0):
    rng = np.random.default_rng(seed)
    A = np.diag([1.0, 0.5, -5.0])
    B = rng.standard_normal((3, 2))
    return synthesize(MatrixSystem(A, B), 2.0, t0)


def test_scalar_gain_closed_form():
    bt = artstein_reduce([[1.0]], [[1.0]], 0.5)
    assert bt[0, 0] == pytest.approx(np.exp(-0.5), rel=1e-14)
    F = place_poles([[1.0]], bt, gamma=1.5, margin=0.5)
    # 1 + exp(-0.5) F = -2
    assert F[0, 0] == pytest.approx(-3.0 / np.exp(-0.5), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_random_placement_meets_the_margin(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4)) + np.eye(4)
    B = rng.standard_normal((4, 2))
    gamma, margin = 1.0, 0.2
    F = place_poles(A, B, gamma, margin)
    eig = np.linalg.eigvals(A + B @ F)
    assert np.max(eig.real) <= -(gamma + margin) + 1e-8


def test_pole_targets_spread_repeated_real_modes():
    t = pole_targets(np.array([0.1, 0.2, 1 + 2j, 1 - 2j]), 2.0, 0.4)
    np.testing.assert_allclose(t, [-2.4, -2.4 * 1.05, -2.4 + 2j, -2.4 - 2j])


def test_uncontrollable_pair_is_refused():
    A = np.diag([1.0, 2.0])
    B = np.array([[1.0], [0.0]])
    assert controllability_rank(A, B) == 1
    with pytest.raises(CriterionError):
        place_poles(A, B, 1.0)
    with pytest.raises(CriterionError):
        synthesize(MatrixSystem([[1.0]], [[0.0]]), 2.0, 0.1)


def test_law_on_toy_system():
    law = toy_law()
    assert law.count == 2
    assert np.max(law.closed_loop_eigenvalues().real) <= -2.4 + 1e-8
    # exp(-A_u t0) through the eigendecomposition of A_u
    lam, V = np.linalg.eig(law.A_u)
    expected = (V @ np.diag(np.exp(-lam * 0.3)) @ np.linalg.inv(V) @ law.B_u).real
    np.testing.assert_allclose(law.B_t, expected, atol=1e-12)


def test_json_round_trip_is_exact():
    law = toy_law()
    back = FeedbackLaw.from_json(law.to_json())
    for name in ("R", "Lb", "A_u", "B_u", "B_t", "F"):
        np.testing.assert_array_equal(getattr(back, name), getattr(law, name))
    assert back.to_json() == law.to_json()


def test_delay_steps():
    assert delay_steps(0.1, 0.025) == (4, 0.025)
    m, h = delay_steps(0.1, 0.03)
    assert m == 3 and h == pytest.approx(0.1 / 3)
    assert delay_steps(0.0, 0.01) == (0, 0.01)


def test_zero_delay_kernel_vanishes_and_law_is_memoryless():
    law = toy_law(t0=0.0)
    table = export_kernel(law, 0.01, 20)
    assert np.all(table.values == 0.0)
    z = np.array([0.3, -0.2])
    np.testing.assert_allclose(RecursionController(law, 0.01).value(0, z), law.F @ z)


def test_kernel_and_recursion_agree_on_any_history():
    law = toy_law(t0=0.3)
    dt, n = 0.05, 60
    rng = np.random.default_rng(5)
    z = list(rng.standard_normal((n, 2)))
    rec = RecursionController(law, dt)
    ker = KernelController(law, dt, n)
    m = rec.m
    for k in range(n):
        v_rec = rec.value(k, z[k - m] if k >= m else None)
        v_ker = ker.value(k, z[: k + 1])
        np.testing.assert_allclose(v_rec, v_ker, atol=1e-11 * (1 + np.max(np.abs(v_rec))))
        if k < m:
            assert np.all(v_rec == 0.0)


def test_kernel_table_interpolation():
    law = toy_law()
    table = export_kernel(law, 0.1, 10)
    np.testing.assert_allclose(table.at(0.15), 0.5 * (table.values[1] + table.values[2]))
    assert np.all(table.sample(0.1, 0.5) == 0.0)
    assert table.full(0.5, 0.2).shape == (law.R.shape[0], law.R.shape[0])
