import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsidelay.errors import CriterionError
from fsidelay.spectral_analysis import (
    MatrixSystem,
    compute_spectrum,
    hautus_test,
    spectral_abscissa,
    unstable_mode_count,
)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_eigenpairs_are_biorthonormal(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 6)) - 3 * np.eye(6)
    pairs = compute_spectrum(MatrixSystem(A))
    assert len(pairs) == 6
    np.testing.assert_allclose(np.sort_complex([p.value for p in pairs]),
                               np.sort_complex(np.linalg.eigvals(A)), atol=1e-10)
    for p in pairs:
        assert np.linalg.norm(A @ p.right - p.value * p.right) <= 1e-9
        assert abs(np.vdot(p.left, p.right) - 1) <= 1e-9
    reals = [p.value.real for p in pairs]
    assert reals == sorted(reals, reverse=True)


def test_default_spectrum_is_conjugate_symmetric(default_pipe):
    vals = np.array([p.value for p in default_pipe.pairs])
    scale = np.max(np.abs(vals))
    for v in vals[np.abs(vals.imag) > 1e-9 * scale]:
        assert np.min(np.abs(vals - np.conj(v))) <= 1e-8 * scale
    assert spectral_abscissa(default_pipe.pairs) == pytest.approx(-0.1707052976, abs=1e-8)


def test_hautus_toys():
    assert not hautus_test(MatrixSystem([[1.0]], [[0.0]]), 2.0).passed
    assert hautus_test(MatrixSystem([[1.0]], [[1.0]]), 2.0).passed
    # eigenvalue 1 with a two-dimensional eigenspace cannot be reached by one input
    rep = hautus_test(MatrixSystem(np.eye(2), [[1.0], [0.0]]), 2.0)
    assert not rep.passed
    assert rep.min_ratio == pytest.approx(0.0, abs=1e-12)
    assert hautus_test(MatrixSystem(np.eye(2), np.eye(2)), 2.0).passed


def test_hautus_ignores_modes_left_of_sigma():
    A = np.diag([-1.0, -5.0])
    B = np.array([[1.0], [0.0]])
    assert hautus_test(MatrixSystem(A, B), 2.0).passed
    assert not hautus_test(MatrixSystem(A, B), 6.0).passed


def test_hautus_requires_a_control():
    with pytest.raises(CriterionError):
        hautus_test(MatrixSystem([[1.0]]), 1.0)


def test_unstable_projection():
    A = np.array([[-0.5, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -3.0]])
    B = np.ones((3, 1))
    proj = unstable_mode_count(MatrixSystem(A, B), 2.0)
    assert proj.count == 2
    np.testing.assert_allclose(proj.Lb.T @ proj.R, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(proj.A_u).real), [-1.0, -0.5], atol=1e-12)


def test_default_system_has_two_modes_right_of_gamma(default_pipe):
    rep = hautus_test(default_pipe.system, 2.0, 1e-6, default_pipe.pairs)
    assert rep.passed and rep.complete
    assert unstable_mode_count(default_pipe.system, 2.0, default_pipe.pairs).count == 2
