import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsidelay import simulation as sim
from fsidelay.delay_control import synthesize
from fsidelay.errors import ConfigError, IntegrationError
from fsidelay.spectral_analysis import MatrixSystem


def test_decay_fit_oracles():
    t = np.linspace(0, 5, 501)
    assert sim.decay_fit((t, np.exp(-2 * t))).rate == pytest.approx(2.0, abs=1e-6)
    tl = np.linspace(0, 20, 2001)
    wobbly = np.exp(-tl) * (2 + np.sin(5 * tl))
    assert sim.decay_fit((tl, wobbly)).rate == pytest.approx(1.0, abs=0.05)
    assert sim.decay_fit((t, np.full_like(t, 3.0))).rate == pytest.approx(0.0, abs=1e-12)
    fit = sim.decay_fit((t, np.exp(-2 * t)), t_start=2.0)
    assert fit.t_start >= 2.0 and fit.band[0] <= fit.rate <= fit.band[1]
    with pytest.raises(IntegrationError):
        sim.decay_fit((t[:2], np.ones(2)))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.9))
def test_delay_buffer_is_exact_on_cubics(frac):
    buf = sim.DelayBuffer(span=1.0)
    f = lambda t: np.array([1 + t - 2 * t**2 + 0.5 * t**3, np.cos(0.0) * t])
    for k in range(40):
        buf.append(0.1 * k, f(0.1 * k))
    t = 3.0 + frac
    np.testing.assert_allclose(buf.query(t), f(t), atol=1e-12)
    np.testing.assert_array_equal(buf.query(3.5), f(3.5))


def test_delay_buffer_window_and_order():
    buf = sim.DelayBuffer(span=0.5, order="linear")
    for k in range(30):
        buf.append(0.1 * k, [k * 1.0])
    assert buf.query(2.45)[0] == pytest.approx(24.5)
    with pytest.raises(ValueError):
        buf.query(0.5)
    with pytest.raises(ValueError):
        buf.append(0.0, [0.0])
    with pytest.raises(ConfigError):
        sim.DelayBuffer(1.0, order="spline")


def test_scalar_predictor_closed_loop_rate():
    # x' = x + v(t - 1/2) with target -2: the predicted state decays exactly like exp(-2 t)
    s = MatrixSystem([[1.0]], [[1.0]])
    law = synthesize(s, 1.5, 0.5, margin=0.5)
    errs = []
    for dt in (0.01, 0.005):
        tr = sim.integrate_linear(s, law, np.array([1.0]), 8.0, dt)
        errs.append(abs(sim.decay_fit(tr, 2.0).rate - 2.0))
        assert np.all(tr.controls[tr.times < 0.5 - 1e-12] == 0.0)
    assert errs[0] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_zero_initial_state_stays_zero(small_pipe):
    tr = sim.integrate_linear(small_pipe.system, small_pipe.law, np.zeros(small_pipe.system.n), 1.0, 0.025)
    assert np.all(tr.norm == 0.0)
    with pytest.raises(IntegrationError):
        sim.decay_fit(tr)


def test_initial_state_norm(small_pipe):
    x = sim.initial_state(small_pipe.system, 0.3, seed=4, pairs=small_pipe.pairs)
    assert np.linalg.norm(x) == pytest.approx(0.3, rel=1e-14)
    y = sim.initial_state(small_pipe.system, 0.3, seed=4, pairs=small_pipe.pairs)
    np.testing.assert_array_equal(x, y)


def test_energy_residual_is_second_order(small_pipe):
    s = small_pipe.open_system
    x0 = sim.initial_state(s, 1.0, pairs=small_pipe.pairs)
    res = [np.max(np.abs(sim.integrate_linear(s, None, x0, 0.5, dt).energy_residual)) for dt in (0.02, 0.01)]
    assert np.log2(res[0] / res[1]) >= 1.9


def test_open_loop_decays_at_the_abscissa(small_pipe):
    s = small_pipe.system
    x0 = sim.initial_state(s, 1.0, pairs=small_pipe.pairs)
    tr = sim.integrate_linear(s, None, x0, 20.0, 0.05)
    assert sim.decay_fit(tr, 5.0).rate == pytest.approx(0.1707053, rel=0.01)


def test_nonlinear_matches_linear_at_small_amplitude(small_pipe):
    s, law = small_pipe.system, small_pipe.law
    gaps = []
    for R in (1e-2, 5e-3):
        x0 = sim.initial_state(s, R, pairs=small_pipe.pairs)
        tn = sim.integrate_nonlinear(s, law, x0, 0.5, 0.025, store_states=True)
        tl = sim.integrate_linear(s, law, x0, 0.5, 0.025, store_states=True)
        gaps.append(np.max(np.linalg.norm(tn.states - tl.states, axis=1)))
        assert tn.info["picard_max"] <= 25
    assert np.log2(gaps[0] / gaps[1]) >= 1.9


def test_trajectory_csv_round_trips_floats(small_pipe):
    s = small_pipe.system
    x0 = sim.initial_state(s, 1e-2, pairs=small_pipe.pairs)
    tr = sim.integrate_linear(s, small_pipe.law, x0, 0.3, 0.025)
    lines = tr.to_csv().splitlines()
    assert lines[0].split(",") == list(sim.Trajectory.COLUMNS)
    first = [float(v) for v in lines[1].split(",")]
    assert first[1] == tr.norm[0]


def test_unknown_feedback_form(small_pipe):
    s = small_pipe.system
    with pytest.raises(ConfigError):
        sim.integrate_linear(s, small_pipe.law, np.zeros(s.n), 0.1, 0.025, form="bogus")
