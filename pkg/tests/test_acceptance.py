"""One test per acceptance criterion on the default configuration."""

import numpy as np
import pytest

from conftest import record_criterion
from fsidelay import simulation as sim
from fsidelay import verify
from fsidelay.cli import main
from fsidelay.spectral_analysis import MatrixSystem, hautus_test, spectral_abscissa, unstable_mode_count


@pytest.fixture(scope="module")
def law(default_pipe):
    return default_pipe.law


def test_criterion_01_geometry_exactness():
    rng = np.random.default_rng(0)
    checks = {c.name: c.value for c in verify.geometry_checks(rng)}
    rt, det, ratio = checks["geometry.round_trip"], checks["geometry.det"], checks["geometry.piola_decay_ratio"]
    ok = rt <= 1e-12 and det <= 1e-10 and ratio >= 10.0
    record_criterion(1, "geometry exactness", ok,
                     f"round trip {rt:.2e} <= 1e-12, det {det:.2e} <= 1e-10, Piola decay ratio {ratio:.1f} >= 10")
    assert ok


def test_criterion_02_flat_limit():
    c = verify.flat_limit_check(np.random.default_rng(0), n_fields=20)[0]
    record_criterion(2, "flat-limit collapse", c.passed, f"max relative op_L + nu Lap = {c.value:.2e} <= 1e-10")
    assert c.value <= 1e-10


def test_criterion_03_divergence_identity():
    c = verify.divergence_identity_check(np.random.default_rng(0), n_pairs=10)[0]
    record_criterion(3, "divergence identity", c.passed, f"max relative residual {c.value:.2e} <= 1e-8")
    assert c.value <= 1e-8


def test_criterion_04_quadratic_remainders():
    slopes = verify.remainder_slopes((1e-1, 1e-2, 1e-3, 1e-4))
    worst = min(slopes.values())
    ok = worst >= 1.9
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
    record_criterion(4, "quadratic remainders", ok, f"min slope {worst:.3f} >= 1.9 ({detail})")
    assert ok


def test_criterion_05_operator_structure(default_pipe):
    checks = {c.name: c.value for c in verify.operator_checks(default_pipe.system, np.random.default_rng(0), 100)}
    adj = checks["operator.adjoint_consistency"]
    dis = checks["operator.dissipativity"]
    plate = checks["operator.plate_only_eigenvalues"]
    ok = adj <= 1e-8 and dis >= 0.0 and plate <= 1e-8
    record_criterion(5, "operator structure", ok,
                     f"adjoint {adj:.2e} <= 1e-8, min Rayleigh of lambda0 - A {dis:.3e} >= 0, "
                     f"plate-only eigenvalues {plate:.2e} <= 1e-8")
    assert ok


def test_criterion_06_energy_balance(default_pipe):
    system = default_pipe.open_system
    assert not np.any(system.state.w)
    x0 = sim.initial_state(system, 1.0, 0, pairs=default_pipe.pairs)
    order, mean = verify.energy_order(system, x0)
    ok = order >= 1.9
    record_criterion(6, "energy balance", ok, f"observed order {order:.3f} >= 1.9 (plate mean {mean:.1e})")
    assert ok


def test_criterion_07_hautus(default_pipe):
    gamma = 2.0
    rep = hautus_test(default_pipe.system, gamma, 1e-6, default_pipe.pairs)
    refined = hautus_test(default_pipe.refined_system(1.5), gamma, 1e-6)
    change = abs(refined.min_ratio / rep.min_ratio - 1.0)
    toy = hautus_test(MatrixSystem([[1.0]], [[0.0]]), gamma)
    ok = rep.passed and rep.min_ratio >= 1e-6 and change <= 0.2 and not toy.passed
    record_criterion(7, "Hautus test", ok,
                     f"min ratio {rep.min_ratio:.4f} >= 1e-6, refinement change {change:.1e} <= 0.2, "
                     f"B=0 toy {'fails' if not toy.passed else 'passes'}")
    assert ok


def test_criterion_08_delayed_stabilization(default_pipe, law):
    system, pairs = default_pipe.system, default_pipe.pairs
    gamma, t0, T, dt = 2.0, 0.1, 8.0, 0.025
    # the target rate exceeds the open-loop decay rate, so feedback is needed
    assert gamma > -spectral_abscissa(pairs)
    n_gamma = unstable_mode_count(system, gamma, pairs).count
    cl = np.max(law.closed_loop_eigenvalues().real)
    x0 = sim.initial_state(system, 1e-2, 0, pairs=pairs)
    ta = sim.integrate_linear(system, law, x0, T, dt, form="recursion", store_states=True)
    tb = sim.integrate_linear(system, law, x0, T, dt, form="kernel", store_states=True)
    rate = sim.decay_fit(ta, t0 + 2.0 / gamma).rate
    v_before = np.max(np.abs(ta.controls[ta.times < t0 - 1e-12]))
    v_after = np.max(np.abs(ta.controls[ta.times > t0]))
    twin = np.max(np.linalg.norm(ta.states - tb.states, axis=1)) / np.max(ta.norm)
    ok = (n_gamma >= 2 and cl <= -gamma - law.margin + 1e-8 and rate >= 0.9 * gamma
          and v_before == 0.0 and v_after > 0.0 and twin <= 1e-6)
    record_criterion(8, "delayed stabilization", ok,
                     f"N_gamma {n_gamma}, max Re closed loop {cl:.4f} <= {-gamma - law.margin:.4f}, "
                     f"decay {rate:.4f} >= {0.9 * gamma:.2f}, |v| before t0 {v_before:.1e}, "
                     f"kernel vs recursion {twin:.1e} <= 1e-6")
    assert ok


def test_criterion_09_nonlinear_closed_loop(default_pipe, law):
    system, pairs = default_pipe.system, default_pipe.pairs
    gamma, t0, dt, R = 2.0, 0.1, 0.025, 1e-2
    gaps, picard = [], 0
    for r in (R, R / 2):
        x0 = sim.initial_state(system, r, 0, pairs=pairs)
        tn = sim.integrate_nonlinear(system, law, x0, 2.0, dt, store_states=True)
        tl = sim.integrate_linear(system, law, x0, 2.0, dt, store_states=True)
        gaps.append(np.max(np.linalg.norm(tn.states - tl.states, axis=1)))
        picard = max(picard, tn.info["picard_max"])
    slope = np.log2(gaps[0] / gaps[1])
    Rmax, traj, tried = sim.largest_contracting_radius(system, law, [1.0, 0.5, 0.25, 0.1], 8.0, dt, 0)
    rate = sim.decay_fit(traj, t0 + 2.0 / gamma).rate if Rmax is not None else 0.0
    picard = max(picard, traj.info["picard_max"] if traj is not None else 99)
    ok = slope >= 1.9 and rate >= 0.9 * gamma and picard <= 25
    record_criterion(9, "nonlinear closed loop", ok,
                     f"gap slope {slope:.3f} >= 1.9, largest contracting R {Rmax}, decay {rate:.4f} >= "
                     f"{0.9 * gamma:.2f}, max Picard iterations {picard} <= 25")
    assert ok


def test_criterion_10_determinism(tmp_path):
    runs = []
    for d in ("first", "second"):
        code = main(["verify", "--out", str(tmp_path / d)])
        files = sorted(p.name for p in (tmp_path / d).iterdir())
        runs.append((code, {f: (tmp_path / d / f).read_bytes() for f in files}))
    same = runs[0] == runs[1]
    ok = same and runs[0][0] == 0
    record_criterion(10, "determinism", ok,
                     f"verify exit codes {runs[0][0]}, {runs[1][0]}; {len(runs[0][1])} files byte-identical: {same}")
    assert ok
