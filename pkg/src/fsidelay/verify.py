"""Property battery run by ``fsidelay verify``.

Each check returns a :class:`Check` with the measured value, its
threshold and the comparison. The battery is deterministic for a given
configuration and seed.
"""

from dataclasses import dataclass

import numpy as np

from . import discretization as disc
from . import simulation as sim
from . import transform_ops as tops
from .delay_control import synthesize
from .errors import CriterionError, FsiError
from .fluid_grid import FluidGrid
from .geometry import PlateProfile, TorusGrid, domain_map, map_jacobian
from .spectral_analysis import MatrixSystem, hautus_test, unstable_mode_count


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    relation: str
    passed: bool
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6e} {self.relation} {self.threshold:.6e}{' ' + self.note if self.note else ''}"


def _check(name, value, threshold, relation, note=""):
    value = float(value)
    ok = value <= threshold if relation == "<=" else value >= threshold
    return Check(name, value, float(threshold), relation, bool(ok and np.isfinite(value)), note)


# ---------------------------------------------------------------------------
# geometry and transformed operators


def _random_profile(tor, rng, amp=0.15, kmax=3):
    x = tor.axes()[0]
    L = tor.L1
    vals = np.zeros_like(x)
    for k in range(1, kmax + 1):
        a, b = rng.uniform(-1, 1, 2) * amp / k**2
        vals += a * np.cos(2 * np.pi * k * x / L) + b * np.sin(2 * np.pi * k * x / L)
    return vals - vals.mean()


def _random_field(grid, rng, kmax=3, deg=4):
    """Smooth vector field: trigonometric in ``y1`` times polynomials in ``y3``."""
    y1, y3 = grid.coordinates()
    L = grid.L
    out = np.zeros((2,) + grid.shape)
    for c in range(2):
        for k in range(kmax + 1):
            for j in range(deg + 1):
                a, b = rng.standard_normal(2) / (1 + k + j) ** 2
                out[c] += (a * np.cos(2 * np.pi * k * y1 / L) + b * np.sin(2 * np.pi * k * y1 / L)) * y3**j
    return out


def geometry_checks(rng, L=1.0, n=16):
    tor = TorusGrid(2, L, n)
    e1 = PlateProfile(tor, _random_profile(tor, rng))
    e2 = PlateProfile(tor, _random_profile(tor, rng))
    s = rng.uniform(0, 1, 200)
    pts = np.stack([L * rng.uniform(0, 1, 200), np.zeros(200)], axis=-1)
    top = 1.0 + e1.evaluate(pts[:, :1])
    pts[:, 1] = s * top
    back = domain_map(e2, e1, domain_map(e1, e2, pts))
    rt = np.max(np.abs(back - pts))
    _, det = map_jacobian(e1, e2, pts)
    ratio = (1.0 + e2.evaluate(pts[:, :1])) / (1.0 + e1.evaluate(pts[:, :1]))
    det_err = np.max(np.abs(det - ratio))
    return [
        _check("geometry.round_trip", rt, 1e-12, "<="),
        _check("geometry.det", det_err, 1e-10, "<="),
        _check("geometry.piola_decay_ratio", piola_decay(), 10.0, ">="),
    ]


def piola_decay(L=1.0, sizes=(8, 16, 24)):
    """Smallest error ratio of the discrete Piola divergence identity per +8 modes.

    The identity ``div(Cof(grad X)^T U(X)) = det(grad X) (div U)(X)`` is
    checked for a trigonometric field ``U`` and profile; the residual is
    due to the discrete derivatives only and decays spectrally.
    """
    k = 2 * np.pi / L

    def U(x1, x3):
        return np.array([np.sin(k * x1) * np.cos(x3), np.cos(2 * k * x1) * np.sin(x3)])

    def divU(x1, x3):
        return k * np.cos(k * x1) * np.cos(x3) + np.cos(2 * k * x1) * np.cos(x3)

    errs = []
    for n in sizes:
        tor = TorusGrid(2, L, n)
        g = FluidGrid(tor, n)
        eta = 0.2 * np.cos(k * tor.axes()[0]) + 0.1 * np.sin(2 * k * tor.axes()[0])
        geom = tops.TransformGeometry(g, eta)
        y1, y3 = g.coordinates()
        X3 = y3 * geom.det
        ut = np.einsum("ji...,j...->i...", geom.b, U(y1, X3))
        errs.append(np.max(np.abs(g.div(ut) - geom.det * divU(y1, X3))))
    errs = np.maximum(np.array(errs), 1e-300)
    return float(np.min(errs[:-1] / errs[1:]))


def flat_limit_check(rng, n_fields=20, nu=0.1):
    tor = TorusGrid(2, 1.0, 12)
    g = FluidGrid(tor, 16)
    geom = tops.TransformGeometry(g, np.zeros(g.nx))
    worst = 0.0
    for _ in range(n_fields):
        u = _random_field(g, rng)
        ref = -nu * g.laplacian(u)
        worst = max(worst, np.max(np.abs(tops.op_L(geom, u, nu) - ref)) / max(np.max(np.abs(ref)), 1e-300))
    return [_check("transform.flat_limit", worst, 1e-10, "<=")]


def divergence_identity_check(rng, n_pairs=10, nu=0.1):
    tor = TorusGrid(2, 1.0, 24)
    worst = 0.0
    for _ in range(n_pairs):
        ref = PlateProfile(tor, _random_profile(tor, rng, 0.1))
        g = FluidGrid(tor, 16, ref)
        eta = ref.values + _random_profile(tor, rng, 0.1)
        geom = tops.TransformGeometry(g, eta)
        u = _random_field(g, rng)
        divE = tops.div_matrix(g, tops.op_E(geom, u, nu))
        res = divE + nu * g.laplacian(u) + tops.op_L(geom, u, nu) - tops.op_F1(geom, u, nu)
        scale = max(np.max(np.abs(divE)), np.max(np.abs(nu * g.laplacian(u))))
        worst = max(worst, np.max(np.abs(res)) / scale)
    return [_check("transform.divergence_identity", worst, 1e-8, "<=")]


def remainder_slopes(eps_values=(1e-1, 1e-2, 1e-3, 1e-4)):
    """Log-log slopes of every remainder channel around a deformed, forced state."""
    L = 2.0
    tor = TorusGrid(2, L, 8)
    k = 2 * np.pi / L
    x = tor.axes()[0]
    g = FluidGrid(tor, 12, PlateProfile(tor, 0.1 * np.cos(k * x)))
    w = g.sample(lambda y1, y3: np.array([y3 * (1 - y3) + 0.1 * np.sin(k * y1) * y3,
                                          0.05 * np.cos(k * y1) * y3**2]))
    p = g.sample(lambda y1, y3: 0.1 * np.cos(k * y1) + y3)
    st = tops.StationaryState(g, w, p, nu=0.3,
                              forcing=lambda y1, y3: np.array([np.sin(k * y1) * y3, y3**2 + 0 * y1]))
    xi0 = 0.1 * np.sin(k * x) + 0.05 * np.cos(2 * k * x)
    xit0 = 0.1 * np.cos(k * x)
    u0 = g.sample(lambda y1, y3: np.array([np.cos(k * y1) * y3, np.sin(k * y1) * y3 * y3]))
    p0 = g.sample(lambda y1, y3: np.sin(k * y1) * y3)
    rows = []
    for eps in eps_values:
        ch = tops.remainder_channels(st, eps * u0, eps * p0, eps * xi0, eps * xit0)
        r = tops.nonlinear_remainder(st, eps * u0, eps * p0, eps * xi0, eps * xit0, eps * u0)
        rows.append({
            "N_E": np.max(np.abs(ch["N_E"])),
            "N_F": np.max(np.abs(ch["N_F"])),
            "N_G": np.max(np.abs(np.stack(ch["N_G"]))),
            "H": np.max(np.abs(r.plate)),
            "taylor": np.max(np.abs(ch["taylor"])),
            "interior": np.max(np.abs(r.interior)),
            "boundary_G": max(np.max(np.abs(r.boundary_top)), np.max(np.abs(r.boundary_bottom))),
        })
    slopes = {}
    for name in rows[0]:
        v = np.array([row[name] for row in rows])
        e = np.array(eps_values)
        slopes[name] = float(np.min(np.log(v[:-1] / v[1:]) / np.log(e[:-1] / e[1:])))
    return slopes


# ---------------------------------------------------------------------------
# discrete system


def operator_checks(system, rng, n_samples=100):
    n = system.n
    A, Aadj = system.A, system.A_adj
    worst = 0.0
    for _ in range(n_samples):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        worst = max(worst, abs((A @ x) @ y - x @ (Aadj @ y)) / (np.linalg.norm(x) * np.linalg.norm(y)))
    lam0 = system.lambda0
    low = np.inf
    for _ in range(n_samples):
        x = rng.standard_normal(n)
        low = min(low, (lam0 * x @ x - x @ A @ x) / (x @ x))
    plate = system.plate
    ev = np.linalg.eigvals(disc.assemble_plate_only(plate))
    a1, a2 = plate.a1, plate.a2
    root = np.sqrt((a2 / 2.0) ** 2 - a1 + 0j)
    oracle = np.concatenate([-a2 / 2.0 + root, -a2 / 2.0 - root])
    dist = np.abs(ev[:, None] - oracle[None, :]) / np.maximum(np.abs(oracle), 1.0)[None, :]
    perr = max(np.max(np.min(dist, axis=0)), np.max(np.min(dist, axis=1)))
    return [
        _check("operator.adjoint_consistency", worst, 1e-8, "<="),
        _check("operator.dissipativity", low, 0.0, ">="),
        _check("operator.plate_only_eigenvalues", perr, 1e-8, "<="),
    ]


def energy_order(system, x0, T=1.0, dts=(0.02, 0.01, 0.005)):
    res, means = [], []
    for dt in dts:
        tr = sim.integrate_linear(system, None, x0, T, dt)
        res.append(np.max(np.abs(tr.energy_residual)))
        means.append(np.max(np.abs(tr.plate_mean)))
    res = np.array(res)
    return float(np.min(np.log2(res[:-1] / res[1:]))), float(max(means))


def refinement_ratio(cfg_build, base_ratio, gamma):
    """Hautus minimum ratio after refining both resolutions by 50 %."""
    system = cfg_build(1.5)
    rep = hautus_test(system, gamma)
    return rep.min_ratio / base_ratio if base_ratio > 0 else np.inf


def run_battery(pipe, level="full"):
    """All checks for a pipeline (see :mod:`fsidelay.cli`)."""
    cfg = pipe.cfg
    rng = np.random.default_rng(cfg["seed"])
    checks = []
    checks += geometry_checks(rng)
    checks += flat_limit_check(rng)
    checks += divergence_identity_check(rng)
    for name, s in remainder_slopes().items():
        checks.append(_check(f"remainder.slope.{name}", s, 1.9, ">="))

    system = pipe.system
    checks += operator_checks(system, rng)
    pairs = pipe.pairs
    x0 = sim.initial_state(system, 1.0, cfg["seed"], pairs=pairs)
    order, mean = energy_order(pipe.open_system, x0)
    checks.append(_check("simulation.energy_order", order, 1.9, ">="))
    checks.append(_check("simulation.plate_velocity_mean", mean, 1e-10, "<="))

    abscissa = max(p.value.real for p in pairs)
    tr = sim.integrate_linear(system, None, x0, 20.0, 0.05)
    fit = sim.decay_fit(tr, 5.0)
    checks.append(_check("simulation.open_loop_rate_vs_abscissa",
                         abs(fit.rate + abscissa) / abs(abscissa), 0.05, "<="))

    gamma, t0 = cfg["control.gamma"], cfg["control.t0"]
    rep = hautus_test(system, gamma, cfg["control.tol_rel"], pairs)
    checks.append(_check("hautus.min_ratio", rep.min_ratio if rep.passed else 0.0, cfg["control.tol_rel"], ">="))
    toy = hautus_test(MatrixSystem([[1.0]], [[0.0]]), gamma)
    checks.append(_check("hautus.toy_without_control_fails", 0.0 if not toy.passed else 1.0, 0.0, "<="))
    if level == "full":
        ratio = refinement_ratio(pipe.refined_system, rep.min_ratio, gamma)
        checks.append(_check("hautus.refinement_change", abs(ratio - 1.0), 0.2, "<="))

    try:
        law = synthesize(system, gamma, t0, cfg.margin, pairs, cfg["control.tol_rel"])
    except FsiError as exc:
        checks.append(Check("control.synthesis", 0.0, 1.0, ">=", False, str(exc)))
        return checks
    proj = unstable_mode_count(system, gamma, pairs)
    checks.append(_check("control.unstable_modes", proj.count, 1, ">="))
    target = -gamma - cfg.margin + 1e-8
    cl = law.closed_loop_eigenvalues()
    checks.append(_check("control.closed_loop_max_real_part",
                         max(cl.real) if cl.size else -np.inf, target, "<="))
    T, dt = cfg["simulation.T"], cfg["simulation.dt"]
    ta = sim.integrate_linear(system, law, x0, T, dt, form="recursion", store_states=True)
    tb = sim.integrate_linear(system, law, x0, T, dt, form="kernel", store_states=True)
    fit = sim.decay_fit(ta, t0 + 2.0 / gamma)
    checks.append(_check("control.decay_rate_over_gamma", fit.rate / gamma, 0.9, ">="))
    before = ta.times < t0 - 1e-12
    checks.append(_check("control.inactive_before_delay", np.max(np.abs(ta.controls[before])), 0.0, "<="))
    twin = np.max(np.linalg.norm(ta.states - tb.states, axis=1)) / np.max(ta.norm)
    checks.append(_check("control.kernel_vs_recursion", twin, 1e-6, "<="))

    R = cfg["simulation.R"]
    gaps, picard = [], 0
    Tn = min(T, 1.0)
    for r in (R, R / 2.0):
        x_r = sim.initial_state(system, r, cfg["seed"], pairs=pairs)
        try:
            tn = sim.integrate_nonlinear(system, law, x_r, Tn, dt, cfg["simulation.picard_tol"],
                                         cfg["simulation.max_picard"], store_states=True)
        except FsiError as exc:
            checks.append(Check("nonlinear.run", 0.0, 1.0, ">=", False, str(exc)))
            return checks
        tl = sim.integrate_linear(system, law, x_r, Tn, dt, store_states=True)
        gaps.append(np.max(np.linalg.norm(tn.states - tl.states, axis=1)))
        picard = max(picard, tn.info["picard_max"])
    checks.append(_check("nonlinear.gap_slope", np.log2(gaps[0] / gaps[1]), 1.9, ">="))
    checks.append(_check("nonlinear.picard_iterations", picard, cfg["simulation.max_picard"], "<="))
    if level == "full":
        radii = [1.0, 0.5, 0.25, 0.1]
        Rmax, traj, _ = sim.largest_contracting_radius(
            system, law, radii, T, dt, cfg["seed"],
            picard_tol=cfg["simulation.picard_tol"], max_picard=cfg["simulation.max_picard"])
        if Rmax is None:
            checks.append(Check("nonlinear.contracting_radius", 0.0, radii[-1], ">=", False,
                                "no tested radius contracts"))
        else:
            fit = sim.decay_fit(traj, t0 + 2.0 / gamma)
            checks.append(_check("nonlinear.decay_rate_over_gamma", fit.rate / gamma, 0.9, ">=",
                                 f"R={Rmax:g}"))
    return checks


def summarize(checks):
    if not all(c.passed for c in checks):
        failed = ", ".join(c.name for c in checks if not c.passed)
        raise CriterionError(f"criterion failed: {failed}")
