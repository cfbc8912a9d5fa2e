"""Time integration of the open- and closed-loop dynamics.

States are orthonormal coordinates ``x`` of the constrained space, so the
energy norm is Euclidean. The linear dynamics ``x' = A x + B v + f`` is
advanced with the implicit trapezoidal rule; the delayed control is read
from the stored history and is therefore explicit. Nonlinear runs add the
remainder of the transformed system, evaluated from the reconstructed
fields and resolved at each step by Picard iteration.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import discretization as disc
from . import transform_ops as tops
from .delay_control import KernelController, RecursionController, delay_steps
from .errors import ConfigError, InadmissibleProfileError, IntegrationError

MIN_DELAY_STEPS = 4


class DelayBuffer:
    """History of ``(time, state, control)`` samples spanning at least ``span``.

    Parameters
    ----------
    span : float
        Time span that must stay available behind the newest sample.
    order : {"cubic", "linear"}
        Interpolation order of :meth:`query`.
    """

    def __init__(self, span, order="cubic"):
        if order not in ("cubic", "linear"):
            raise ConfigError(f"unknown interpolation order {order!r}")
        self.span = float(span)
        self.order = order
        self.times = []
        self.states = []
        self.controls = []

    def append(self, t, state, control=None):
        if self.times and t <= self.times[-1]:
            raise ValueError("buffer times must increase")
        self.times.append(float(t))
        self.states.append(np.array(state, dtype=float))
        self.controls.append(None if control is None else np.array(control, dtype=float))
        # keep four samples beyond the span for cubic interpolation
        while len(self.times) > 5 and self.times[-1] - self.times[4] > self.span:
            del self.times[0], self.states[0], self.controls[0]

    def query(self, t):
        """Interpolated state at time ``t`` inside the stored window."""
        ts = self.times
        if not ts or t < ts[0] - 1e-12 * max(1.0, abs(t)) or t > ts[-1] + 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"time {t} outside the buffer window")
        i = int(np.searchsorted(ts, t))
        tol = 1e-9 * (ts[1] - ts[0] if len(ts) > 1 else 1.0)
        for j in (i - 1, i):
            if 0 <= j < len(ts) and abs(ts[j] - t) <= tol:
                return self.states[j]
        npts = 4 if self.order == "cubic" else 2
        npts = min(npts, len(ts))
        lo = min(max(i - npts // 2, 0), len(ts) - npts)
        idx = range(lo, lo + npts)
        out = np.zeros_like(self.states[0])
        for j in idx:
            w = 1.0
            for k in idx:
                if k != j:
                    w *= (t - ts[k]) / (ts[j] - ts[k])
            out = out + w * self.states[j]
        return out


@dataclass
class Trajectory:
    """Sampled run: energy norms, control norms and the energy-balance residual.

    ``energy_residual[n]`` is ``E(t_n) - E(0) - int_0^{t_n} (rate)`` with
    the rate computed from the dissipation of the fields and the supplied
    power, integrated with the trapezoidal rule.
    """

    times: np.ndarray
    norm: np.ndarray
    fluid: np.ndarray
    plate_disp: np.ndarray
    plate_vel: np.ndarray
    control: np.ndarray
    energy_residual: np.ndarray
    plate_mean: np.ndarray = None
    states: np.ndarray = field(default=None, repr=False)
    controls: np.ndarray = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    COLUMNS = ("t", "norm", "fluid", "plate_disp", "plate_vel", "control", "energy_residual")

    def rows(self):
        cols = [self.times, self.norm, self.fluid, self.plate_disp, self.plate_vel, self.control,
                self.energy_residual]
        return list(zip(*cols))

    def to_csv(self):
        """CSV text with shortest round-trip float formatting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass(frozen=True)
class DecayFit:
    """Least-squares decay rate of ``log ||W(t)||`` with a two-sigma band."""

    rate: float
    stderr: float
    t_start: float
    t_end: float
    n_samples: int

    @property
    def band(self):
        return (self.rate - 2.0 * self.stderr, self.rate + 2.0 * self.stderr)


def decay_fit(traj, t_start=None, floor=1e-11):
    """Fit ``log ||W(t)|| = c - rate t`` on ``[t_start, T]``.

    Parameters
    ----------
    traj : Trajectory or tuple (times, norms)
    t_start : float, optional
        Start of the window (default: first sample).
    floor : float
        Samples after the norm first drops below ``floor`` times its
        initial value are discarded (round-off plateau).
    """
    if isinstance(traj, Trajectory):
        t, y = traj.times, traj.norm
    else:
        t, y = (np.asarray(a, dtype=float) for a in traj)
    t0 = t[0] if t_start is None else float(t_start)
    scale = np.max(np.abs(y)) if y.size else 0.0
    low = np.flatnonzero((y <= floor * scale) | (y <= 1e-300))
    end = low[0] if low.size else len(t)
    sel = (t >= t0 - 1e-12) & (np.arange(len(t)) < end)
    if np.count_nonzero(sel) < 3:
        raise IntegrationError("decay fit needs at least three positive samples after t_start")
    ts, ly = t[sel], np.log(y[sel])
    tm = ts.mean()
    sxx = np.sum((ts - tm) ** 2)
    slope = np.sum((ts - tm) * (ly - ly.mean())) / sxx
    resid = ly - ly.mean() - slope * (ts - tm)
    n = ts.size
    se = np.sqrt(np.sum(resid**2) / max(n - 2, 1) / sxx)
    return DecayFit(float(-slope), float(se), float(ts[0]), float(ts[-1]), int(n))


# ---------------------------------------------------------------------------
# helpers


def _norm_parts(system, x):
    """Fluid, plate-displacement and plate-velocity energy norms."""
    basis = getattr(system, "basis", None)
    if basis is None:
        return float(np.linalg.norm(x)), 0.0, 0.0, 0.0, 0.0
    vec = basis.from_state(x)
    m = basis.mass
    fl = slice(0, basis.n_fluid)
    parts = [np.sqrt(np.sum(m[s] * vec[s] ** 2)) for s in (fl, basis.xi1, basis.xi2)]
    mean = float(np.mean(basis.Fp @ vec[basis.xi2]))
    return float(np.linalg.norm(x)), float(parts[0]), float(parts[1]), float(parts[2]), mean


def _internal_rate(system, x):
    """Energy rate of the unforced, uncontrolled dynamics.

    Computed from the dissipation of the fields (viscous, friction and
    plate damping) when the stationary flow is at rest, otherwise from the
    quadratic form ``x . A x``.
    """
    if getattr(system, "dissipation", None) is None or np.any(system.state.w):
        return float(x @ system.A @ x)
    d = system.energy_parts(x)
    return -(d["viscous"] + d["friction"] + d["damping"])


def initial_state(system, R, seed=0, n_modes=6, pairs=None):
    """Smooth initial state of energy norm ``R`` from the slowest eigenmodes.

    Real and imaginary parts of the ``n_modes`` rightmost eigenvectors are
    combined with seeded Gaussian weights.
    """
    from .spectral_analysis import compute_spectrum

    if pairs is None:
        pairs = compute_spectrum(system, count=n_modes)
    rng = np.random.default_rng(seed)
    x = np.zeros(system.A.shape[0])
    for p in pairs[:n_modes]:
        a, b = rng.standard_normal(2)
        x += a * p.right.real + b * p.right.imag
    nrm = np.linalg.norm(x)
    if nrm == 0:
        return x
    return R * x / nrm


def forcing_vector(system, interior=None, top=None, bottom=None, plate=None):
    """State-coordinate load of a force triple (fluid, boundary, plate)."""
    basis = system.basis
    return basis.Z.T @ basis.dual_vector(interior, top, bottom, plate)


def _controller(law, dt, n_steps, form):
    if law is None or law.count == 0:
        return None
    if form == "recursion":
        return RecursionController(law, dt)
    if form == "kernel":
        return KernelController(law, dt, n_steps)
    raise ConfigError(f"unknown feedback form {form!r}; expected 'recursion' or 'kernel'")


def _step_size(law, dt):
    if law is None or law.count == 0 or law.t0 == 0:
        return 0, float(dt)
    m, h = delay_steps(law.t0, dt)
    if m < MIN_DELAY_STEPS:
        m, h = delay_steps(law.t0, law.t0 / MIN_DELAY_STEPS)
    return m, h


class _Recorder:
    def __init__(self, system, store_states):
        self.system = system
        self.store = store_states
        self.t, self.rows, self.v, self.xs = [], [], [], []
        self.energy = []
        self.rate = []

    def add(self, t, x, v, supply):
        nrm = _norm_parts(self.system, x)
        self.t.append(t)
        self.rows.append(nrm)
        self.v.append(np.array(v, dtype=float))
        self.energy.append(0.5 * float(x @ x))
        self.rate.append(_internal_rate(self.system, x) + supply)
        if self.store:
            self.xs.append(np.array(x))

    def finish(self, info):
        t = np.array(self.t)
        rows = np.array(self.rows)
        rate = np.array(self.rate)
        integ = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (rate[1:] + rate[:-1]))])
        res = np.array(self.energy) - self.energy[0] - integ
        v = np.array(self.v)
        return Trajectory(
            times=t, norm=rows[:, 0], fluid=rows[:, 1], plate_disp=rows[:, 2], plate_vel=rows[:, 3],
            control=np.linalg.norm(v, axis=1) if v.size else np.zeros(len(t)),
            energy_residual=res, plate_mean=rows[:, 4],
            states=np.array(self.xs) if self.store else None, controls=v, info=info,
        )


# ---------------------------------------------------------------------------
# linear runs


def integrate_linear(system, law, x0, T, dt, forcing=None, boundary_input=None, form="recursion",
                     store_states=False):
    """Implicit trapezoidal integration of ``x' = A x + B (v + g) + f``.

    Parameters
    ----------
    system : DiscreteSystem or MatrixSystem
    law : FeedbackLaw or None
        Delayed feedback; ``None`` gives the open loop.
    x0 : ndarray
        Initial state (orthonormal coordinates).
    T, dt : float
        Horizon and requested step. With an active delay the step is
        adjusted to ``t0 / m`` with an integer ``m >= 4``.
    forcing : callable, optional
        ``f(t)`` in state coordinates (body and plate loads, see
        :func:`forcing_vector`).
    boundary_input : callable, optional
        Open-loop boundary data ``g(t)`` in actuator coordinates, entering
        through the lifted control operator.
    form : {"recursion", "kernel"}
        Realization of the delayed feedback.
    store_states : bool

    Returns
    -------
    Trajectory
    """
    A = np.asarray(system.A, dtype=float)
    n = A.shape[0]
    x = np.array(x0, dtype=float)
    if x.shape != (n,):
        raise ConfigError(f"initial state has shape {x.shape}, expected ({n},)")
    B = np.zeros((n, 0)) if system.B is None else np.asarray(system.B, dtype=float)
    if law is not None and law.count and B.shape[1] != law.n_inputs:
        raise ConfigError("feedback law and system have different numbers of inputs")
    m, h = _step_size(law, dt)
    n_steps = int(np.ceil(T / h - 1e-9))
    ctrl = _controller(law, h, n_steps, form)
    I = np.eye(n)
    Acl = A
    if ctrl is not None and m == 0:
        Acl = A + B @ law.F @ law.Lb.T
    lu = linalg.lu_factor(I - 0.5 * h * Acl)
    Aexp = I + 0.5 * h * Acl
    nin = B.shape[1]
    zero_v = np.zeros(nin)

    def f_at(t):
        return np.zeros(n) if forcing is None else np.asarray(forcing(t), dtype=float)

    def g_at(t):
        return zero_v if boundary_input is None else np.asarray(boundary_input(t), dtype=float)

    buffer = DelayBuffer(max(law.t0, h) if law is not None else h, order="cubic")
    z_hist = []

    def control(k, t, x_now=None):
        if ctrl is None or m == 0:
            return zero_v
        if isinstance(ctrl, RecursionController):
            zd = law.Lb.T @ buffer.query(t - law.t0) if k >= m else None
            return ctrl.value(k, zd)
        return ctrl.value(k, z_hist)

    rec = _Recorder(system, store_states)
    t = 0.0
    buffer.append(t, x)
    if ctrl is not None:
        z_hist.append(law.Lb.T @ x)
    v = control(0, t)
    if ctrl is not None and m == 0:
        v = law.F @ (law.Lb.T @ x)
    f = f_at(t)
    g = g_at(t)
    rec.add(t, x, v, float(x @ (B @ (v + g) + f)))
    for k in range(n_steps):
        t_new = (k + 1) * h
        f_new, g_new = f_at(t_new), g_at(t_new)
        v_new = control(k + 1, t_new)
        rhs = Aexp @ x + 0.5 * h * (B @ (v + g + v_new + g_new) + f + f_new)
        if ctrl is not None and m == 0:
            rhs = Aexp @ x + 0.5 * h * (B @ (g + g_new) + f + f_new)
        x = linalg.lu_solve(lu, rhs)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t = {t_new:g}; reduce dt")
        if ctrl is not None and m == 0:
            v_new = law.F @ (law.Lb.T @ x)
        buffer.append(t_new, x)
        if ctrl is not None:
            z_hist.append(law.Lb.T @ x)
        rec.add(t_new, x, v_new, float(x @ (B @ (v_new + g_new) + f_new)))
        v, f, g = v_new, f_new, g_new
    info = {"dt": h, "delay_steps": m, "steps": n_steps, "form": form if ctrl is not None else "open"}
    return rec.finish(info)


# ---------------------------------------------------------------------------
# nonlinear runs


class _NonlinearLoad:
    """Remainder of the transformed system as a state-coordinate load."""

    def __init__(self, system):
        if system.state is None or system.linear is None:
            raise ConfigError("nonlinear runs need an assembled stationary state")
        self.system = system
        self.basis = system.basis
        self.state = system.state
        self.fit = disc.pressure_fit(self.basis)
        self.nu = system.params["nu"]
        basis = self.basis
        shape_ = system.control
        self.lift = np.zeros((basis.n_full, 0))
        if system.B is not None and shape_ is not None and system.B.shape[1]:
            P = basis.projector
            cols = []
            for j in range(system.B.shape[1]):
                Dp, _ = disc.lifting_particular(system, shape_, j)
                cols.append(Dp - P @ Dp)
            self.lift = np.array(cols).T

    def fields(self, x, v):
        return self.basis.from_state(x) + self.lift @ v

    def __call__(self, x, v, x_dot, v_dot):
        basis, st = self.basis, self.state
        vec = self.fields(x, v)
        vec_t = self.fields(x_dot, v_dot)
        u = basis.fluid_values(vec)
        u_t = basis.fluid_values(vec_t)
        xi = basis.Fp @ vec[basis.xi1]
        xi_t = basis.Fp @ vec[basis.xi2]
        rhs = self.nu * disc.fluid_laplacian(basis, vec) - u_t
        if np.any(st.w):
            G = basis.fluid_gradient(vec)
            Gw = st.grid.grad(st.w)
            rhs = rhs - np.einsum("il...,l...->i...", G, st.w) - np.einsum("il...,l...->i...", Gw, u)
        p = self.fit.values(rhs)
        parts = self.system.linear.parts(vec[basis.xi1], vec[basis.xi2])
        r = tops.nonlinear_remainder(st, u, p, xi, xi_t, u_t, linear=parts)
        return basis.Z.T @ basis.dual_vector(r.interior, r.boundary_top, r.boundary_bottom, r.plate)


def integrate_nonlinear(system, law, x0, T, dt, picard_tol=1e-9, max_picard=25, form="recursion",
                        store_states=False):
    """Closed- or open-loop run of the nonlinear perturbation system.

    At every step the trapezoidal update is solved by Picard iteration on
    the nonlinear load, evaluated at the previous iterate.

    Raises
    ------
    IntegrationError
        If the increments grow over five consecutive iterations, Picard
        does not reach ``picard_tol`` within ``max_picard`` iterations, or
        the plate profile becomes inadmissible.
    """
    A = np.asarray(system.A, dtype=float)
    n = A.shape[0]
    x = np.array(x0, dtype=float)
    B = np.zeros((n, 0)) if system.B is None else np.asarray(system.B, dtype=float)
    load = _NonlinearLoad(system)
    m, h = _step_size(law, dt)
    n_steps = int(np.ceil(T / h - 1e-9))
    ctrl = _controller(law, h, n_steps, form)
    if ctrl is not None and m == 0:
        raise ConfigError("nonlinear runs require a positive delay")
    I = np.eye(n)
    lu = linalg.lu_factor(I - 0.5 * h * A)
    Aexp = I + 0.5 * h * A
    nin = B.shape[1]
    zero_v = np.zeros(nin)
    buffer = DelayBuffer(max(law.t0, h) if law is not None else h)
    z_hist = []

    def control(k, t):
        if ctrl is None:
            return zero_v
        if isinstance(ctrl, RecursionController):
            zd = law.Lb.T @ buffer.query(t - law.t0) if k >= m else None
            return ctrl.value(k, zd)
        return ctrl.value(k, z_hist)

    def evaluate(xx, vv, xdot, vdot, t):
        try:
            return load(xx, vv, xdot, vdot)
        except InadmissibleProfileError as exc:
            raise IntegrationError(f"plate profile inadmissible at t = {t:g}: {exc}") from exc

    rec = _Recorder(system, store_states)
    t = 0.0
    buffer.append(t, x)
    if ctrl is not None:
        z_hist.append(law.Lb.T @ x)
    v = control(0, t)
    xdot = A @ x + B @ v
    f = evaluate(x, v, xdot, zero_v, t)
    xdot = xdot + f
    rec.add(t, x, v, float(x @ (B @ v + f)))
    iters = []
    for k in range(n_steps):
        t_new = (k + 1) * h
        v_new = control(k + 1, t_new)
        vdot = (v_new - v) / h
        base = Aexp @ x + 0.5 * h * (B @ (v + v_new) + f)
        f_new = f
        x_new = linalg.lu_solve(lu, base + 0.5 * h * f_new)
        incs = []
        for it in range(1, max_picard + 1):
            xdot_new = A @ x_new + B @ v_new + f_new
            f_new = evaluate(x_new, v_new, xdot_new, vdot, t_new)
            x_next = linalg.lu_solve(lu, base + 0.5 * h * f_new)
            inc = float(np.linalg.norm(x_next - x_new))
            x_new = x_next
            incs.append(inc)
            if inc <= picard_tol * max(float(np.linalg.norm(x_new)), 1e-300):
                break
            if len(incs) >= 6 and all(incs[-j] > incs[-j - 1] for j in range(1, 6)):
                raise IntegrationError(
                    f"Picard iteration is not contracting at t = {t_new:g}; reduce R or dt"
                )
        else:
            raise IntegrationError(
                f"Picard iteration did not converge in {max_picard} iterations at t = {t_new:g}"
            )
        if not np.all(np.isfinite(x_new)):
            raise IntegrationError(f"non-finite state at t = {t_new:g}")
        iters.append(it)
        x, v, f = x_new, v_new, f_new
        buffer.append(t_new, x)
        if ctrl is not None:
            z_hist.append(law.Lb.T @ x)
        rec.add(t_new, x, v, float(x @ (B @ v + f)))
    info = {"dt": h, "delay_steps": m, "steps": n_steps, "picard_max": max(iters, default=0),
            "picard_mean": float(np.mean(iters)) if iters else 0.0}
    return rec.finish(info)


def largest_contracting_radius(system, law, radii, T, dt, seed=0, **kwargs):
    """First radius (in the given order) whose nonlinear run completes.

    Returns
    -------
    float or None, Trajectory or None, list of (R, message)
    """
    tried = []
    for R in radii:
        x0 = initial_state(system, R, seed)
        try:
            traj = integrate_nonlinear(system, law, x0, T, dt, **kwargs)
        except IntegrationError as exc:
            tried.append((float(R), str(exc)))
            continue
        tried.append((float(R), "contracting"))
        return float(R), traj, tried
    return None, None, tried
