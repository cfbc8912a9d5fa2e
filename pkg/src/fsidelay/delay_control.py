"""Finite-dimensional feedback with a state delay ``t0``.

The feedback acts on the coordinates ``z = Lb^T x`` of the unstable
invariant subspace. For ``t >= t0``

    v(t) = F [ z(t - t0) + int_{t-t0}^{t} exp(A_u (t - s - t0)) B_u v(s) ds ],

which equals ``F exp(-A_u t0) z(t)``: the bracket is the predictor of
``z(t)`` pulled back by ``exp(-A_u t0)``. The closed loop on the unstable
block is therefore similar to ``A_u + B~ F`` with ``B~ = exp(-A_u t0) B_u``,
and ``F`` is obtained by pole placement for ``(A_u, B~)``. For ``t < t0``
the control is zero.

Unrolling the control-history term gives the Volterra form

    v(t) = F [ z(t - t0) + int_0^{t-t0} K(t - t0 - s) z(s) ds ],

whose kernel is computed here for the trapezoidal discretization used by
the simulator, so that both forms produce identical discrete controls.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, signal

from .errors import CriterionError
from .spectral_analysis import compute_spectrum, hautus_test, unstable_mode_count


def artstein_reduce(A_u, B_u, t0):
    """Delay-free input matrix ``B~ = exp(-A_u t0) B_u``."""
    A_u = np.atleast_2d(np.asarray(A_u, dtype=float))
    B_u = np.asarray(B_u, dtype=float).reshape(A_u.shape[0], -1)
    if t0 < 0:
        raise ValueError("delay must be non-negative")
    if t0 == 0:
        return B_u.copy()
    return linalg.expm(-A_u * t0) @ B_u


def controllability_rank(A, B, tol=1e-10):
    """Rank of ``[B, AB, ..., A^(n-1) B]`` (relative singular-value cut)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    if n == 0:
        return 0
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    s = linalg.svdvals(C)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def pole_targets(eigs, gamma, margin):
    """Shift every eigenvalue to ``-(gamma + margin)`` keeping imaginary parts.

    Repeated real targets are spread to the left by 5 % steps so that
    single-input placement stays well posed.
    """
    base = -(gamma + margin)
    out = []
    n_real = 0
    for lam in eigs:
        if abs(lam.imag) > 1e-12 * max(1.0, abs(lam)):
            out.append(complex(base, lam.imag))
        else:
            out.append(base * (1.0 + 0.05 * n_real))
            n_real += 1
    return np.array(out)


def place_poles(A_u, B_t, gamma, margin=0.2, tol=1e-6):
    """Gain ``F`` with ``Re eig(A_u + B_t F) <= -(gamma + margin)``.

    Parameters
    ----------
    A_u : ndarray, shape (N, N)
    B_t : ndarray, shape (N, m)
    gamma : float
    margin : float
    tol : float
        Accepted deviation between assigned and requested poles.

    Returns
    -------
    ndarray, shape (m, N)

    Raises
    ------
    CriterionError
        If the pair is not controllable or placement misses the targets.
    """
    A_u = np.atleast_2d(np.asarray(A_u, dtype=float))
    N = A_u.shape[0]
    B_t = np.asarray(B_t, dtype=float).reshape(N, -1)
    m = B_t.shape[1]
    if N == 0:
        return np.zeros((m, 0))
    eigs = linalg.eigvals(A_u)
    if np.all(eigs.real <= -(gamma + margin)):
        return np.zeros((m, N))
    if controllability_rank(A_u, B_t) < N:
        raise CriterionError("criterion failed: reduced pair is not controllable; synthesis refused")
    targets = pole_targets(eigs, gamma, margin)
    # drop numerically dependent input columns before placement
    U, s, Vt = linalg.svd(B_t, full_matrices=False)
    keep = s > 1e-10 * s[0]
    Bred = U[:, keep] * s[keep]
    if Bred.shape[1] == 1 or N == 1:
        K = _place_single(A_u, Bred[:, :1], targets)
        Kfull = np.zeros((Bred.shape[1], N))
        Kfull[0] = K
        K = Kfull
    else:
        res = signal.place_poles(A_u, Bred, targets, method="YT")
        K = res.gain_matrix
    F_red = -K
    F = Vt[keep].T @ F_red
    got = linalg.eigvals(A_u + B_t @ F)
    dist = np.abs(got[:, None] - targets[None, :])
    rows, cols = optimize.linear_sum_assignment(dist)
    if np.max(dist[rows, cols]) > tol * max(1.0, np.max(np.abs(targets))):
        raise CriterionError(f"pole placement missed its targets: {got} vs {targets}")
    return F


def _place_single(A, b, targets):
    """Ackermann's formula for a single input (also covers N == 1)."""
    N = A.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(A, k) @ b for k in range(N)])
    coeffs = np.real(np.poly(targets))
    phi = sum(c * np.linalg.matrix_power(A, N - k) for k, c in enumerate(coeffs))
    e = np.zeros(N)
    e[-1] = 1.0
    return e @ np.linalg.solve(ctrb, phi)


@dataclass(frozen=True)
class FeedbackLaw:
    """Delayed feedback on the unstable modes.

    Attributes
    ----------
    count : int
        Number of controlled modes ``N_gamma``.
    R, Lb : ndarray
        Right/left real bases of the unstable subspace (``Lb^T R = I``);
        the columns of ``Lb`` are the modes ``Phi_k`` of the Volterra-kernel form.
    A_u, B_u, B_t : ndarray
        Reduced matrices and the delay-free input ``exp(-A_u t0) B_u``.
    F : ndarray, shape (n_inputs, count)
        Gain; its columns are the control directions ``v_k``.
    t0, gamma, margin : float
    """

    count: int
    R: np.ndarray = field(repr=False)
    Lb: np.ndarray = field(repr=False)
    A_u: np.ndarray = field(repr=False)
    B_u: np.ndarray = field(repr=False)
    B_t: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    t0: float = 0.0
    gamma: float = 0.0
    margin: float = 0.0
    n_inputs: int = 0

    @property
    def modes(self):
        """Adjoint modes ``Phi_k`` (columns) in state coordinates."""
        return self.Lb

    @property
    def directions(self):
        """Control directions ``v_k`` (columns) in actuator coordinates."""
        return self.F

    def closed_loop_eigenvalues(self):
        if self.count == 0:
            return np.array([])
        return linalg.eigvals(self.A_u + self.B_t @ self.F)

    def reduce(self, x):
        return self.Lb.T @ x

    def to_json(self):
        def mat(a):
            a = np.atleast_2d(np.asarray(a, dtype=float))
            return {"shape": list(a.shape), "data": [repr(float(v)) for v in a.ravel()]}

        return json.dumps(
            {
                "count": self.count,
                "t0": self.t0,
                "gamma": self.gamma,
                "margin": self.margin,
                "n_inputs": self.n_inputs,
                "A_u": mat(self.A_u),
                "B_u": mat(self.B_u),
                "B_t": mat(self.B_t),
                "F": mat(self.F),
                "R": mat(self.R),
                "Lb": mat(self.Lb),
            },
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)

        def arr(m):
            return np.array([float(v) for v in m["data"]]).reshape(m["shape"])

        return cls(d["count"], arr(d["R"]), arr(d["Lb"]), arr(d["A_u"]), arr(d["B_u"]),
                   arr(d["B_t"]), arr(d["F"]), d["t0"], d["gamma"], d["margin"], d["n_inputs"])


def synthesize(system, gamma, t0, margin=None, pairs=None, tol_rel=1e-6, check_hautus=True):
    """Compose unstable projection, delay reduction and pole placement.

    Parameters
    ----------
    system : DiscreteSystem or MatrixSystem with ``B``
    gamma : float
        Target decay rate.
    t0 : float
        Delay.
    margin : float, optional
        Extra shift beyond ``gamma`` (default ``0.2 gamma``).
    pairs : list of EigenPair, optional
    tol_rel : float
        Hautus threshold.
    check_hautus : bool

    Raises
    ------
    CriterionError
        If the Hautus test fails or synthesis is impossible.
    """
    if system.B is None:
        raise CriterionError("criterion failed: no control operator assembled")
    margin = 0.2 * gamma if margin is None else float(margin)
    if pairs is None:
        pairs = compute_spectrum(system)
    if check_hautus:
        rep = hautus_test(system, gamma, tol_rel, pairs)
        if not rep.passed:
            raise CriterionError(
                f"criterion failed: Hautus test at sigma={gamma:g} (min ratio {rep.min_ratio:.3e})"
            )
    proj = unstable_mode_count(system, gamma, pairs)
    m = np.asarray(system.B).shape[1]
    if proj.count == 0:
        N = 0
        return FeedbackLaw(0, proj.R, proj.Lb, np.zeros((0, 0)), np.zeros((0, m)),
                           np.zeros((0, m)), np.zeros((m, 0)), float(t0), float(gamma), margin, m)
    B_t = artstein_reduce(proj.A_u, proj.B_u, t0)
    F = place_poles(proj.A_u, B_t, gamma, margin)
    return FeedbackLaw(proj.R.shape[1], proj.R, proj.Lb, proj.A_u, proj.B_u, B_t, F,
                       float(t0), float(gamma), margin, m)


# ---------------------------------------------------------------------------
# discrete realizations


def delay_steps(t0, dt):
    """Number of steps ``m`` covering the delay and the adjusted step ``t0 / m``."""
    if t0 == 0:
        return 0, float(dt)
    m = max(1, int(round(t0 / dt)))
    return m, t0 / m


def _weights(m):
    c = np.ones(m + 1)
    c[0] = c[-1] = 0.5
    return c


class RecursionController:
    """Control-history recursion of the delayed law (trapezoidal rule).

    ``value(n, z_delayed)`` returns ``v_n`` given the delayed reduced state
    ``z_{n-m}`` (ignored while ``n < m``); calls must be made for
    ``n = 0, 1, 2, ...`` in order. With ``t0 = 0`` the law is memoryless
    and ``z_delayed`` is the current reduced state.
    """

    def __init__(self, law, dt):
        self.law = law
        self.m, self.h = delay_steps(law.t0, dt)
        m = self.m
        self.c = _weights(m) if m > 0 else np.array([1.0])
        if law.count and m > 0:
            self.g = [linalg.expm(law.A_u * (k * self.h - law.t0)) @ law.B_u for k in range(m + 1)]
            self.lhs = np.eye(law.n_inputs) - self.h * self.c[0] * law.F @ self.g[0]
        self.v = []

    def value(self, n, z_delayed):
        law = self.law
        if law.count == 0 or n < self.m:
            v = np.zeros(law.n_inputs)
        elif self.m == 0:
            v = law.F @ z_delayed
        else:
            acc = np.array(z_delayed, dtype=float)
            for k in range(1, self.m + 1):
                if n - k >= self.m:
                    acc = acc + self.h * self.c[k] * self.g[k] @ self.v[n - k]
            v = np.linalg.solve(self.lhs, law.F @ acc)
        self.v.append(v)
        return v


@dataclass(frozen=True)
class KernelTable:
    """Reduced Volterra kernel ``K(lag)`` on the lags ``0, dt, 2 dt, ...``.

    The state-space kernel acting on the full state is ``R K(lag) Lb^T``.
    """

    dt: float
    values: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    Lb: np.ndarray = field(repr=False)

    @property
    def lags(self):
        return self.dt * np.arange(self.values.shape[0])

    def at(self, lag):
        """Linear interpolation in the lag; zero for negative lags."""
        lag = float(lag)
        if lag < 0:
            return np.zeros(self.values.shape[1:])
        s = lag / self.dt
        i = int(np.floor(s))
        if i >= self.values.shape[0] - 1:
            return self.values[-1]
        w = s - i
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    def sample(self, t, s):
        """``K(t, s) = K(t - s)`` for ``s <= t``, zero otherwise (reduced)."""
        return self.at(t - s) if s <= t else np.zeros(self.values.shape[1:])

    def full(self, t, s):
        """Kernel acting on full states, ``R K(t - s) Lb^T``."""
        return self.R @ self.sample(t, s) @ self.Lb.T


def export_kernel(law, dt, n_lags):
    """Kernel of the unrolled recursion for step ``dt`` and ``n_lags`` lags.

    The discrete resolvent ``Psi`` of the control-history recursion gives
    ``K(0) = (Psi_0 - I) / dt`` and ``K(q dt) = Psi_q / dt``.
    """
    m, h = delay_steps(law.t0, dt)
    N = law.count
    if N == 0 or m == 0:
        return KernelTable(h, np.zeros((max(n_lags, 1), N, N)), law.R, law.Lb)
    c = _weights(m)
    g = [linalg.expm(law.A_u * (k * h - law.t0)) @ law.B_u for k in range(m + 1)]
    gF = [h * c[k] * g[k] @ law.F for k in range(m + 1)]
    Psi0 = np.linalg.inv(np.eye(N) - gF[0])
    Psi = [Psi0]
    for q in range(1, n_lags):
        acc = np.zeros((N, N))
        for k in range(1, min(q, m) + 1):
            acc += gF[k] @ Psi[q - k]
        Psi.append(Psi0 @ acc)
    vals = np.array(Psi) / h
    vals[0] -= np.eye(N) / h
    return KernelTable(h, vals, law.R, law.Lb)


class KernelController:
    """Feedback evaluated through the exported Volterra kernel."""

    def __init__(self, law, dt, n_steps):
        self.law = law
        self.m, self.h = delay_steps(law.t0, dt)
        self.table = export_kernel(law, dt, n_steps + 1)

    def value(self, n, z_hist):
        law = self.law
        if law.count == 0 or n < self.m:
            return np.zeros(law.n_inputs)
        if self.m == 0:
            return law.F @ z_hist[n]
        q = n - self.m
        acc = np.array(z_hist[q], dtype=float)
        K = self.table.values
        Zs = np.array(z_hist[: q + 1])
        acc = acc + self.h * np.einsum("jab,jb->a", K[q::-1][: q + 1], Zs)
        return law.F @ acc
