"""Operators of the moving-boundary problem rewritten on a fixed reference
domain ``Omega(eta_S)`` and their splitting into a part linear in the
displacement perturbation and a quadratically small remainder.

The reference is described by a :class:`~fsidelay.fluid_grid.FluidGrid`
whose profile is the stationary displacement ``eta_S``. For a current
profile ``eta = eta_S + xi`` the map ``X`` sends the reference to
``Omega(eta)`` and ``Y`` is its inverse. Velocities are related by the
Piola transform ``u~ = Cof(grad X)^T U(X)`` and pressures by
``p~ = P(X)``.

Index conventions (2D): component ``0`` is horizontal, ``1`` vertical.
Matrix fields have shape ``(2, 2, nz + 1, nx)``; ``G[i, l] = d u_i / d y_l``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedError, InadmissibleProfileError
from .fluid_grid import FluidGrid
from .geometry import ADMISSIBILITY_THRESHOLD, PlateProfile
from .grids import fourier_derivative

EYE = np.eye(2)


def _profile_values(grid, eta):
    if isinstance(eta, PlateProfile):
        return np.asarray(eta.values, dtype=float)
    vals = np.asarray(eta, dtype=float)
    if vals.shape != (grid.nx,):
        raise ValueError(f"profile has shape {vals.shape}, expected ({grid.nx},)")
    return vals


def _mm(A, B):
    """Pointwise product of matrix fields."""
    return np.einsum("ij...,jk...->ik...", A, B)


def _mv(A, v):
    return np.einsum("ij...,j...->i...", A, v)


@dataclass(frozen=True)
class FluidField:
    """Velocity (and optional pressure) samples on a reference grid."""

    grid: FluidGrid
    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != (2,) + self.grid.shape:
            raise ValueError(f"velocity has shape {u.shape}, expected {(2,) + self.grid.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("velocity samples must be finite")
        object.__setattr__(self, "u", u)
        if self.p is not None:
            p = np.asarray(self.p, dtype=float)
            if p.shape != self.grid.shape:
                raise ValueError("pressure shape does not match grid")
            object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class StationaryState:
    """Stationary flow around which the dynamics is linearized.

    Attributes
    ----------
    grid : FluidGrid
        Grid of ``Omega(eta_S)``; its reference profile is ``eta_S``.
    w, p : ndarray
        Stationary velocity ``(2, nz + 1, nx)`` and pressure ``(nz + 1, nx)``.
    nu, alpha, delta, beta1, beta2 : float
        Viscosity, plate rigidity, plate damping, bottom and top friction.
    forcing : callable, optional
        Stationary body force ``f_S(y1, y3) -> (2, ...)``; used in the
        transformed source term ``det(grad X) f_S(X) - f_S``.
    forcing_dz : callable, optional
        Vertical derivative of ``forcing`` (spectral derivative if omitted).
    residual : float
        Norm of the discrete stationary residual reported by the solver.
    """

    grid: FluidGrid
    w: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    nu: float = 0.1
    alpha: float = 1.0
    delta: float = 0.5
    beta1: float = 0.1
    beta2: float = 0.1
    forcing: object = field(default=None, repr=False)
    forcing_dz: object = field(default=None, repr=False)
    residual: float = 0.0
    coefficients: np.ndarray = field(default=None, repr=False)

    @property
    def eta(self):
        return self.grid.eta_ref

    @classmethod
    def at_rest(cls, grid, **params):
        """Zero flow, zero pressure and the grid's reference profile."""
        return cls(grid, np.zeros((2,) + grid.shape), np.zeros(grid.shape), **params)

    def forcing_values(self, y1, y3):
        if self.forcing is None:
            return np.zeros((2,) + np.shape(y1))
        return np.asarray(self.forcing(y1, y3), dtype=float)


@dataclass(frozen=True)
class NonlinearResidual:
    """Right-hand sides of the perturbation system beyond its linear part.

    Attributes
    ----------
    interior : ndarray, shape (2, nz + 1, nx)
        Fluid force.
    boundary_top, boundary_bottom : ndarray, shape (2, nx)
        Tangential boundary forcing on the plate and on the bottom wall.
    plate : ndarray, shape (nx,)
        Mean-zero plate force.
    """

    interior: np.ndarray
    boundary_top: np.ndarray
    boundary_bottom: np.ndarray
    plate: np.ndarray

    def norm(self, grid):
        """Combined L2 norm of the three components."""
        vol = grid.integrate(np.sum(self.interior**2, axis=0))
        bnd = grid.boundary_integrate(np.sum(self.boundary_top**2, axis=0))
        bnd += grid.boundary_integrate(np.sum(self.boundary_bottom**2, axis=0))
        pl = grid.boundary_integrate(self.plate**2)
        return float(np.sqrt(vol + bnd + pl))


class TransformGeometry:
    """Geometric coefficients of ``X = X_{eta_S, eta}`` on the reference grid.

    Every attribute is the stated quantity evaluated at ``X(y)`` for the
    reference grid points ``y``:

    ``det``      ``det grad X``
    ``gradX``    ``grad X`` (``[i, j] = d X_i / d y_j``)
    ``Yx``       ``grad Y(X)`` (``[l, j] = d Y_l / d x_j``)
    ``a``        ``Cof(grad Y)^T (X) = grad X / det``
    ``b``        ``Cof(grad X)``
    ``da``       ``[j, i, k] = d a_ik / d x_j``
    ``dda``      ``[j, q, i, k] = d^2 a_ik / d x_j d x_q``
    ``d2Y``      ``[l, j, q] = d^2 Y_l / d x_j d x_q``
    ``S``        ``[j] = sum_m d/dy_m (d Y_m / d x_j)(X(y))``
    ``ddet``     ``[m] = d det / d y_m``
    ``Yt``, ``at`` time derivatives ``d_t Y(X)`` and ``d_t a(X)`` (only if a
    plate velocity was supplied).

    Parameters
    ----------
    grid : FluidGrid
        Reference grid (profile ``eta_S``).
    eta : PlateProfile or ndarray
        Current profile at the horizontal nodes.
    eta_t : ndarray, optional
        Plate velocity ``d_t eta`` at the horizontal nodes.
    threshold : float
        Admissibility threshold on ``1 + eta``.
    """

    def __init__(self, grid, eta, eta_t=None, threshold=ADMISSIBILITY_THRESHOLD):
        self.grid = grid
        eta = _profile_values(grid, eta)
        if np.min(1.0 + eta) < threshold:
            raise InadmissibleProfileError(
                f"current profile is inadmissible: min(1 + eta) = {np.min(1.0 + eta):.3e}"
            )
        self.eta = eta
        L = grid.L
        h_ref = grid.thickness
        hs_ref = grid.thickness_slope
        eta_s = fourier_derivative(eta, L)
        self.eta_s = eta_s
        _, y3 = grid.coordinates()
        r = np.broadcast_to((1.0 + eta) / h_ref, grid.shape)
        rs = np.broadcast_to((eta_s * h_ref - hs_ref * (1.0 + eta)) / h_ref**2, grid.shape)
        one = np.ones(grid.shape)
        zero = np.zeros(grid.shape)
        self.det = r
        self.gradX = np.array([[one, zero], [y3 * rs, r]])
        self.Yx = np.array([[one, zero], [-y3 * rs / r, 1.0 / r]])
        self.a = np.array([[1.0 / r, zero], [y3 * rs / r, one]])
        self.b = np.array([[r, -y3 * rs], [zero, one]])
        self.ddet = grid.grad(r)
        # derivatives with respect to the physical variable x at X(y)
        ga = grid.grad(self.a)  # [i, k, l]
        self.da = np.einsum("ikl...,lj...->jik...", ga, self.Yx)
        gda = grid.grad(self.da)  # [j, i, k, m]
        self.dda = np.einsum("jikm...,mq...->jqik...", gda, self.Yx)
        gY = grid.grad(self.Yx)  # [l, j, m]
        self.d2Y = np.einsum("ljm...,mq...->ljq...", gY, self.Yx)
        self.S = np.einsum("mjm...->j...", gY)
        self.Yt = None
        self.at = None
        self.eta_t = None
        if eta_t is not None:
            eta_t = np.asarray(eta_t, dtype=float)
            if eta_t.shape != (grid.nx,):
                raise ValueError("plate velocity has wrong shape")
            self.eta_t = eta_t
            rt = np.broadcast_to(eta_t / h_ref, grid.shape)
            rst = np.broadcast_to(
                (fourier_derivative(eta_t, L) * h_ref - hs_ref * eta_t) / h_ref**2, grid.shape
            )
            self.Yt = np.array([zero, -y3 * eta_t / (1.0 + eta)])
            At = np.array([[-rt / r**2, zero], [y3 * (rst * r - rs * rt) / r**2, zero]])
            self.at = At + np.einsum("ikl...,l...->ik...", ga, self.Yt)

    def top_normal_current(self):
        """Unnormalized and unit normals of ``Gamma(eta)``, shape (2, nx)."""
        N = np.stack([-self.eta_s, np.ones_like(self.eta_s)])
        return N, N / np.linalg.norm(N, axis=0)


def transform_geometry(grid, eta, eta_t=None):
    """Build a :class:`TransformGeometry` (convenience wrapper)."""
    return TransformGeometry(grid, eta, eta_t)


def stress_tensor(grid, u, p, nu):
    """Cauchy stress ``-p I + 2 nu D(u)`` on the grid, shape (2, 2, nz + 1, nx)."""
    G = grid.grad(u)
    T = nu * (G + np.swapaxes(G, 0, 1))
    if p is not None:
        T = T - np.asarray(p)[None, None] * EYE[:, :, None, None]
    return T


def op_K(geom, u):
    """``K_eta u = (grad X) u``."""
    return _mv(geom.gradX, u)


def op_L_defect(geom, u, nu):
    """Viscous defect ``-nu (Delta - L_eta) u``.

    Equals ``nu det(grad X) (Delta U + grad div U)(X) - nu (Delta u +
    grad div u)`` for the Piola pair ``(U, u)``; vanishes when the current
    profile equals the reference one.
    """
    g = geom.grid
    G = g.grad(u)  # [k, l]
    H = g.grad(G)  # [k, l, m]
    det, a, Yx, da = geom.det, geom.a, geom.Yx, geom.da
    YY = np.einsum("mj...,lj...->ml...", Yx, Yx)
    c1 = det * np.einsum("ik...,ml...->ikml...", a, YY)
    c1 -= np.einsum("ik,ml->ikml", EYE, EYE)[..., None, None]
    # second-order terms with the transposed coupling a_jk Y_mi Y_lj
    c2 = det * np.einsum("jk...,mi...,lj...->ikml...", a, Yx, Yx)
    c2 -= np.einsum("jk,mi,jl->ikml", EYE, EYE, EYE)[..., None, None]
    out = nu * np.einsum("ikml...,klm...->i...", c1 + c2, H)
    t3 = np.einsum("jik...,lj...->ikl...", da, Yx) + np.einsum("ijk...,lj...->ikl...", da, Yx)
    t4 = (
        np.einsum("jik...,lj...->ikl...", da, Yx)
        + np.einsum("ik...,ljj...->ikl...", a, geom.d2Y)
        + np.einsum("jjk...,li...->ikl...", da, Yx)
        + np.einsum("jk...,lji...->ikl...", a, geom.d2Y)
    )
    out += nu * det * np.einsum("ikl...,kl...->i...", t3 + t4, G)
    t5 = np.einsum("jjik...->ik...", geom.dda) + np.einsum("jijk...->ik...", geom.dda)
    out += nu * det * np.einsum("ik...,k...->i...", t5, u)
    return out


def op_L(geom, u, nu):
    """Transformed viscous operator ``-nu Delta u - (defect)``.

    Reduces to ``-nu Delta u`` when ``eta`` equals the reference profile
    and to ``-nu det(grad X) (Delta U)(X)`` for divergence-free fields.
    """
    return -nu * geom.grid.laplacian(u) - op_L_defect(geom, u, nu)


def op_G(geom, p):
    """``(grad - G_eta) p = (I - b) grad p``."""
    gp = geom.grid.grad(p)
    return gp - _mv(geom.b, gp)


def op_M(geom, u):
    """Transport term ``M_eta u`` from the moving map; needs a plate velocity."""
    if geom.Yt is None:
        raise ValueError("op_M requires the geometry to be built with a plate velocity")
    G = geom.grid.grad(u)
    out = -np.einsum("ik...,kl...,l...->i...", geom.a, G, geom.Yt) * geom.det
    out -= geom.det * np.einsum("ik...,k...->i...", geom.at, u)
    return out


def op_N(geom, u):
    """Transformed convection ``N_eta u = -det (U . grad U)(X)``."""
    G = geom.grid.grad(u)
    det, a = geom.det, geom.a
    out = -det * np.einsum("kl...,kij...,l...,j...->i...", a, geom.da, u, u)
    out -= det * np.einsum("kl...,ij...,mk...,l...,jm...->i...", a, a, geom.Yx, u, G)
    return out


def op_E(geom, u, nu):
    """Matrix field ``E_eta(u)`` whose divergence carries the viscous defect."""
    g = geom.grid
    G = g.grad(u)  # [k, l]
    det, a, Yx, da = geom.det, geom.a, geom.Yx, geom.da
    YY = np.einsum("mj...,lj...->ml...", Yx, Yx)
    c1 = det * np.einsum("ik...,ml...->imkl...", a, YY)
    c1 -= np.einsum("ik,ml->imkl", EYE, EYE)[..., None, None]
    c2 = det * np.einsum("jk...,mi...,lj...->imkl...", a, Yx, Yx)
    c2 -= np.einsum("jk,mi,jl->imkl", EYE, EYE, EYE)[..., None, None]
    out = nu * np.einsum("imkl...,kl...->im...", c1 + c2, G)
    c3 = np.einsum("jik...,mj...->imk...", da, Yx) + np.einsum("ijk...,mj...->imk...", da, Yx)
    out += nu * det * np.einsum("imk...,k...->im...", c3, u)
    return out


def op_F1(geom, u, nu):
    """Lower-order field ``F1`` with ``div E(u) = -nu (Delta - L) u + F1(u)``.

    The expression is the exact product-rule expansion of ``div E``: the
    term weighted by ``d det / d y_m``, the terms weighted by
    ``S_j = sum_m d_m (dY_m/dx_j)``, and the commutator
    ``nu det sum (d a_jk/dx_i Y_lj - d a_jk/dx_j Y_li) d_l u_k``.
    """
    g = geom.grid
    G = g.grad(u)
    det, a, Yx, da, S = geom.det, geom.a, geom.Yx, geom.da, geom.S
    YY = np.einsum("mj...,lj...->ml...", Yx, Yx)
    c1 = np.einsum("ik...,ml...->imkl...", a, YY) + np.einsum(
        "jk...,mi...,lj...->imkl...", a, Yx, Yx
    )
    c3 = np.einsum("jik...,mj...->imk...", da, Yx) + np.einsum("ijk...,mj...->imk...", da, Yx)
    inner = np.einsum("imkl...,kl...->im...", c1, G) + np.einsum("imk...,k...->im...", c3, u)
    out = nu * np.einsum("m...,im...->i...", geom.ddet, inner)
    s_terms = np.einsum("j...,ik...,lj...->ikl...", S, a, Yx) + np.einsum(
        "i...,jk...,lj...->ikl...", S, a, Yx
    )
    z_terms = np.einsum("j...,jik...->ik...", S, da) + np.einsum("j...,ijk...->ik...", S, da)
    comm = np.einsum("ijk...,lj...->ikl...", da, Yx) - np.einsum("jjk...,li...->ikl...", da, Yx)
    out += nu * det * (
        np.einsum("ikl...,kl...->i...", s_terms + comm, G) + np.einsum("ik...,k...->i...", z_terms, u)
    )
    return out


def div_matrix(grid, E):
    """Row-wise divergence ``(div E)_i = sum_m d E_im / d y_m``."""
    gE = grid.grad(E)  # [i, m, q]
    return np.einsum("imm...->i...", gE)


def plate_force_H(geom, u, nu):
    """Change of the plate force caused by the deformation, mean-zero.

    Parameters
    ----------
    geom : TransformGeometry
    u : ndarray, shape (2, nz + 1, nx)
        Velocity on the reference domain (pressure cancels identically).
    nu : float

    Returns
    -------
    ndarray, shape (nx,)
    """
    g = geom.grid
    G = g.top(g.grad(u))  # [k, l, x]
    ut = g.top(u)
    a = g.top(geom.a)
    Yx = g.top(geom.Yx)
    da = g.top(geom.da)  # [j, i, k, x]
    Nt, _ = geom.top_normal_current()
    N, _ = g.top_normal()
    v = 1  # vertical index
    t1 = -np.einsum("jk...,j...,k...->...", da[:, v, :] + da[v, :, :], Nt, ut)
    t2 =np.einsum("j...,j...->...", N, G[v, :]) - np.einsum("k...,lj...,j...,kl...->...", a[v], Yx, Nt, G)
    t3 = np.einsum("j...,j...->...", N, G[:, v]) - np.einsum("jk...,l...,j...,kl...->...", a, Yx[:, v], Nt, G)
    out = nu * (t1 + t2 + t3)
    return out - out.mean()


def _tangential(vec, n):
    return vec - np.sum(vec * n, axis=0) * n


def boundary_ops(geom, u, eta_t, nu, beta1, beta2):
    """Boundary operators of the transformed Navier condition.

    Parameters
    ----------
    geom : TransformGeometry
    u : ndarray, shape (2, nz + 1, nx)
    eta_t : ndarray or None
        Plate velocity (mean-zero part is used); ``None`` means zero.
    nu, beta1, beta2 : float

    Returns
    -------
    dict
        ``W_top``, ``W_bottom`` (vector traces of the current-domain
        traction operator), ``V_top``, ``V_bottom`` (tangential mismatch
        scalars) and ``G_top``, ``G_bottom`` (tangential lifts with
        ``G . n = 0``).
    """
    g = geom.grid
    nx = g.nx
    eta_t = np.zeros(nx) if eta_t is None else np.asarray(eta_t, dtype=float)
    eta_t = eta_t - eta_t.mean()
    Gr = g.grad(u)
    out = {}
    Nref, nref = g.top_normal()
    Ncur, ncur = geom.top_normal_current()
    sides = {
        "top": dict(
            trace=g.top,
            n_cur=ncur,
            n_ref=nref,
            tau_ref=np.stack([np.ones(nx), g.thickness_slope]),
            tau_cur=np.stack([np.ones(nx), geom.eta_s]),
            beta=beta2,
            plate=np.stack([np.zeros(nx), eta_t]),
        ),
        "bottom": dict(
            trace=g.bottom,
            n_cur=np.stack([np.zeros(nx), -np.ones(nx)]),
            n_ref=np.stack([np.zeros(nx), -np.ones(nx)]),
            tau_ref=np.stack([np.ones(nx), np.zeros(nx)]),
            tau_cur=np.stack([np.ones(nx), np.zeros(nx)]),
            beta=beta1,
            plate=np.zeros((2, nx)),
        ),
    }
    for name, s in sides.items():
        tr = s["trace"]
        ut, Gt = tr(u), tr(Gr)
        a, Yx, da = tr(geom.a), tr(geom.Yx), tr(geom.da)
        n = s["n_cur"]
        W = nu * np.einsum("j...,jkm...,m...->k...", n, da, ut)
        W += nu * np.einsum("j...,kjm...,m...->k...", n, da, ut)
        W += s["beta"] * (_mv(a, ut) - s["plate"])
        W += nu * np.einsum("j...,km...,mq...,qj...->k...", n, a, Gt, Yx)
        W += nu * np.einsum("j...,jm...,mq...,qk...->k...", n, a, Gt, Yx)
        traction = nu * np.einsum("kq...,q...->k...", Gt + np.swapaxes(Gt, 0, 1), s["n_ref"])
        traction += s["beta"] * (ut - s["plate"])
        V = np.sum(traction * (s["tau_ref"] - s["tau_cur"]), axis=0)
        V += np.sum((traction - W) * s["tau_cur"], axis=0)
        tau = s["tau_ref"]
        Glift = V * tau / np.sum(tau**2, axis=0)
        out[f"W_{name}"] = W
        out[f"V_{name}"] = V
        out[f"G_{name}"] = Glift
    return out


# ---------------------------------------------------------------------------
# full perturbation residual and its linear part


def full_fluid_residual(state, u, p, xi, xi_t, u_t=None):
    """Right-hand side ``F(u, p, xi)`` of the perturbed momentum equation.

    Parameters
    ----------
    state : StationaryState
    u, p : ndarray
        Velocity and pressure perturbations on the reference grid.
    xi, xi_t : ndarray, shape (nx,)
        Displacement perturbation and plate velocity.
    u_t : ndarray, optional
        Time derivative of ``u`` (zero if omitted).
    """
    g = state.grid
    eta = g.eta_ref.values + xi
    geom = TransformGeometry(g, eta, xi_t)
    U = u + state.w
    P = p + state.p
    out = op_L_defect(geom, U, state.nu)
    out += op_G(geom, P)
    out += op_M(geom, U)
    out += op_N(geom, U)
    Gw = g.grad(state.w)
    Gu = g.grad(u)
    out += np.einsum("il...,l...->i...", Gw, u) + np.einsum("il...,l...->i...", Gu, state.w)
    out += np.einsum("il...,l...->i...", Gw, state.w)
    if u_t is not None:
        out += u_t - op_K(geom, u_t)
    if state.forcing is not None:
        y1, y3 = g.coordinates()
        X3 = y3 * geom.det
        out += geom.det * state.forcing_values(y1, X3) - state.forcing_values(y1, y3)
    return out


def gateaux(fun, direction_scale, tol=1e-6, step=1e-4):
    """Directional derivative ``d/dh fun(h)`` at ``h = 0``.

    Central differences at ``h``, ``h / 2`` and ``h / 4`` give two
    Richardson extrapolants; their agreement is the error estimate.
    ``direction_scale`` is the sup-norm of the direction so that the
    perturbation amplitude is ``step``.

    Raises
    ------
    IllConditionedError
        If the two extrapolants disagree by more than ``tol`` relative.
    """
    if direction_scale == 0:
        return np.zeros_like(np.asarray(fun(0.0)))
    h = step / direction_scale
    values = {}

    def central(hh):
        fp, fm = np.asarray(fun(hh)), np.asarray(fun(-hh))
        values[hh] = max(np.max(np.abs(fp)), np.max(np.abs(fm)))
        return (fp - fm) / (2.0 * hh)

    d1, d2, d4 = central(h), central(h / 2.0), central(h / 4.0)
    rich1 = (4.0 * d2 - d1) / 3.0
    rich2 = (4.0 * d4 - d2) / 3.0
    # round-off level of the finest central quotient sets an absolute floor
    floor = 1e3 * np.finfo(float).eps * values[h / 4.0] / (h / 4.0)
    scale = max(np.max(np.abs(rich2)), floor, np.finfo(float).tiny)
    err = np.max(np.abs(rich1 - rich2))
    if err > tol * scale:
        raise IllConditionedError(
            f"Gateaux derivative ill-conditioned: extrapolants differ by {err / scale:.2e} relative"
        )
    return rich2


def _sup(*arrays):
    return max(float(np.max(np.abs(a))) if a is not None else 0.0 for a in arrays)


def linear_E(state, xi):
    """``L1(xi)``: Gateaux derivative of ``E_{eta_S + h xi}(w_S)``."""
    g = state.grid
    base = g.eta_ref.values

    def f(h):
        return op_E(TransformGeometry(g, base + h * xi), state.w, state.nu)

    return gateaux(f, _sup(xi))


def linear_F(state, xi, xi_t):
    """Gateaux derivative of ``F(0, 0, h xi)`` with plate velocity ``h xi_t``."""
    g = state.grid
    z_u = np.zeros((2,) + g.shape)
    z_p = np.zeros(g.shape)

    def f(h):
        return full_fluid_residual(state, z_u, z_p, h * xi, h * xi_t)

    return gateaux(f, _sup(xi, xi_t))


def linear_L2(state, xi, xi_t):
    """``L2(xi, xi_t) = div L1(xi) - dF(0, 0, .)[xi, xi_t]``."""
    L1 = linear_E(state, xi)
    return div_matrix(state.grid, L1) - linear_F(state, xi, xi_t)


def boundary_lift(state, u, eta, eta_t=None):
    """Tangential lift ``G(u, eta)`` on (top, bottom)."""
    geom = TransformGeometry(state.grid, eta)
    ops = boundary_ops(geom, u, eta_t, state.nu, state.beta1, state.beta2)
    return ops["G_top"], ops["G_bottom"]


def linear_G(state, xi):
    """Gateaux derivative of ``G(w_S, eta_S + h xi)`` (top, bottom)."""
    g = state.grid
    base = g.eta_ref.values

    def f(h):
        return np.stack(boundary_lift(state, state.w, base + h * xi))

    d = gateaux(f, _sup(xi))
    return d[0], d[1]


def normal_traction_trace(grid, E):
    """``(E n)`` on (top, bottom) with the reference unit normals."""
    _, n_top = grid.top_normal()
    top = np.einsum("ij...,j...->i...", grid.top(E), n_top)
    bottom = -grid.bottom(E)[:, 1]
    return top, bottom


def linear_L3(state, xi):
    """``L3(xi) = -dG[xi] - [L1(xi) n]_tau`` on (top, bottom)."""
    g = state.grid
    L1 = linear_E(state, xi)
    Gt, Gb = linear_G(state, xi)
    En_t, En_b = normal_traction_trace(g, L1)
    _, n_top = g.top_normal()
    n_bot = np.stack([np.zeros(g.nx), -np.ones(g.nx)])
    return -Gt - _tangential(En_t, n_top), -Gb - _tangential(En_b, n_bot)


def trace_adjoint(grid, vec_top):
    """``T^* zeta = M [sqrt(1 + |eta_S'|^2) zeta . e_3]`` on the plate."""
    N, _ = grid.top_normal()
    val = np.linalg.norm(N, axis=0) * vec_top[1]
    return val - val.mean()


def linear_H(state, xi):
    """Gateaux derivative of ``H(w_S, eta_S + h xi)``."""
    g = state.grid
    base = g.eta_ref.values

    def f(h):
        return plate_force_H(TransformGeometry(g, base + h * xi), state.w, state.nu)

    return gateaux(f, _sup(xi))


def plate_mismatch(state, xi):
    """``dH[xi] + T^*(L1(xi) n)``: part of the linearized plate force not
    carried by ``-T^*(L1 n)``."""
    L1 = linear_E(state, xi)
    En_t, _ = normal_traction_trace(state.grid, L1)
    return linear_H(state, xi) + trace_adjoint(state.grid, En_t)


def linearize(op, state, xi, xi_t=None):
    """Linear part of a transformed map around ``state`` in direction ``xi``.

    Parameters
    ----------
    op : {"L1", "L2", "L21", "L22", "L3", "F", "G", "H"}
    state : StationaryState
    xi : ndarray, shape (nx,)
        Displacement direction.
    xi_t : ndarray, optional
        Plate-velocity direction (``L2``, ``L22`` and ``F``); for ``L22`` the
        velocity direction is taken from ``xi``.
    """
    zero = np.zeros(state.grid.nx)
    xi = np.asarray(xi, dtype=float)
    if op == "L1":
        return linear_E(state, xi)
    if op == "L2":
        return linear_L2(state, xi, zero if xi_t is None else xi_t)
    if op == "L21":
        return linear_L2(state, xi, zero)
    if op == "L22":
        return linear_L2(state, zero, xi)
    if op == "L3":
        return linear_L3(state, xi)
    if op == "F":
        return linear_F(state, xi, zero if xi_t is None else xi_t)
    if op == "G":
        return linear_G(state, xi)
    if op == "H":
        return linear_H(state, xi)
    raise ValueError(f"unknown operator {op!r}")


class LinearParts:
    """Cached linear parts of every channel for a fixed direction."""

    def __init__(self, state, xi, xi_t):
        self.state = state
        self.xi = np.asarray(xi, dtype=float)
        self.xi_t = np.asarray(xi_t, dtype=float)
        self.L1 = linear_E(state, self.xi)
        self.F = linear_F(state, self.xi, self.xi_t)
        self.G = linear_G(state, self.xi)
        self.H = linear_H(state, self.xi)


def remainder_channels(state, u, p, xi, xi_t, u_t=None, linear=None):
    """Every nonlinear channel of the perturbation system.

    Returns
    -------
    dict
        ``N_E`` (matrix field), ``N_F`` and ``calF`` (vector fields),
        ``N_G`` and ``G_u`` (top, bottom tangential fields), ``H_u`` (plate),
        ``taylor`` (source-term Taylor remainder).
    """
    g = state.grid
    xi = np.asarray(xi, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float)
    lin = linear if linear is not None else LinearParts(state, xi, xi_t)
    base = g.eta_ref.values
    eta = base + xi
    geom = TransformGeometry(g, eta, xi_t)
    E = op_E(geom, state.w, state.nu)
    N_E = E - lin.L1
    zu = np.zeros((2,) + g.shape)
    zp = np.zeros(g.shape)
    F0 = full_fluid_residual(state, zu, zp, xi, xi_t)
    N_F = F0 - lin.F - div_matrix(g, N_E)
    calF = full_fluid_residual(state, u, p, xi, xi_t, u_t) - F0
    Gw_t, Gw_b = boundary_lift(state, state.w, eta)
    NE_t, NE_b = normal_traction_trace(g, N_E)
    _, n_top = g.top_normal()
    n_bot = np.stack([np.zeros(g.nx), -np.ones(g.nx)])
    N_G = (
        Gw_t - lin.G[0] + _tangential(NE_t, n_top),
        Gw_b - lin.G[1] + _tangential(NE_b, n_bot),
    )
    G_u = boundary_lift(state, u, eta, xi_t)
    H_u = plate_force_H(geom, u, state.nu)
    H_w = plate_force_H(geom, state.w, state.nu)
    return dict(
        N_E=N_E,
        N_F=N_F,
        calF=calF,
        N_G=N_G,
        G_u=G_u,
        H_u=H_u,
        H_rem=H_w - lin.H,
        taylor=taylor_remainder(state, xi),
    )


def nonlinear_remainder(state, u, p, xi, xi_t, u_t=None, linear=None):
    """Full transformed residual minus its linear part.

    Parameters
    ----------
    state : StationaryState
    u, p : ndarray
        Velocity and pressure perturbation on the reference grid.
    xi, xi_t : ndarray, shape (nx,)
        Displacement perturbation and plate velocity.
    u_t : ndarray, optional
        Time derivative of ``u``.
    linear : LinearParts, optional
        Precomputed linear parts for ``(xi, xi_t)``.

    Returns
    -------
    NonlinearResidual
    """
    g = state.grid
    xi = np.asarray(xi, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float)
    lin = linear if linear is not None else LinearParts(state, xi, xi_t)
    eta = g.eta_ref.values + xi
    interior = full_fluid_residual(state, u, p, xi, xi_t, u_t) - lin.F
    Gt, Gb = boundary_lift(state, u + state.w, eta, xi_t)
    geom = TransformGeometry(g, eta)
    plate = plate_force_H(geom, u + state.w, state.nu) - lin.H
    return NonlinearResidual(interior, Gt - lin.G[0], Gb - lin.G[1], plate)


def taylor_remainder(state, xi):
    """Remainder of ``det f_S(X) - f_S`` beyond ``xi/(1+eta_S) f_S + theta xi d_3 f_S``."""
    g = state.grid
    y1, y3 = g.coordinates()
    if state.forcing is None:
        return np.zeros((2,) + g.shape)
    geom = TransformGeometry(g, g.eta_ref.values + xi)
    fS = state.forcing_values(y1, y3)
    full = geom.det * state.forcing_values(y1, y3 * geom.det) - fS
    theta = y3 / g.thickness
    if state.forcing_dz is not None:
        dz = np.asarray(state.forcing_dz(y1, y3), dtype=float)
    else:
        dz = g.grad(fS)[:, 1]
    lin = xi / g.thickness * fS + theta * xi * dz
    return full - lin
