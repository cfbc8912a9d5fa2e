"""Spectral Galerkin reduction of the linearized fluid-plate system.

The fluid velocity on the flat reference channel ``(0, L) x (0, 1)`` is
expanded in real Fourier functions (``1, cos, sin`` up to ``n_modes / 2``)
times shifted Legendre polynomials of degree ``<= n_vertical``; the plate
displacement and velocity are expanded in the mean-zero Fourier functions.
A coefficient vector is laid out as ``[u1, u3, xi1, xi2]`` with fluid index
``f * (n_vertical + 1) + l`` inside each velocity component.

The state space is the null space of the divergence and normal-coupling
constraints, equipped with an orthonormal basis ``Z`` for the energy inner
product (fluid L2, ``A1^(1/2)``-weighted displacement, L2 plate velocity).
All reduced matrices are expressed in these orthonormal coordinates, so the
state inner product is the Euclidean one.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import AssemblyError, ConfigError, IllConditionedError
from .fluid_grid import FluidGrid
from .geometry import PlateProfile, TorusGrid
from .grids import (
    legendre_diff_coeffs,
    legendre_values,
    real_fourier_diff_coeffs,
    real_fourier_values,
    real_fourier_wavenumbers,
)
from . import transform_ops as tops


# ---------------------------------------------------------------------------
# plate operators


@dataclass(frozen=True)
class PlateOperators:
    """Diagonal plate operators on the mean-zero Fourier functions.

    ``A1`` has symbol ``alpha |k|^4`` and ``A2`` symbol ``delta |k|^2`` where
    ``k`` is the angular wavenumber of each basis function.
    """

    torus: TorusGrid
    alpha: float
    delta: float

    @property
    def wavenumbers(self):
        return real_fourier_wavenumbers(self.torus.L1, self.torus.n_modes // 2)[1:]

    @property
    def a1(self):
        return self.alpha * self.wavenumbers**4

    @property
    def a2(self):
        return self.delta * self.wavenumbers**2

    @property
    def mass(self):
        """L2 Gram diagonal of the mean-zero Fourier functions."""
        return np.full(self.wavenumbers.size, self.torus.L1 / 2.0)

    def A1_power(self, p):
        """Matrix of ``A1^p`` in the Fourier basis (diagonal)."""
        return np.diag(self.a1**p)

    @property
    def A1(self):
        return np.diag(self.a1)

    @property
    def A2(self):
        return np.diag(self.a2)


def assemble_plate_ops(alpha, delta, torus):
    """Plate stiffness ``A1`` and damping ``A2`` for the torus ``torus``.

    Parameters
    ----------
    alpha : float
        Rigidity, must be positive.
    delta : float
        Damping coefficient, non-negative.
    torus : TorusGrid
    """
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if delta < 0:
        raise ConfigError("delta must be non-negative")
    return PlateOperators(torus, float(alpha), float(delta))


# ---------------------------------------------------------------------------
# basis


class GalerkinBasis:
    """Tensor Fourier x Legendre basis and the constrained state space.

    Parameters
    ----------
    torus : TorusGrid
        Horizontal grid (``dim == 2``); ``n_modes / 2`` is the largest
        wavenumber of the expansion.
    n_vertical : int
        Largest Legendre degree.
    alpha : float
        Plate rigidity (enters the energy inner product).
    """

    def __init__(self, torus, n_vertical, alpha=1.0):
        if torus.dim != 2:
            raise AssemblyError("the Galerkin discretization supports dim == 2 only")
        if n_vertical < 4:
            raise AssemblyError("n_vertical must be at least 4")
        self.torus = torus
        self.L = torus.L1
        self.kmax = torus.n_modes // 2
        self.n_vertical = int(n_vertical)
        self.nF = 2 * self.kmax + 1
        self.nL = self.n_vertical + 1
        self.n_comp = self.nF * self.nL
        self.n_fluid = 2 * self.n_comp
        self.n_plate = self.nF - 1
        self.n_full = self.n_fluid + 2 * self.n_plate
        self.alpha = float(alpha)
        self.grid = FluidGrid(torus, 3 * self.n_vertical + 2)
        x, z = self.grid.x, self.grid.z
        self.Fx = [real_fourier_values(x, self.L, self.kmax, d) for d in (0, 1)]
        self.Pz = [legendre_values(z, self.n_vertical, d) for d in (0, 1)]
        self.Fp = self.Fx[0][:, 1:]
        self.wx = self.L / self.grid.nx
        self.wz = self.grid.vertical_weights
        self.P_top = np.ones(self.nL)
        self.P_bottom = (-1.0) ** np.arange(self.nL)
        self.kappa = real_fourier_wavenumbers(self.L, self.kmax)
        plate = PlateOperators(torus, self.alpha, 0.0)
        mF = self.wx * np.einsum("if,if->f", self.Fx[0], self.Fx[0])
        mL = np.einsum("j,jl,jl->l", self.wz, self.Pz[0], self.Pz[0])
        self.mass = np.concatenate(
            [np.kron(mF, mL), np.kron(mF, mL), plate.a1 * plate.mass, plate.mass]
        )
        self.C = self._constraints()
        self._build_state_space()

    # index helpers -------------------------------------------------------
    def comp(self, c):
        return slice(c * self.n_comp, (c + 1) * self.n_comp)

    @property
    def xi1(self):
        return slice(self.n_fluid, self.n_fluid + self.n_plate)

    @property
    def xi2(self):
        return slice(self.n_fluid + self.n_plate, self.n_full)

    def coefficients(self, vec, c):
        """Fluid component ``c`` as an ``(nF, nL)`` coefficient array."""
        return np.asarray(vec)[self.comp(c)].reshape(self.nF, self.nL)

    # constraints ---------------------------------------------------------
    def _constraints(self):
        nF, nL = self.nF, self.nL
        DF = real_fourier_diff_coeffs(self.L, self.kmax)
        DL = legendre_diff_coeffs(self.n_vertical)
        div = np.zeros((self.n_comp, self.n_full))
        div[:, self.comp(0)] = np.kron(DF, np.eye(nL))
        div[:, self.comp(1)] = np.kron(np.eye(nF), DL)
        # the (constant, top degree) row is identically zero
        div = np.delete(div, self.nL - 1, axis=0)
        bottom = np.zeros((nF, self.n_full))
        top = np.zeros((nF - 1, self.n_full))
        for f in range(nF):
            bottom[f, self.comp(1)] = np.kron(np.eye(nF)[f], self.P_bottom)
        for f in range(1, nF):
            top[f - 1, self.comp(1)] = np.kron(np.eye(nF)[f], self.P_top)
            top[f - 1, self.n_fluid + self.n_plate + f - 1] = -1.0
        return np.vstack([div, bottom, top])

    def constraint_rank(self):
        s = linalg.svdvals(self.C)
        return int(np.sum(s > s[0] * 1e-12)), self.C.shape[0]

    def _build_state_space(self):
        rank, rows = self.constraint_rank()
        if rank < rows:
            raise AssemblyError(f"constraint matrix is rank deficient ({rank} < {rows})")
        Z0 = linalg.null_space(self.C)
        gram = Z0.T @ (self.mass[:, None] * Z0)
        try:
            chol = linalg.cholesky(gram, lower=True)
        except linalg.LinAlgError as exc:
            raise AssemblyError("energy Gram matrix is not positive definite") from exc
        self.Z = linalg.solve_triangular(chol, Z0.T, lower=True).T
        self.n_state = self.Z.shape[1]

    @property
    def projector(self):
        """Energy-orthogonal projector onto the constrained space (full coordinates)."""
        return self.Z @ (self.Z.T * self.mass[None, :])

    def to_state(self, vec):
        """Orthonormal coordinates of a full coefficient vector (after projection)."""
        return self.Z.T @ (self.mass * vec)

    def from_state(self, x):
        return self.Z @ x

    def inner(self, a, b):
        """Energy inner product of two full coefficient vectors."""
        return np.sum(np.conj(b) * self.mass * a)

    # field evaluation ----------------------------------------------------
    def fluid_values(self, vec, dx=0, dz=0):
        """Fluid velocity (or a first derivative) on the quadrature grid."""
        out = [self.Pz[dz] @ self.coefficients(vec, c).T @ self.Fx[dx].T for c in (0, 1)]
        return np.array(out)

    def fluid_gradient(self, vec):
        """``G[i, l] = d u_i / d y_l`` on the quadrature grid."""
        gx = self.fluid_values(vec, dx=1)
        gz = self.fluid_values(vec, dz=1)
        return np.stack([gx, gz], axis=1)

    def plate_values(self, coef):
        return self.Fp @ np.asarray(coef)

    def plate_coefficients(self, values):
        """L2 projection of nodal plate values onto the mean-zero functions."""
        return (self.Fp.T @ np.asarray(values)) * self.wx / (self.L / 2.0)

    def boundary_values(self, vec, which):
        """Velocity trace on the plate (``"top"``) or the bottom wall."""
        pz = self.P_top if which == "top" else self.P_bottom
        return np.array([self.Fx[0] @ (self.coefficients(vec, c) @ pz) for c in (0, 1)])

    def divergence_residual(self, vec):
        div = self.fluid_values(vec, dx=1)[0] + self.fluid_values(vec, dz=1)[1]
        return float(np.max(np.abs(div)))

    # projections of fields onto the basis (dual vectors) -----------------
    def project_field(self, g, dx=0, dz=0):
        """``int g d^(dx,dz) (F_f P_l)`` as an ``(nF, nL)`` array."""
        wg = np.asarray(g) * self.wz[:, None] * self.wx
        return self.Fx[dx].T @ wg.T @ self.Pz[dz]

    def project_top(self, g):
        """``int g(x) F_f(x) P_l(1) dx``."""
        return np.outer(self.Fx[0].T @ np.asarray(g) * self.wx, self.P_top)

    def project_bottom(self, g):
        return np.outer(self.Fx[0].T @ np.asarray(g) * self.wx, self.P_bottom)

    def project_plate(self, g):
        return self.Fp.T @ np.asarray(g) * self.wx

    def dual_vector(self, interior=None, top=None, bottom=None, plate=None):
        """Full dual vector of a force triple.

        ``interior`` is a vector field ``(2, nq, nx)`` tested against the
        velocity, ``top``/``bottom`` tangential boundary fields ``(2, nx)``
        tested against the tangential velocity trace, ``plate`` a scalar
        field tested against the plate velocity.
        """
        out = np.zeros(self.n_full, dtype=np.result_type(*(a for a in (interior, top, bottom, plate) if a is not None), float))
        for c in (0, 1):
            acc = np.zeros((self.nF, self.nL), dtype=out.dtype)
            if interior is not None:
                acc = acc + self.project_field(interior[c])
            if top is not None:
                acc = acc + self.project_top(top[c])
            if bottom is not None:
                acc = acc + self.project_bottom(bottom[c])
            out[self.comp(c)] = acc.ravel()
        if plate is not None:
            out[self.xi2] = self.project_plate(plate)
        return out

    # bilinear forms -----------------------------------------------------
    def pair_matrix(self, weight, trial=(0, 0), test=(0, 0)):
        """``int weight d^trial phi d^test psi`` over all scalar basis pairs.

        Returns an ``(nF * nL, nF * nL)`` matrix indexed ``[test, trial]``.
        """
        wa = np.asarray(weight) * self.wz[:, None] * self.wx
        T = np.einsum("ji,if,ig->jgf", wa, self.Fx[trial[0]], self.Fx[test[0]], optimize=True)
        M = np.einsum("jgf,jl,jk->gkfl", T, self.Pz[trial[1]], self.Pz[test[1]], optimize=True)
        return M.reshape(self.n_comp, self.n_comp)

    def separable_pair(self, trial=(0, 0), test=(0, 0)):
        """Constant-coefficient version of :meth:`pair_matrix` via 1D factors."""
        fx = self.wx * self.Fx[test[0]].T @ self.Fx[trial[0]]
        pz = self.Pz[test[1]].T @ (self.wz[:, None] * self.Pz[trial[1]])
        return np.kron(fx, pz)

    def describe(self):
        return {
            "L": self.L,
            "n_modes": self.torus.n_modes,
            "n_vertical": self.n_vertical,
            "n_full": self.n_full,
            "n_state": self.n_state,
            "quadrature_nz": self.grid.nz,
            "quadrature_nx": self.grid.nx,
        }


def build_basis(torus, n_vertical, alpha=1.0):
    """Constrained Fourier x Legendre basis (see :class:`GalerkinBasis`)."""
    return GalerkinBasis(torus, n_vertical, alpha)


# ---------------------------------------------------------------------------
# linearization fields


@dataclass(frozen=True)
class LinearizationFields:
    """Gateaux derivatives of the transformed maps for every plate mode.

    Each array has the plate-mode index first. ``F21`` and ``F22`` are the
    derivatives of the fluid residual with respect to the displacement and
    the plate velocity; ``L2 = div L1 - F``.
    """

    L1: np.ndarray
    F21: np.ndarray
    F22: np.ndarray
    G_top: np.ndarray
    G_bottom: np.ndarray
    H: np.ndarray
    L2_1: np.ndarray
    L2_2: np.ndarray
    L3_top: np.ndarray
    L3_bottom: np.ndarray
    L4: np.ndarray
    trivial: bool = False

    def parts(self, xi_coef, xit_coef):
        """Linear parts for a perturbation given by plate coefficients."""
        c1 = np.asarray(xi_coef)
        c2 = np.asarray(xit_coef)
        return _ContractedParts(
            L1=np.tensordot(c1, self.L1, axes=1),
            F=np.tensordot(c1, self.F21, axes=1) + np.tensordot(c2, self.F22, axes=1),
            G=(np.tensordot(c1, self.G_top, axes=1), np.tensordot(c1, self.G_bottom, axes=1)),
            H=np.tensordot(c1, self.H, axes=1),
        )


@dataclass(frozen=True)
class _ContractedParts:
    L1: np.ndarray
    F: np.ndarray
    G: tuple
    H: np.ndarray


def _is_trivial_state(state):
    return (
        np.max(np.abs(state.w)) == 0.0
        and np.ptp(state.p) == 0.0
        and state.forcing is None
        and np.max(np.abs(state.eta.values)) == 0.0
    )


def linearization_fields(basis, state):
    """Sample ``L1, L2, L3`` and the plate mismatch for every plate mode."""
    g = basis.grid
    n = basis.n_plate
    shape = g.shape
    if _is_trivial_state(state):
        z = np.zeros
        return LinearizationFields(
            L1=z((n, 2, 2) + shape), F21=z((n, 2) + shape), F22=z((n, 2) + shape),
            G_top=z((n, 2, g.nx)), G_bottom=z((n, 2, g.nx)), H=z((n, g.nx)),
            L2_1=z((n, 2) + shape), L2_2=z((n, 2) + shape),
            L3_top=z((n, 2, g.nx)), L3_bottom=z((n, 2, g.nx)), L4=z((n, g.nx)),
            trivial=True,
        )
    zero = np.zeros(g.nx)
    out = {k: [] for k in ("L1", "F21", "F22", "G_top", "G_bottom", "H", "L2_1", "L2_2",
                           "L3_top", "L3_bottom", "L4")}
    _, n_top = g.top_normal()
    n_bot = np.stack([np.zeros(g.nx), -np.ones(g.nx)])
    for k in range(n):
        e = basis.Fp[:, k]
        L1 = tops.linear_E(state, e)
        F21 = tops.linear_F(state, e, zero)
        F22 = tops.linear_F(state, zero, e)
        Gt, Gb = tops.linear_G(state, e)
        H = tops.linear_H(state, e)
        divL1 = tops.div_matrix(g, L1)
        En_t, En_b = tops.normal_traction_trace(g, L1)
        out["L1"].append(L1)
        out["F21"].append(F21)
        out["F22"].append(F22)
        out["G_top"].append(Gt)
        out["G_bottom"].append(Gb)
        out["H"].append(H)
        out["L2_1"].append(divL1 - F21)
        out["L2_2"].append(-F22)
        out["L3_top"].append(-Gt - tops._tangential(En_t, n_top))
        out["L3_bottom"].append(-Gb - tops._tangential(En_b, n_bot))
        out["L4"].append(H + tops.trace_adjoint(g, En_t))
    return LinearizationFields(**{k: np.array(v) for k, v in out.items()})


# ---------------------------------------------------------------------------
# system


@dataclass(frozen=True)
class DiscreteSystem:
    """Galerkin matrices of the linearized operator, its adjoint and the control.

    Attributes
    ----------
    basis : GalerkinBasis
    plate : PlateOperators
    params : dict
        ``nu, alpha, delta, beta1, beta2, lambda0``.
    K, K_adj : ndarray
        Full-coefficient matrices of the forward and adjoint bilinear forms
        (``[test, trial]``).
    A, A_adj : ndarray
        Reduced matrices in orthonormal state coordinates.
    B : ndarray or None
        Control matrix (one column per actuator).
    """

    basis: GalerkinBasis = field(repr=False)
    plate: PlateOperators
    params: dict
    K: np.ndarray = field(repr=False)
    K_adj: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    A_adj: np.ndarray = field(repr=False)
    state: object = field(default=None, repr=False)
    linear: LinearizationFields = field(default=None, repr=False)
    B: np.ndarray = field(default=None, repr=False)
    control: object = field(default=None, repr=False)
    dissipation: dict = field(default=None, repr=False)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def mass(self):
        return self.basis.mass

    @property
    def Z(self):
        return self.basis.Z

    @property
    def lambda0(self):
        return self.params["lambda0"]

    def with_control(self, B, control):
        return replace(self, B=np.asarray(B, dtype=float), control=control)

    def energy_parts(self, x):
        """Dissipation rates of a state (orthonormal coordinates).

        Returns the viscous, friction and plate-damping dissipation and the
        supply ``x . A x`` as a dict.
        """
        vec = self.basis.from_state(x)
        d = self.dissipation
        return {
            "viscous": float(vec @ d["viscous"] @ vec),
            "friction": float(vec @ d["friction"] @ vec),
            "damping": float(vec @ d["damping"] @ vec),
            "supply": float(x @ self.A @ x),
        }


def default_lambda0(nu, w_sup):
    return 10.0 * max(1.0, nu, w_sup) ** 2


def _viscous_forward(basis, nu):
    """``2 nu int D(w) : D(v)`` by separable 1D factors."""
    S = np.zeros((basis.n_fluid, basis.n_fluid))
    der = [(1, 0), (0, 1)]
    for i in (0, 1):
        for j in (0, 1):
            # d_j w_i d_j v_i
            S[basis.comp(i), basis.comp(i)] += nu * basis.separable_pair(der[j], der[j])
            # d_i w_j d_j v_i
            S[basis.comp(i), basis.comp(j)] += nu * basis.separable_pair(der[i], der[j])
    return S


def _friction(basis, beta1, beta2):
    """``beta2 int_top w1 v1 + beta1 int_bottom w1 v1``."""
    mF = basis.wx * basis.Fx[0].T @ basis.Fx[0]
    blk = beta2 * np.kron(mF, np.outer(basis.P_top, basis.P_top))
    blk += beta1 * np.kron(mF, np.outer(basis.P_bottom, basis.P_bottom))
    out = np.zeros((basis.n_full, basis.n_full))
    out[basis.comp(0), basis.comp(0)] = blk
    return out


def _oseen_forward(basis, state):
    """``int [(wS . grad) w + (w . grad) wS] . v`` by quadrature."""
    out = np.zeros((basis.n_fluid, basis.n_fluid))
    w = state.w
    Gw = state.grid.grad(w)  # [d, c]
    for d in (0, 1):
        out[basis.comp(d), basis.comp(d)] += basis.pair_matrix(w[0], trial=(1, 0))
        out[basis.comp(d), basis.comp(d)] += basis.pair_matrix(w[1], trial=(0, 1))
        for c in (0, 1):
            out[basis.comp(d), basis.comp(c)] += basis.pair_matrix(Gw[d, c])
    return out


def _oseen_adjoint(basis, state):
    """``int [(wS . grad) phi - (grad wS)^T phi] . v`` by quadrature."""
    out = np.zeros((basis.n_fluid, basis.n_fluid))
    w = state.w
    Gw = state.grid.grad(w)
    for d in (0, 1):
        out[basis.comp(d), basis.comp(d)] += basis.pair_matrix(w[0], trial=(1, 0))
        out[basis.comp(d), basis.comp(d)] += basis.pair_matrix(w[1], trial=(0, 1))
        for c in (0, 1):
            # ((grad wS)^T phi)_d = sum_c d_d wS_c phi_c
            out[basis.comp(d), basis.comp(c)] -= basis.pair_matrix(Gw[c, d])
    return out


def _linear_columns(basis, lin):
    """Fluid-row and plate-row entries of the linearization blocks.

    Returns ``(fluid_xi1, fluid_xi2, plate_xi1)`` of shapes
    ``(n_fluid, n_plate)``, ``(n_fluid, n_plate)``, ``(n_plate, n_plate)``
    holding ``-int L1 : grad v - int L2 . v - int L3 . v`` and ``<L4, zeta2>``.
    """
    n = basis.n_plate
    f1 = np.zeros((basis.n_fluid, n))
    f2 = np.zeros((basis.n_fluid, n))
    p1 = np.zeros((n, n))
    if lin.trivial:
        return f1, f2, p1
    for k in range(n):
        for i in (0, 1):
            acc = -basis.project_field(lin.L1[k, i, 0], dx=1)
            acc -= basis.project_field(lin.L1[k, i, 1], dz=1)
            acc -= basis.project_field(lin.L2_1[k, i])
            acc -= basis.project_top(lin.L3_top[k, i])
            acc -= basis.project_bottom(lin.L3_bottom[k, i])
            f1[basis.comp(i), k] = acc.ravel()
            f2[basis.comp(i), k] = -basis.project_field(lin.L2_2[k, i]).ravel()
        p1[:, k] = basis.project_plate(lin.L4[k])
    return f1, f2, p1


def assemble_AS(state, basis=None, n_vertical=None, lambda0=None, check=True):
    """Assemble the Galerkin matrices of the linearized coupled operator.

    Parameters
    ----------
    state : StationaryState
        Stationary state on ``basis.grid`` (flat reference profile).
    basis : GalerkinBasis, optional
        Built from ``state.grid.torus`` and ``n_vertical`` when omitted.
    n_vertical : int, optional
    lambda0 : float, optional
        Shift for dissipativity and the lifting; default
        ``10 max(1, nu, |w_S|_inf)^2``.
    check : bool
        Run the dissipativity check on the reduced matrix.

    Returns
    -------
    DiscreteSystem
    """
    if np.max(np.abs(state.eta.values)) > 0.0:
        raise AssemblyError(
            "assembly supports a flat stationary profile only; got max|eta_S| = "
            f"{np.max(np.abs(state.eta.values)):.3e}"
        )
    if basis is None:
        if n_vertical is None:
            raise AssemblyError("either basis or n_vertical must be supplied")
        basis = build_basis(state.grid.torus, n_vertical, state.alpha)
    if state.grid.shape != basis.grid.shape or state.grid.torus != basis.torus:
        raise AssemblyError("stationary state is not sampled on the quadrature grid of the basis")
    if not np.isclose(basis.alpha, state.alpha):
        raise AssemblyError("basis energy weight uses a different rigidity than the state")
    nu, b1, b2 = state.nu, state.beta1, state.beta2
    plate = assemble_plate_ops(state.alpha, state.delta, basis.torus)
    nf, n = basis.n_fluid, basis.n_full
    trivial_flow = np.max(np.abs(state.w)) == 0.0
    lin = linearization_fields(basis, state)

    # forward form a(W, V), rows = test, columns = trial
    visc = np.zeros((n, n))
    visc[:nf, :nf] = _viscous_forward(basis, nu)
    fric = _friction(basis, b1, b2)
    K = -visc - fric
    if not trivial_flow:
        K[:nf, :nf] -= _oseen_forward(basis, state)
    pm = plate.mass
    K[basis.xi1, basis.xi2] += np.diag(plate.a1 * pm)
    K[basis.xi2, basis.xi1] -= np.diag(plate.a1 * pm)
    damp = np.zeros((n, n))
    damp[basis.xi2, basis.xi2] = np.diag(plate.a2 * pm)
    K -= damp
    f1, f2, p1 = _linear_columns(basis, lin)
    K[:nf, basis.xi1] += f1
    K[:nf, basis.xi2] += f2
    K[basis.xi2, basis.xi1] += p1

    # adjoint form a*(Phi, V) from the adjoint operator, rows = test
    Kadj = np.zeros((n, n))
    grad_grad = np.zeros((nf, nf))
    der = [(1, 0), (0, 1)]
    for i in (0, 1):
        for j in (0, 1):
            grad_grad[basis.comp(i), basis.comp(i)] += basis.separable_pair(der[j], der[j])
    # int d_i phi_j d_j v_i reduces on divergence-free pairs to the top-wall
    # term phi1 dx v3 - phi3 dx v1 (the bottom term vanishes with the normal traces)
    mFd = basis.wx * basis.Fx[1].T @ basis.Fx[0]  # [test f', trial f] with test differentiated
    top = np.outer(basis.P_top, basis.P_top)
    grad_grad[basis.comp(1), basis.comp(0)] += np.kron(mFd, top)
    grad_grad[basis.comp(0), basis.comp(1)] -= np.kron(mFd, top)
    Kadj[:nf, :nf] = -nu * grad_grad
    Kadj -= _friction(basis, b1, b2)
    if not trivial_flow:
        Kadj[:nf, :nf] += _oseen_adjoint(basis, state)
    # plate rows: -<A1 zeta2, xi1> + <A1 zeta1, xi2> - <A2 zeta2, xi2>
    Kadj[basis.xi1, basis.xi2] -= np.diag(plate.a1 * pm)
    Kadj[basis.xi2, basis.xi1] += np.diag(plate.a1 * pm)
    Kadj[basis.xi2, basis.xi2] -= np.diag(plate.a2 * pm)
    # linearization terms of the adjoint: rows xi1 / xi2, columns phi and zeta2
    Kadj[basis.xi1, :nf] += f1.T
    Kadj[basis.xi2, :nf] += f2.T
    Kadj[basis.xi1, basis.xi2] += p1.T

    Z = basis.Z
    A = Z.T @ K @ Z
    A_adj = Z.T @ Kadj @ Z
    w_sup = float(np.max(np.abs(state.w)))
    lam0 = default_lambda0(nu, w_sup) if lambda0 is None else float(lambda0)
    params = dict(nu=nu, alpha=state.alpha, delta=state.delta, beta1=b1, beta2=b2, lambda0=lam0)
    dissipation = {"viscous": visc, "friction": fric, "damping": damp}
    system = DiscreteSystem(basis, plate, params, K, Kadj, A, A_adj, state, lin,
                            dissipation=dissipation)
    if check:
        margin = dissipativity_margin(system)
        if margin < -1e-8 * max(1.0, np.max(np.abs(A))):
            raise AssemblyError(
                f"lambda0 = {lam0:g} does not make the shifted operator dissipative "
                f"(min eigenvalue of the symmetric part {margin:.3e})"
            )
    return system


def dissipativity_margin(system, lambda0=None):
    """Smallest eigenvalue of the symmetric part of ``lambda0 I - A``."""
    lam0 = system.lambda0 if lambda0 is None else lambda0
    S = lam0 * np.eye(system.n) - 0.5 * (system.A + system.A.T)
    return float(linalg.eigvalsh(S)[0])


def assemble_plate_only(plate):
    """Plate block ``[[0, A1^(1/2)], [-A1^(1/2), -A2]]`` in energy-orthonormal coordinates."""
    s = np.sqrt(plate.a1)
    n = s.size
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.diag(s)
    A[n:, :n] = -np.diag(s)
    A[n:, n:] = -np.diag(plate.a2)
    return A


def plate_only_eigenvalues(plate):
    """Roots of ``lambda^2 + delta k^2 lambda + alpha k^4 = 0`` per mode."""
    k = plate.wavenumbers
    b = plate.delta * k**2
    c = plate.alpha * k**4
    disc = np.sqrt((b**2 - 4.0 * c).astype(complex))
    return np.concatenate([(-b + disc) / 2.0, (-b - disc) / 2.0])


# ---------------------------------------------------------------------------
# control


ACTUATOR_KINDS = ("auto", "normal", "normal+tangential", "none")


class ControlShape:
    """Localized boundary control on the bottom wall.

    The weight ``m`` is the normalized bump ``(8 / L) cos^4(3 pi (x - L/2) / L)``
    on the middle third of the wall (``C^3``, unit integral). Actuator
    directions are real Fourier functions times the outward normal
    ``-e3`` (wavenumbers ``1..n_act``) and, when tangential actuation is
    active, Fourier functions (including the constant) times ``e1``.

    Parameters
    ----------
    torus : TorusGrid
    n_act : int
        Largest actuator wavenumber.
    kind : {"auto", "normal", "normal+tangential", "none"}
        ``"auto"`` adds the tangential family iff ``beta1 > 0``.
    beta1 : float
    n_fine : int
        Number of points of the fine boundary quadrature.
    """

    def __init__(self, torus, n_act=2, kind="auto", beta1=0.0, n_fine=4096):
        if kind not in ACTUATOR_KINDS:
            raise ConfigError(f"unknown actuator kind {kind!r}; expected one of {ACTUATOR_KINDS}")
        if n_act < 1:
            raise ConfigError("n_act must be at least 1")
        self.torus = torus
        self.L = torus.L1
        self.n_act = int(n_act)
        self.kind = kind
        self.beta1 = float(beta1)
        self.tangential = kind == "normal+tangential" or (kind == "auto" and beta1 > 0)
        self.xf = np.arange(n_fine) * self.L / n_fine
        self.wf = self.L / n_fine
        self.m = self.weight(self.xf)
        self.normal = np.array([0.0, -1.0])
        self.directions = self._directions()

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        L = self.L
        t = np.mod(x, L) - L / 2.0  # signed distance to the center
        inside = np.abs(t) < L / 6.0
        return np.where(inside, (8.0 / L) * np.cos(3.0 * np.pi * t / L) ** 4, 0.0)

    def _directions(self):
        if self.kind == "none":
            return []
        F = real_fourier_values(self.xf, self.L, self.n_act)
        dirs = []
        for j in range(1, F.shape[1]):
            dirs.append(("normal", j, np.outer(self.normal, F[:, j])))
        if self.tangential:
            for j in range(F.shape[1]):
                dirs.append(("tangential", j, np.outer([1.0, 0.0], F[:, j])))
        return dirs

    @property
    def n_inputs(self):
        return len(self.directions)

    def apply_M(self, v):
        """Localizer ``M v = m v - (int m v . n) m n`` on the fine grid; ``v`` is (2, n_fine)."""
        v = np.asarray(v)
        flux = np.sum(self.m * (self.normal @ v)) * self.wf
        return self.m * v - flux * self.m * self.normal[:, None]

    def actuator(self, j):
        """Localized actuator field ``M v_j`` on the fine grid."""
        return self.apply_M(self.directions[j][2])

    def pair(self, a, b):
        """Boundary L2 pairing of two fine-grid vector fields."""
        return np.sum(a * np.conj(b)) * self.wf

    def describe(self):
        return {
            "n_act": self.n_act,
            "kind": self.kind,
            "tangential": self.tangential,
            "n_inputs": self.n_inputs,
            "support": [self.L / 3.0, 2.0 * self.L / 3.0],
        }


def _bottom_fourier(shape_, g):
    """Coefficients of a fine-grid boundary function on the real Fourier functions."""
    basis_f = real_fourier_values(shape_.xf, shape_.L, shape_.torus.n_modes // 2)
    mass = np.full(basis_f.shape[1], shape_.L / 2.0)
    mass[0] = shape_.L
    return (basis_f.T @ g) * shape_.wf / mass


def lifting_particular(system, shape_, j):
    """Divergence-free coefficient vector with bottom normal trace ``(M v_j)_3``."""
    basis = system.basis
    Mv = shape_.actuator(j)
    coef = _bottom_fourier(shape_, Mv[1])
    rhs = np.zeros(basis.C.shape[0])
    n_div = basis.n_comp - 1
    rhs[n_div:n_div + basis.nF] = coef
    sol, *_ = linalg.lstsq(basis.C, rhs)
    return sol, Mv


def _tangential_load(system, shape_, Mv):
    """Full dual vector of ``int beta1 (M v)_1 v_1`` on the bottom wall."""
    basis = system.basis
    F = real_fourier_values(shape_.xf, shape_.L, basis.kmax)
    out = np.zeros(basis.n_full)
    proj = (F.T @ Mv[0]) * shape_.wf * system.params["beta1"]
    out[basis.comp(0)] = np.outer(proj, basis.P_bottom).ravel()
    return out


def assemble_control(system, shape_, lambda0=None):
    """Control matrix ``B = (lambda0 - A) P D(M v)`` for every actuator.

    Parameters
    ----------
    system : DiscreteSystem
    shape_ : ControlShape
    lambda0 : float, optional
        Lifting shift (defaults to the system's value).

    Returns
    -------
    DiscreteSystem
        Copy of ``system`` with ``B`` and ``control`` set.
    """
    basis = system.basis
    lam0 = system.lambda0 if lambda0 is None else float(lambda0)
    n = system.n
    if shape_.n_inputs == 0:
        return system.with_control(np.zeros((n, 0)), shape_)
    R = lam0 * np.eye(n) - system.A
    lu = linalg.lu_factor(R)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > 1e12:
        raise IllConditionedError(f"lambda0 = {lam0:g} is too close to the spectrum (condition {cond:.2e})")
    cols = []
    Z, M = basis.Z, basis.mass
    for j in range(shape_.n_inputs):
        Dp, Mv = lifting_particular(system, shape_, j)
        t = Z.T @ _tangential_load(system, shape_, Mv)
        rhs = -lam0 * (Z.T @ (M * Dp)) + Z.T @ (system.K @ Dp) + t
        c = linalg.lu_solve(lu, rhs)
        x = Z.T @ (M * Dp) + c
        cols.append(R @ x)
    return system.with_control(np.array(cols).T, shape_)


def control_closed_form(system, shape_):
    """Equivalent expression ``Z^T K (I - P) D + t`` of the control columns."""
    basis = system.basis
    P = basis.projector
    cols = []
    for j in range(shape_.n_inputs):
        Dp, Mv = lifting_particular(system, shape_, j)
        t = basis.Z.T @ _tangential_load(system, shape_, Mv)
        cols.append(basis.Z.T @ (system.K @ (Dp - P @ Dp)) + t)
    return np.array(cols).T


class PressureFit:
    """Least-squares pressure from a prescribed pressure gradient.

    The pressure is expanded in real Fourier x Legendre functions of
    vertical degree ``n_vertical + 1`` without the constant, and fitted in
    the quadrature-weighted L2 norm of the gradient mismatch.
    """

    def __init__(self, basis):
        g = basis.grid
        self.basis = basis
        self.deg = basis.n_vertical + 1
        Fr = [real_fourier_values(g.x, basis.L, basis.kmax, d) for d in (0, 1)]
        Pr = [legendre_values(g.z, self.deg, d) for d in (0, 1)]
        cols_x = np.einsum("if,jl->jifl", Fr[1], Pr[0]).reshape(g.nz + 1, g.nx, -1)
        cols_z = np.einsum("if,jl->jifl", Fr[0], Pr[1]).reshape(g.nz + 1, g.nx, -1)
        self.sw = np.sqrt(g.weights())
        sw = self.sw[..., None]
        self.design = np.concatenate([(sw * cols_x).reshape(-1, cols_x.shape[-1]),
                                      (sw * cols_z).reshape(-1, cols_z.shape[-1])])[:, 1:]
        self.pinv = linalg.pinv(self.design)
        self.values_map = np.einsum("if,jl->jifl", Fr[0], Pr[0]).reshape(g.nz + 1, g.nx, -1)[..., 1:]
        self.n_fourier = Fr[0].shape[1]

    def coefficients(self, rhs):
        """Coefficients ``(n_fourier, deg + 1)`` and the relative fit residual."""
        b = np.concatenate([(self.sw * rhs[0]).ravel(), (self.sw * rhs[1]).ravel()])
        coef = self.pinv @ b
        res = linalg.norm(self.design @ coef - b) / max(linalg.norm(b), 1e-300)
        return np.concatenate([[0.0], coef]).reshape(self.n_fourier, self.deg + 1), float(res)

    def values(self, rhs):
        """Pressure on the quadrature grid."""
        b = np.concatenate([(self.sw * rhs[0]).ravel(), (self.sw * rhs[1]).ravel()])
        return self.values_map @ (self.pinv @ b)


def pressure_fit(basis):
    """Cached :class:`PressureFit` of a basis."""
    fit = getattr(basis, "_pressure_fit", None)
    if fit is None:
        fit = PressureFit(basis)
        basis._pressure_fit = fit
    return fit


def fluid_laplacian(basis, vec):
    """Laplacian of the fluid part of a coefficient vector on the quadrature grid."""
    g = basis.grid
    F2 = real_fourier_values(g.x, basis.L, basis.kmax, 2)
    P2 = legendre_values(g.z, basis.n_vertical, 2)
    return np.array([
        basis.Pz[0] @ basis.coefficients(vec, c).T @ F2.T + P2 @ basis.coefficients(vec, c).T @ basis.Fx[0].T
        for c in (0, 1)
    ])


def adjoint_pressure(system, phi_vec, mu):
    """Least-squares pressure of an adjoint eigenfunction.

    Fits ``grad r = nu Lap phi + (wS . grad) phi - (grad wS)^T phi - mu phi``
    (see :class:`PressureFit`).

    Returns
    -------
    callable
        ``r_bottom(x)`` evaluating the pressure on the bottom wall, and the
        relative residual of the fit.
    """
    basis = system.basis
    nu = system.params["nu"]
    phi = basis.fluid_values(phi_vec)
    rhs = nu * fluid_laplacian(basis, phi_vec) - mu * phi
    state = system.state
    if np.max(np.abs(state.w)) > 0:
        G = basis.fluid_gradient(phi_vec)
        Gw = state.grid.grad(state.w)
        rhs = rhs + np.einsum("il...,l...->i...", G, state.w) - np.einsum("li...,l...->i...", Gw, phi)
    fit = pressure_fit(basis)
    coef, res = fit.coefficients(rhs)
    pb = (-1.0) ** np.arange(fit.deg + 1)

    def r_bottom(x):
        return real_fourier_values(x, basis.L, basis.kmax) @ (coef @ pb)

    return r_bottom, res


def b_star(system, shape_, eps, mu):
    """Stress-trace evaluation of the adjoint control operator.

    Parameters
    ----------
    system : DiscreteSystem
    shape_ : ControlShape
    eps : ndarray
        Adjoint eigenvector in orthonormal state coordinates.
    mu : complex
        Its eigenvalue for the adjoint matrix.

    Returns
    -------
    ndarray, shape (2, n_fine)
        ``-[m (Tn . n - c) n + m (Tn)_tau]`` on the bottom wall (the
        tangential part only when tangential actuation is active); the
        sign makes ``eps^H B v = int v . conj(B* eps)``.
    """
    basis = system.basis
    nu = system.params["nu"]
    vec = basis.from_state(eps)
    r_bottom, _ = adjoint_pressure(system, vec, mu)
    xf = shape_.xf
    F0 = real_fourier_values(xf, basis.L, basis.kmax)
    F1 = real_fourier_values(xf, basis.L, basis.kmax, 1)
    dP = legendre_values(np.array([0.0]), basis.n_vertical, 1)[0]
    c1 = basis.coefficients(vec, 0)
    c3 = basis.coefficients(vec, 1)
    dz_phi1 = F0 @ (c1 @ dP)
    dz_phi3 = F0 @ (c3 @ dP)
    dx_phi3 = F1 @ (c3 @ basis.P_bottom)
    r = r_bottom(xf)
    # n = -e3: (Tn) . n = -r + 2 nu d3 phi3, (Tn)_1 = -nu (d3 phi1 + d1 phi3)
    Tnn = -r + 2.0 * nu * dz_phi3
    Tn1 = -nu * (dz_phi1 + dx_phi3)
    m = shape_.m
    cst = np.sum(m * Tnn) * shape_.wf
    out = np.zeros((2, xf.size), dtype=complex)
    out[1] = -(m * (Tnn - cst) * shape_.normal[1])
    if shape_.tangential:
        out[0] = -(m * Tn1)
    return out


def b_star_coordinates(shape_, bstar):
    """Pairings ``int v_j . conj(B* eps)`` with every actuator direction."""
    return np.array([shape_.pair(d[2], bstar) for d in shape_.directions])


# ---------------------------------------------------------------------------
# stationary state


def steady_state_solve(basis, nu, alpha, delta, beta1, beta2, forcing=None, plate_load=None,
                       initial=None, tol=1e-10, max_iter=20):
    """Newton iteration for a stationary state of the nonlinear system.

    The unknowns are the Piola-transformed velocity on the flat channel
    (zero normal velocity on both walls) and the mean-zero plate profile.
    The equations are the pressure-free weak form on the deformed domain
    tested against coupled pairs ``(v, zeta)`` with ``v . N = zeta`` on
    the plate, so the pressure never enters.

    Parameters
    ----------
    basis : GalerkinBasis
    nu, alpha, delta, beta1, beta2 : float
    forcing : callable, optional
        Body force ``f_S(x1, x3) -> (2, ...)`` on the physical domain.
    plate_load : callable, optional
        Plate load ``h_S(x)`` (its mean is removed).
    initial : ndarray, optional
        Initial unknown vector.
    tol : float
        Target on the Euclidean norm of the residual.
    max_iter : int

    Returns
    -------
    StationaryState, dict
        The state (velocity sampled on the basis quadrature grid in the
        coordinates of the deformed domain's reference) and a log with the
        residual history.
    """
    from .steady import SteadyProblem

    prob = SteadyProblem(basis, nu, alpha, delta, beta1, beta2, forcing, plate_load)
    return prob.solve(initial=initial, tol=tol, max_iter=max_iter)


def flatten_state(state, basis, tol=1e-12):
    """Re-express a stationary state with a negligible profile on the basis grid.

    Raises
    ------
    AssemblyError
        If ``max |eta_S| > tol``: assembly supports flat profiles only.
    """
    eta = np.max(np.abs(state.eta.values))
    if eta > tol:
        raise AssemblyError(
            f"stationary profile is not flat (max|eta_S| = {eta:.3e}); assembly supports flat profiles only"
        )
    if state.grid.shape != basis.grid.shape:
        raise AssemblyError("stationary state is not sampled on the quadrature grid of the basis")
    return replace(state, grid=basis.grid)


# ---------------------------------------------------------------------------
# export / import


def _write_matrix(path, mat):
    np.savetxt(path, np.asarray(mat), delimiter=",", fmt="%.17g")


def export_system(system, directory):
    """Write the reduced matrices as CSV files plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mats = {"A": system.A, "A_adj": system.A_adj, "Z": system.Z, "mass": system.mass[None, :]}
    if system.B is not None:
        mats["B"] = system.B
    digest = hashlib.sha256()
    files = {}
    # sorted to match the key order of the manifest read back by import_system
    for name, mat in sorted(mats.items()):
        p = d / f"{name}.csv"
        _write_matrix(p, mat)
        data = p.read_bytes()
        digest.update(data)
        files[name] = {"file": p.name, "shape": list(np.atleast_2d(mat).shape)}
    manifest = {
        "basis": system.basis.describe(),
        "params": {k: float(v) for k, v in system.params.items()},
        "control": system.control.describe() if system.control is not None else None,
        "matrices": files,
        "checksum": digest.hexdigest(),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def import_system(directory):
    """Read matrices written by :func:`export_system` and verify the checksum.

    Returns
    -------
    dict
        ``manifest`` plus the matrices as arrays.
    """
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    digest = hashlib.sha256()
    out = {"manifest": manifest}
    for name, info in manifest["matrices"].items():
        p = d / info["file"]
        digest.update(p.read_bytes())
        out[name] = np.loadtxt(p, delimiter=",", ndmin=2).reshape(info["shape"])
    if digest.hexdigest() != manifest["checksum"]:
        raise AssemblyError("checksum mismatch while importing the discrete system")
    return out
