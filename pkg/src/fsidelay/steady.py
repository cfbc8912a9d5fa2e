"""Newton solver for stationary states of the coupled fluid-plate system.

The stationary system is posed on the deformed channel ``Omega(eta)``. The
velocity is represented by its Piola pull-back ``u~ = b^T U(X)`` on the
flat channel, which turns the constraints ``div U = 0`` and ``U . N = 0``
on the plate into the linear constraints of the Galerkin basis. Test
functions are pairs ``(V, zeta)`` built the same way, with
``V . N = zeta`` on the plate, so that the pressure and the normal stress
on the plate cancel out of the weak form

    int_{Omega(eta)} 2 nu D(U) : D(V) + ((U . grad) U - f) . V
      + int_top beta2 U . (V - zeta e3) |N| dx + int_bottom beta1 U1 V1 dx
      + <A1 eta - h, zeta> = 0.

The pressure is recovered afterwards by a least-squares fit of the
momentum equation.
"""

import numpy as np
from scipy import linalg

from .errors import AssemblyError
from .fluid_grid import FluidGrid
from .grids import fourier_derivative, legendre_values, real_fourier_values
from .geometry import ADMISSIBILITY_THRESHOLD, PlateProfile
from .transform_ops import StationaryState


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, -4, -3))


class SteadyProblem:
    """Discrete stationary system in the unknowns ``(c, e)``.

    ``c`` are coordinates of ``u~`` in the basis subspace with vanishing
    plate coordinates and ``e`` the Fourier coefficients of ``eta``.

    Parameters
    ----------
    basis : GalerkinBasis
    nu, alpha, delta, beta1, beta2 : float
    forcing : callable, optional
        Body force ``f(x1, x3) -> (2, ...)`` in physical coordinates.
    plate_load : callable, optional
        Plate load ``h(x)``; its mean is removed.
    """

    def __init__(self, basis, nu, alpha, delta, beta1, beta2, forcing=None, plate_load=None):
        self.basis = basis
        self.nu, self.alpha, self.delta = float(nu), float(alpha), float(delta)
        self.beta1, self.beta2 = float(beta1), float(beta2)
        self.forcing = forcing
        self.plate_load = plate_load
        Z = basis.Z
        N0 = linalg.null_space(np.vstack([Z[basis.xi1], Z[basis.xi2]]))
        NT = linalg.null_space(Z[basis.xi1])
        self.trial = Z @ N0
        self.test = Z @ NT
        self.n_c = self.trial.shape[1]
        self.n_e = basis.n_plate
        if self.test.shape[1] != self.n_c + self.n_e:
            raise AssemblyError("stationary system is not square")
        g = basis.grid
        self.z = g.z[:, None]
        self.trial_vals = np.array([basis.fluid_values(v) for v in self.trial.T])
        self.test_vals = np.array([basis.fluid_values(v) for v in self.test.T])
        self.test_zeta = self.test[basis.xi2].T @ basis.Fp.T
        wk = basis.kappa[1:]
        self.a1 = self.alpha * wk**4 * (basis.L / 2.0)
        x = g.x
        h = np.zeros(g.nx) if plate_load is None else np.asarray(plate_load(x), dtype=float)
        self.h = h - h.mean()

    # geometry ---------------------------------------------------------------
    def _profile(self, e):
        basis = self.basis
        eta = basis.Fp @ e
        if np.min(1.0 + eta) < ADMISSIBILITY_THRESHOLD:
            raise AssemblyError(f"Newton iterate left the admissible set: min(1 + eta) = {np.min(1 + eta):.3e}")
        return eta

    def _grid(self, eta):
        basis = self.basis
        return FluidGrid(basis.torus, basis.grid.nz, PlateProfile(basis.torus, eta))

    def _push(self, ut, eta):
        """Physical velocity ``U = b^{-T} u~`` at the deformed grid nodes."""
        r = 1.0 + eta
        es = fourier_derivative(eta, self.basis.L)
        U1 = ut[..., 0, :, :] / r
        U3 = ut[..., 1, :, :] + self.z * es * U1
        return np.stack([U1, U3], axis=-3)

    def _tests(self, eta, gE):
        V = self._push(self.test_vals, eta)
        return V, gE.grad(V)

    # residual ----------------------------------------------------------------
    def _fields(self, c, eta, gE):
        ut = np.tensordot(c, self.trial_vals, axes=1)
        U = self._push(ut, eta)
        return U, gE.grad(U)

    def residual(self, y, cache=None):
        c, e = y[: self.n_c], y[self.n_c:]
        eta = self._profile(e)
        gE = self._grid(eta)
        V, GV = self._tests(eta, gE) if cache is None else cache
        U, GU = self._fields(c, eta, gE)
        w = gE.weights()
        x1, x3 = gE.coordinates()
        f = np.zeros_like(U) if self.forcing is None else np.asarray(self.forcing(x1, x3), dtype=float)
        conv = np.einsum("il...,l...->i...", GU, U)
        DU = _sym(GU)
        vol = 2.0 * self.nu * np.einsum("ijab,nijab,ab->n", DU, GV, w)
        vol += np.einsum("iab,niab,ab->n", conv - f, V, w)
        dx = self.basis.L / gE.nx
        es = fourier_derivative(eta, self.basis.L)
        Nn = np.sqrt(1.0 + es**2)
        Ut = U[:, -1]
        Vt = V[:, :, -1].copy()
        Vt[:, 1] -= self.test_zeta
        top = self.beta2 * dx * np.einsum("ia,nia,a->n", Ut, Vt, Nn)
        bot = self.beta1 * dx * np.einsum("a,na->n", U[0, 0], V[:, 0, 0])
        zeta_c = self.test[self.basis.xi2].T
        plate = zeta_c @ (self.a1 * e) - self.test_zeta @ self.h * dx
        return vol + top + bot + plate

    def jacobian(self, y, fd_step=1e-6):
        """Exact derivative in ``c``; central differences in ``e``."""
        c, e = y[: self.n_c], y[self.n_c:]
        eta = self._profile(e)
        gE = self._grid(eta)
        V, GV = self._tests(eta, gE)
        U, GU = self._fields(c, eta, gE)
        Uq = self._push(self.trial_vals, eta)
        GUq = gE.grad(Uq)
        w = gE.weights()
        dx = self.basis.L / gE.nx
        es = fourier_derivative(eta, self.basis.L)
        Nn = np.sqrt(1.0 + es**2)
        J = np.empty((self.test.shape[1], self.n_c + self.n_e))
        DUq = _sym(GUq)
        Jc = 2.0 * self.nu * np.einsum("qijab,nijab,ab->nq", DUq, GV, w, optimize=True)
        dconv = np.einsum("qilab,lab->qiab", GUq, U) + np.einsum("ilab,qlab->qiab", GU, Uq)
        Jc += np.einsum("qiab,niab,ab->nq", dconv, V, w, optimize=True)
        Vt = V[:, :, -1].copy()
        Vt[:, 1] -= self.test_zeta
        Jc += self.beta2 * dx * np.einsum("qia,nia,a->nq", Uq[:, :, -1], Vt, Nn, optimize=True)
        Jc += self.beta1 * dx * np.einsum("qa,na->nq", Uq[:, 0, 0], V[:, 0, 0], optimize=True)
        J[:, : self.n_c] = Jc
        for k in range(self.n_e):
            dy = np.zeros_like(y)
            dy[self.n_c + k] = fd_step
            J[:, self.n_c + k] = (self.residual(y + dy) - self.residual(y - dy)) / (2.0 * fd_step)
        return J

    # solve -------------------------------------------------------------------
    def solve(self, initial=None, tol=1e-10, max_iter=20):
        """Newton iteration; returns ``(StationaryState, log)``."""
        y = np.zeros(self.n_c + self.n_e) if initial is None else np.array(initial, dtype=float)
        history = []
        res = self.residual(y)
        history.append(float(np.linalg.norm(res)))
        it = 0
        while history[-1] > tol:
            if it >= max_iter:
                raise AssemblyError(
                    f"Newton did not converge in {max_iter} iterations (residual {history[-1]:.3e})"
                )
            J = self.jacobian(y)
            y = y - linalg.solve(J, res)
            res = self.residual(y)
            history.append(float(np.linalg.norm(res)))
            it += 1
            if not np.isfinite(history[-1]) or history[-1] > 1e6 * max(history[0], 1.0):
                raise AssemblyError(f"Newton diverged (residual history {history})")
        return self.state(y, history[-1]), {"residual_history": history, "iterations": it}

    def state(self, y, residual=0.0):
        """Stationary state on the grid of ``Omega(eta)`` with fitted pressure."""
        c, e = y[: self.n_c], y[self.n_c:]
        eta = self._profile(e)
        gE = self._grid(eta)
        U, GU = self._fields(c, eta, gE)
        p = self.pressure(gE, U, GU)
        return StationaryState(
            gE, U, p, nu=self.nu, alpha=self.alpha, delta=self.delta, beta1=self.beta1,
            beta2=self.beta2, forcing=self.forcing, residual=float(residual), coefficients=y.copy(),
        )

    def pressure(self, gE, U, GU):
        """Least-squares pressure of ``grad P = nu Lap U - (U . grad) U + f`` (zero mean).

        ``P`` is expanded in real Fourier x Legendre functions of the
        reference coordinates ``(s, z)`` of ``Omega(eta)``.
        """
        if not np.any(U) and self.forcing is None:
            return np.zeros(gE.shape)
        basis = self.basis
        x1, x3 = gE.coordinates()
        f = np.zeros_like(U) if self.forcing is None else np.asarray(self.forcing(x1, x3), dtype=float)
        rhs = self.nu * gE.laplacian(U) - np.einsum("il...,l...->i...", GU, U) + f
        deg = basis.n_vertical + 1
        Fr = [real_fourier_values(gE.x, basis.L, basis.kmax, d) for d in (0, 1)]
        Pr = [legendre_values(gE.z, deg, d) for d in (0, 1)]
        h = gE.thickness
        slope = gE.z[:, None] * gE.thickness_slope / h
        vals = np.einsum("if,jl->jifl", Fr[0], Pr[0])
        ds = np.einsum("if,jl->jifl", Fr[1], Pr[0])
        dz = np.einsum("if,jl->jifl", Fr[0], Pr[1])
        d1 = ds - slope[..., None, None] * dz
        d3 = dz / h[None, :, None, None]
        sw = np.sqrt(gE.weights())[..., None, None]
        ncol = vals.shape[2] * vals.shape[3]
        design = np.concatenate([(sw * d1).reshape(-1, ncol), (sw * d3).reshape(-1, ncol)])[:, 1:]
        b = np.concatenate([(sw[..., 0, 0] * rhs[0]).ravel(), (sw[..., 0, 0] * rhs[1]).ravel()])
        coef, *_ = linalg.lstsq(design, b)
        P = vals.reshape(gE.shape + (ncol,))[..., 1:] @ coef
        return P - gE.integrate(P) / gE.integrate(np.ones(gE.shape))
