"""Deforming domains ``Omega(eta) = {(s, y3): 0 < y3 < 1 + eta(s)}`` over a
horizontal torus, the vertical-stretch map between two such domains, its
cofactor/Piola transform, boundary frames and the fluid-to-plate contact
force.

Conventions
-----------
``domain_map(eta1, eta2, .)`` maps ``Omega(eta1)`` onto ``Omega(eta2)``.
The Piola transform pulls a velocity given on the image domain back to the
source domain: ``piola_transform(U, eta_src, eta_dst, y)`` returns
``Cof(grad X(y))^T U(X(y))`` with ``X = domain_map(eta_src, eta_dst, .)``,
so ``eta_src`` plays the role of the reference profile and ``eta_dst`` the
role of the current one.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InadmissibleProfileError
from .grids import fourier_derivative

ADMISSIBILITY_THRESHOLD = 1e-6


@dataclass(frozen=True)
class TorusGrid:
    """Uniform collocation grid on the horizontal torus.

    Parameters
    ----------
    dim : int
        Dimension of the fluid domain (2 or 3); the torus has ``dim - 1``
        directions.
    L1 : float
        Period of the first horizontal direction.
    n_modes : int
        Number of resolved real Fourier modes per direction (even, >= 4).
        The collocation grid carries ``2 * n_modes`` nodes per direction so
        that quadratic products are integrated without aliasing.
    L2 : float, optional
        Period of the second direction (``dim == 3`` only).
    """

    dim: int
    L1: float
    n_modes: int
    L2: float = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not self.L1 > 0:
            raise ValueError("L1 must be positive")
        if self.dim == 3 and (self.L2 is None or not self.L2 > 0):
            raise ValueError("L2 must be positive when dim == 3")
        if self.n_modes < 4 or self.n_modes % 2:
            raise ValueError("n_modes must be even and >= 4")

    @property
    def periods(self):
        return (self.L1,) if self.dim == 2 else (self.L1, self.L2)

    @property
    def n_nodes(self):
        return 2 * self.n_modes

    @property
    def shape(self):
        return (self.n_nodes,) * (self.dim - 1)

    @property
    def spacing(self):
        return tuple(L / self.n_nodes for L in self.periods)

    def axes(self):
        """1D node arrays, one per horizontal direction."""
        return tuple(np.arange(self.n_nodes) * h for h in self.spacing)

    def nodes(self):
        """Node coordinates with shape ``shape + (dim - 1,)``."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_area(self):
        return float(np.prod(self.spacing))


def _split_modes(n, period):
    """FFT indices, angular wavenumbers and weights with the Nyquist mode split
    into two half-weight terms so that interpolants stay real."""
    idx = list(range(n))
    k = list(np.fft.fftfreq(n, d=1.0 / n))
    w = [1.0] * n
    if n % 2 == 0:
        nyq = n // 2
        k[nyq] = -nyq
        w[nyq] = 0.5
        idx.append(nyq)
        k.append(nyq)
        w.append(0.5)
    return np.array(idx), 2.0 * np.pi * np.array(k, dtype=float) / period, np.array(w)


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise ValueError("profile values must be finite")


@dataclass(frozen=True)
class PlateProfile:
    """Scalar field on the torus (plate displacement or perturbation).

    Parameters
    ----------
    grid : TorusGrid
    values : ndarray
        Samples at the grid nodes, shape ``grid.shape``.
    mean_zero : bool
        Declares membership in the mean-zero subspace; checked at
        construction against ``1e-12 * max|values|``.
    """

    grid: TorusGrid
    values: np.ndarray = field(repr=False)
    mean_zero: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"profile shape {vals.shape} does not match grid {self.grid.shape}")
        _check_finite(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mean_zero:
            scale = np.max(np.abs(vals)) if vals.size else 0.0
            if abs(vals.mean()) > 1e-12 * max(scale, np.finfo(float).tiny):
                if scale > 0:
                    raise ValueError("profile flagged mean_zero has nonzero mean")

    @classmethod
    def from_function(cls, grid, func, mean_zero=False):
        """Sample ``func`` (taking the node coordinates) on the grid."""
        pts = grid.nodes()
        vals = func(*np.moveaxis(pts, -1, 0))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), grid.shape)
        if mean_zero:
            vals = vals - vals.mean()
        return cls(grid, vals, mean_zero)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape), True)

    def derivative(self, direction=0, order=1):
        """Spectral derivative along a horizontal direction."""
        return fourier_derivative(self.values, self.grid.periods[direction], order, axis=direction)

    def gradient(self):
        """Horizontal gradient, shape ``grid.shape + (dim - 1,)``."""
        return np.stack([self.derivative(d) for d in range(self.grid.dim - 1)], axis=-1)

    def mean(self):
        return float(self.values.mean())

    def projected(self):
        """Orthogonal projection onto the mean-zero subspace."""
        return PlateProfile(self.grid, self.values - self.values.mean(), True)

    def min_thickness(self):
        return float(np.min(1.0 + self.values))

    def check_admissible(self, threshold=ADMISSIBILITY_THRESHOLD):
        """Raise :class:`InadmissibleProfileError` if ``min(1 + eta) < threshold``."""
        m = self.min_thickness()
        if m < threshold:
            raise InadmissibleProfileError(
                f"profile is inadmissible: min(1 + eta) = {m:.3e} < {threshold:.1e}"
            )
        return self

    def evaluate(self, points, derivative=None):
        """Trigonometric interpolation at arbitrary horizontal points.

        Parameters
        ----------
        points : array_like, shape (..., dim - 1)
        derivative : int, optional
            Direction index; if given the derivative along it is returned.
        """
        pts = np.asarray(points, dtype=float)
        if self.grid.dim == 2 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        coeffs = np.fft.fftn(self.values) / self.values.size
        idx, wavenumbers, weights = [], [], []
        for L in self.grid.periods:
            i, k, w = _split_modes(self.grid.n_nodes, L)
            idx.append(i)
            wavenumbers.append(k)
            weights.append(w)
        if self.grid.dim == 2:
            c = coeffs[idx[0]] * weights[0]
            if derivative is not None:
                c = c * 1j * wavenumbers[0]
            return np.real(np.exp(1j * np.multiply.outer(pts[..., 0], wavenumbers[0])) @ c)
        c = coeffs[np.ix_(idx[0], idx[1])] * np.outer(weights[0], weights[1])
        if derivative is not None:
            c = c * 1j * (wavenumbers[derivative][:, None] if derivative == 0 else wavenumbers[1][None, :])
        e1 = np.exp(1j * np.multiply.outer(pts[..., 0], wavenumbers[0]))
        e2 = np.exp(1j * np.multiply.outer(pts[..., 1], wavenumbers[1]))
        return np.real(np.einsum("...i,ij,...j->...", e1, c, e2))

    def fourier_coefficients(self):
        """Complex Fourier coefficients as ``(mode, real, imag)`` rows.

        ``mode`` is the flat index into ``numpy.fft.fftn`` ordering; in 2D it
        is the signed integer wavenumber.
        """
        coeffs = np.fft.fftn(self.values) / self.values.size
        rows = []
        if self.grid.dim == 2:
            freqs = np.fft.fftfreq(self.grid.n_nodes, d=1.0 / self.grid.n_nodes).astype(int)
            for k, c in zip(freqs, coeffs):
                rows.append((int(k), float(c.real), float(c.imag)))
        else:
            for idx, c in enumerate(coeffs.ravel()):
                rows.append((idx, float(c.real), float(c.imag)))
        return rows

    @classmethod
    def from_fourier_coefficients(cls, grid, rows, mean_zero=False):
        """Inverse of :meth:`fourier_coefficients`."""
        coeffs = np.zeros(grid.shape, dtype=complex)
        n = grid.n_nodes
        for mode, re, im in rows:
            if grid.dim == 2:
                coeffs[int(mode) % n] = re + 1j * im
            else:
                coeffs.ravel()[int(mode)] = re + 1j * im
        vals = np.real(np.fft.ifftn(coeffs * coeffs.size))
        return cls(grid, vals, mean_zero)

    def to_csv(self, path):
        """Write ``node,value`` rows (flat node index)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "value"])
            for i, v in enumerate(self.values.ravel()):
                w.writerow([i, repr(float(v))])

    @classmethod
    def from_csv(cls, grid, path, mean_zero=False):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        vals = np.zeros(int(np.prod(grid.shape)))
        if len(rows) != vals.size:
            raise ValueError(f"expected {vals.size} rows, found {len(rows)}")
        for node, value in rows:
            vals[int(node)] = float(value)
        return cls(grid, vals.reshape(grid.shape), mean_zero)

    def fourier_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "real", "imag"])
            for mode, re, im in self.fourier_coefficients():
                w.writerow([mode, repr(re), repr(im)])

    @classmethod
    def fourier_from_csv(cls, grid, path, mean_zero=False):
        with open(path, newline="") as fh:
            rows = [(int(m), float(r), float(i)) for m, r, i in list(csv.reader(fh))[1:]]
        return cls.from_fourier_coefficients(grid, rows, mean_zero)


@dataclass(frozen=True)
class ReferenceDomain:
    """Fixed reference domain ``Omega(eta_ref)``."""

    grid: TorusGrid
    eta_ref: PlateProfile

    def __post_init__(self):
        if self.eta_ref.grid != self.grid:
            raise ValueError("reference profile lives on a different grid")
        self.eta_ref.check_admissible()


@dataclass(frozen=True)
class BoundaryFrame:
    """Normals and tangents of ``Omega(eta)`` at the boundary nodes.

    Attributes
    ----------
    N : ndarray, shape grid.shape + (dim,)
        Unnormalized top normal ``(-grad eta, 1)``.
    n : ndarray
        Unit outward top normal.
    tau : tuple of ndarray
        Unnormalized top tangents ``e_i + d_i eta e_dim``.
    n_bottom, tau_bottom
        Constant bottom frame ``-e_dim`` and ``e_i``.
    """

    N: np.ndarray
    n: np.ndarray
    tau: tuple
    n_bottom: np.ndarray
    tau_bottom: tuple


def _profiles_at(eta, horizontal):
    vals = eta.evaluate(horizontal)
    grads = [eta.evaluate(horizontal, derivative=d) for d in range(eta.grid.dim - 1)]
    return vals, grads


def domain_map(eta1, eta2, y):
    """Vertical-stretch map from ``Omega(eta1)`` onto ``Omega(eta2)``.

    Parameters
    ----------
    eta1, eta2 : PlateProfile
        Source and destination profiles.
    y : array_like, shape (..., dim)
        Points of ``Omega(eta1)``.

    Returns
    -------
    ndarray
        ``(y', y3 (1 + eta2(y')) / (1 + eta1(y')))`` with the shape of ``y``.
    """
    eta1.check_admissible()
    eta2.check_admissible()
    y = np.asarray(y, dtype=float)
    h = y[..., :-1]
    e1 = eta1.evaluate(h)
    e2 = eta2.evaluate(h)
    top = 1.0 + e1
    tol = 1e-12 * np.maximum(1.0, np.abs(top))
    if np.any(y[..., -1] < -tol) or np.any(y[..., -1] > top + tol):
        raise ValueError("point lies outside the source domain")
    out = y.copy()
    out[..., -1] = y[..., -1] * (1.0 + e2) / top
    return out


def map_jacobian(eta1, eta2, y):
    """Jacobian of :func:`domain_map` and its determinant.

    Returns
    -------
    J : ndarray, shape (..., dim, dim)
        ``J[..., i, j] = d X_i / d y_j``.
    det : ndarray, shape (...)
        Equal to ``(1 + eta2) / (1 + eta1)``.
    """
    eta1.check_admissible()
    eta2.check_admissible()
    y = np.asarray(y, dtype=float)
    dim = y.shape[-1]
    h = y[..., :-1]
    e1, g1 = _profiles_at(eta1, h)
    e2, g2 = _profiles_at(eta2, h)
    r = (1.0 + e2) / (1.0 + e1)
    J = np.zeros(y.shape[:-1] + (dim, dim))
    for i in range(dim - 1):
        J[..., i, i] = 1.0
        dr = (g2[i] * (1.0 + e1) - g1[i] * (1.0 + e2)) / (1.0 + e1) ** 2
        J[..., dim - 1, i] = y[..., -1] * dr
    J[..., dim - 1, dim - 1] = r
    return J, np.linalg.det(J)


def cofactor(M):
    """Cofactor matrix of 2x2 or 3x3 matrices (stacked on leading axes).

    Satisfies ``M @ Cof(M).T = det(M) I`` also for singular ``M``.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if M.shape[-2:] not in ((2, 2), (3, 3)):
        raise ValueError("cofactor is defined here for 2x2 and 3x3 matrices")
    C = np.empty_like(M)
    if n == 2:
        C[..., 0, 0] = M[..., 1, 1]
        C[..., 0, 1] = -M[..., 1, 0]
        C[..., 1, 0] = -M[..., 0, 1]
        C[..., 1, 1] = M[..., 0, 0]
        return C
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            minor = M[..., r[0], c[0]] * M[..., r[1], c[1]] - M[..., r[0], c[1]] * M[..., r[1], c[0]]
            C[..., i, j] = (-1) ** (i + j) * minor
    return C


def piola_transform(U, eta_src, eta_dst, y):
    """Pull a velocity on ``Omega(eta_dst)`` back to ``Omega(eta_src)``.

    Parameters
    ----------
    U : callable or ndarray
        Either a function of points of ``Omega(eta_dst)`` returning vectors
        (shape ``(..., dim)``) or the samples ``U(X(y))`` already evaluated
        on the image points.
    eta_src, eta_dst : PlateProfile
        Reference and current profiles; ``X = domain_map(eta_src, eta_dst)``.
    y : array_like, shape (..., dim)
        Points of ``Omega(eta_src)``.

    Returns
    -------
    ndarray, shape (..., dim)
        ``Cof(grad X(y))^T U(X(y))``.
    """
    y = np.asarray(y, dtype=float)
    x = domain_map(eta_src, eta_dst, y)
    Ux = U(x) if callable(U) else np.asarray(U, dtype=float)
    if Ux.shape != y.shape:
        raise ValueError(f"velocity samples have shape {Ux.shape}, expected {y.shape}")
    J, _ = map_jacobian(eta_src, eta_dst, y)
    C = cofactor(J)
    return np.einsum("...ki,...k->...i", C, Ux)


def boundary_frame(eta):
    """Top and bottom frames of ``Omega(eta)`` at the grid nodes."""
    eta.check_admissible()
    dim = eta.grid.dim
    grad = eta.gradient()
    N = np.concatenate([-grad, np.ones(eta.grid.shape + (1,))], axis=-1)
    n = N / np.linalg.norm(N, axis=-1, keepdims=True)
    taus = []
    for i in range(dim - 1):
        t = np.zeros(eta.grid.shape + (dim,))
        t[..., i] = 1.0
        t[..., -1] = grad[..., i]
        taus.append(t)
    nb = np.zeros(dim)
    nb[-1] = -1.0
    tb = tuple(np.eye(dim)[i] for i in range(dim - 1))
    return BoundaryFrame(N=N, n=n, tau=tuple(taus), n_bottom=nb, tau_bottom=tb)


def project_mean_zero(values):
    """Orthogonal projection of grid samples onto the mean-zero subspace."""
    values = np.asarray(values, dtype=float)
    return values - values.mean()


def contact_force(grad_u, p, eta, nu):
    """Vertical traction exerted by the fluid on the plate.

    Parameters
    ----------
    grad_u : ndarray, shape grid.shape + (dim, dim)
        Velocity gradient ``grad_u[..., i, j] = dU_i/dx_j`` at the top nodes.
    p : ndarray, shape grid.shape
        Pressure at the top nodes.
    eta : PlateProfile
        Current profile.
    nu : float
        Viscosity.

    Returns
    -------
    ndarray
        ``-sqrt(1 + |grad eta|^2) (T(U, P) n . e_dim)`` at the nodes; apply
        :func:`project_mean_zero` for the plate forcing.
    """
    frame = boundary_frame(eta)
    dim = eta.grid.dim
    grad_u = np.asarray(grad_u, dtype=float)
    D = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    T = 2.0 * nu * D - np.asarray(p, dtype=float)[..., None, None] * np.eye(dim)
    # sqrt(1+|grad eta|^2) n = N
    return -np.einsum("...j,...j->...", T[..., dim - 1, :], frame.N)
