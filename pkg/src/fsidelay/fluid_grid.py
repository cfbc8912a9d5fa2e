"""Collocation grid on a 2D reference domain ``Omega(eta_ref)``.

Points are ``(s_i, z_j (1 + eta_ref(s_i)))`` with uniform ``s_i`` on the
torus and Chebyshev-Gauss-Lobatto ``z_j`` in [0, 1]. Physical derivatives
follow from the chain rule of the vertical stretch::

    d/dy1 = d/ds - z eta_ref' / (1 + eta_ref) d/dz
    d/dy3 = 1 / (1 + eta_ref) d/dz

Arrays are laid out with the two grid axes last: ``(..., nz + 1, nx)``;
index ``0`` along the vertical axis is the bottom wall and ``-1`` the plate.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import PlateProfile, TorusGrid
from .grids import (
    chebyshev_diff_matrix,
    chebyshev_nodes,
    clenshaw_curtis_weights,
    fourier_derivative,
)


@dataclass(frozen=True)
class FluidGrid:
    """Tensor collocation grid of ``Omega(eta_ref)`` in two dimensions.

    Parameters
    ----------
    torus : TorusGrid
        Horizontal grid (``dim == 2``).
    nz : int
        Vertical polynomial degree; the grid has ``nz + 1`` levels.
    eta_ref : PlateProfile, optional
        Reference profile (flat if omitted).
    """

    torus: TorusGrid
    nz: int
    eta_ref: PlateProfile = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.torus.dim != 2:
            raise ValueError("FluidGrid supports dim == 2 only")
        if self.nz < 2:
            raise ValueError("nz must be at least 2")
        if self.eta_ref is None:
            object.__setattr__(self, "eta_ref", PlateProfile.zeros(self.torus))
        if self.eta_ref.grid != self.torus:
            raise ValueError("reference profile lives on a different torus grid")
        self.eta_ref.check_admissible()
        z = chebyshev_nodes(self.nz)
        x = self.torus.axes()[0]
        h = 1.0 + self.eta_ref.values
        hs = self.eta_ref.derivative()
        self._cache.update(
            z=z,
            x=x,
            Dz=chebyshev_diff_matrix(self.nz),
            wz=clenshaw_curtis_weights(self.nz),
            h=h,
            hs=hs,
            slope=np.outer(z, hs / h),
        )

    @property
    def L(self):
        return self.torus.L1

    @property
    def nx(self):
        return self.torus.n_nodes

    @property
    def shape(self):
        return (self.nz + 1, self.nx)

    @property
    def x(self):
        return self._cache["x"]

    @property
    def z(self):
        return self._cache["z"]

    @property
    def thickness(self):
        """``1 + eta_ref`` at the horizontal nodes."""
        return self._cache["h"]

    @property
    def thickness_slope(self):
        """``eta_ref'`` at the horizontal nodes."""
        return self._cache["hs"]

    @property
    def vertical_weights(self):
        """Clenshaw-Curtis weights of the vertical nodes on [0, 1]."""
        return self._cache["wz"]

    @property
    def vertical_diff(self):
        """Chebyshev differentiation matrix in ``z``."""
        return self._cache["Dz"]

    def coordinates(self):
        """Physical coordinates ``(y1, y3)``, each of shape ``(nz + 1, nx)``."""
        y1 = np.broadcast_to(self.x, self.shape)
        y3 = np.outer(self.z, self.thickness)
        return y1, y3

    def weights(self):
        """Quadrature weights of the physical domain (Clenshaw-Curtis x trapezoid)."""
        if "w" not in self._cache:
            dx = self.L / self.nx
            self._cache["w"] = np.outer(self._cache["wz"], dx * self.thickness)
        return self._cache["w"]

    def integrate(self, f):
        """Domain integral over the last two axes."""
        return np.tensordot(np.asarray(f), self.weights(), axes=([-2, -1], [0, 1]))

    def boundary_integrate(self, f):
        """Integral of a top-boundary trace w.r.t. the horizontal variable."""
        return np.asarray(f).sum(axis=-1) * (self.L / self.nx)

    def ds(self, f):
        return fourier_derivative(f, self.L, 1, axis=-1)

    def dz(self, f):
        return np.matmul(self._cache["Dz"], f)

    def grad(self, f):
        """Physical gradient; a new axis of length 2 is inserted before the grid axes."""
        f = np.asarray(f, dtype=float)
        fz = self.dz(f)
        d1 = self.ds(f) - self._cache["slope"] * fz
        d3 = fz / self.thickness
        return np.stack([d1, d3], axis=-3)

    def div(self, v):
        """Divergence of a field whose component axis is at position ``-3``."""
        g = self.grad(v)
        return g[..., 0, 0, :, :] + g[..., 1, 1, :, :]

    def laplacian(self, f):
        g = self.grad(f)
        gg = self.grad(g)
        return gg[..., 0, 0, :, :] + gg[..., 1, 1, :, :]

    def top(self, f):
        return np.asarray(f)[..., -1, :]

    def bottom(self, f):
        return np.asarray(f)[..., 0, :]

    def sample(self, func):
        """Evaluate ``func(y1, y3)`` on the grid."""
        y1, y3 = self.coordinates()
        return np.asarray(func(y1, y3), dtype=float)

    def top_normal(self):
        """Unnormalized and unit outward normals of the plate, shape (2, nx)."""
        N = np.stack([-self.thickness_slope, np.ones(self.nx)])
        return N, N / np.linalg.norm(N, axis=0)

    def with_reference(self, eta_ref):
        """Same resolution over another reference profile."""
        return FluidGrid(self.torus, self.nz, eta_ref)
