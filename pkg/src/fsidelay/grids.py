"""Spectral building blocks: Fourier differentiation on the torus, Chebyshev
collocation in the vertical direction and shifted Legendre polynomials.

The vertical coordinate of every domain is the computational variable
``z in [0, 1]``; a physical height ``y3 = z * (1 + eta(s))`` is recovered
by the domain classes built on top of these helpers.
"""

import numpy as np
from numpy.polynomial import legendre as npleg


def fourier_derivative(values, period, order=1, axis=-1):
    """Spectral derivative of periodic samples along ``axis``.

    Parameters
    ----------
    values : ndarray
        Samples on a uniform grid ``x_i = i * period / n``.
    period : float
        Length of the periodic interval.
    order : int
        Derivative order (0 returns a copy).
    axis : int
        Axis holding the periodic direction.

    Returns
    -------
    ndarray
        Real array of the same shape.
    """
    values = np.asarray(values, dtype=float)
    if order == 0:
        return values.copy()
    n = values.shape[axis]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=period / n)
    symbol = (1j * k) ** order
    if n % 2 == 0 and order % 2 == 1:
        # the Nyquist mode has no odd derivative on a real grid
        symbol[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = symbol.size
    coeffs = np.fft.rfft(values, axis=axis) * symbol.reshape(shape)
    return np.fft.irfft(coeffs, n=n, axis=axis)


def fourier_interpolate(values, period, points):
    """Evaluate the trigonometric interpolant of 1D periodic samples.

    Parameters
    ----------
    values : ndarray, shape (n,)
        Samples on the uniform grid.
    period : float
        Period of the grid.
    points : array_like
        Evaluation abscissae (any shape).

    Returns
    -------
    ndarray
        Interpolated values with the shape of ``points``.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    coeffs = np.fft.fft(values) / n
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        # split the Nyquist coefficient symmetrically to keep the interpolant real
        nyq = n // 2
        coeffs = np.append(coeffs, coeffs[nyq] / 2.0)
        coeffs[nyq] /= 2.0
        freqs = np.append(freqs, float(nyq))
        freqs[nyq] = -float(nyq)
    pts = np.asarray(points, dtype=float)
    phase = np.exp(2j * np.pi * np.multiply.outer(pts, freqs) / period)
    return np.real(phase @ coeffs)


def chebyshev_nodes(n):
    """Chebyshev-Gauss-Lobatto nodes on [0, 1], increasing, ``n + 1`` points."""
    j = np.arange(n + 1)
    return 0.5 * (1.0 - np.cos(np.pi * j / n))


def chebyshev_diff_matrix(n):
    """Differentiation matrix on :func:`chebyshev_nodes` (interval [0, 1])."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    # z = (1 - x) / 2 so d/dz = -2 d/dx
    return -2.0 * d


def clenshaw_curtis_weights(n):
    """Clenshaw-Curtis weights for :func:`chebyshev_nodes` on [0, 1]."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    interior = slice(1, n)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
        v -= np.cos(n * theta[interior]) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
    w[interior] = 2.0 * v / n
    return 0.5 * w


def legendre_values(z, degree, derivative=0):
    """Shifted Legendre polynomials ``P_l(2z - 1)`` for ``l <= degree``.

    Returns
    -------
    ndarray, shape (len(z), degree + 1)
    """
    t = 2.0 * np.asarray(z, dtype=float) - 1.0
    out = np.empty((t.size, degree + 1))
    for l in range(degree + 1):
        c = np.zeros(l + 1)
        c[l] = 1.0
        if derivative:
            c = npleg.legder(c, derivative) * 2.0**derivative
        out[:, l] = npleg.legval(t, c)
    return out


def legendre_mass(degree):
    """Diagonal of the L2(0, 1) Gram matrix of shifted Legendre polynomials."""
    l = np.arange(degree + 1)
    return 1.0 / (2 * l + 1)


def legendre_diff_coeffs(degree):
    """Matrix ``D`` with ``d/dz sum_l c_l P_l = sum_j (D c)_j P_j``."""
    d = np.zeros((degree + 1, degree + 1))
    for l in range(degree + 1):
        for j in range(l - 1, -1, -2):
            d[j, l] = 2.0 * (2 * j + 1)
    return d


def real_fourier_values(x, period, kmax, derivative=0):
    """Real Fourier functions ``1, cos(kx), sin(kx)`` (k = 1..kmax) at ``x``.

    Column ``0`` is the constant, column ``2k-1`` is ``cos`` and ``2k`` is
    ``sin`` of wavenumber ``2 pi k / period``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, 2 * kmax + 1))
    out[:, 0] = 1.0 if derivative == 0 else 0.0
    for k in range(1, kmax + 1):
        kap = 2.0 * np.pi * k / period
        ph = kap * x
        # d^m/dx^m cos = kap^m cos(ph + m pi/2)
        shift = derivative * np.pi / 2.0
        out[:, 2 * k - 1] = kap**derivative * np.cos(ph + shift)
        out[:, 2 * k] = kap**derivative * np.sin(ph + shift)
    return out


def real_fourier_mass(period, kmax):
    """Diagonal of the L2 Gram matrix of :func:`real_fourier_values`."""
    m = np.full(2 * kmax + 1, period / 2.0)
    m[0] = period
    return m


def real_fourier_wavenumbers(period, kmax):
    """Angular wavenumber of every real Fourier function (0 for the constant)."""
    k = np.zeros(2 * kmax + 1)
    for j in range(1, kmax + 1):
        k[2 * j - 1] = k[2 * j] = 2.0 * np.pi * j / period
    return k


def real_fourier_diff_coeffs(period, kmax):
    """Matrix ``D`` with ``d/dx sum_f c_f F_f = sum_g (D c)_g F_g``."""
    d = np.zeros((2 * kmax + 1, 2 * kmax + 1))
    for k in range(1, kmax + 1):
        kap = 2.0 * np.pi * k / period
        d[2 * k, 2 * k - 1] = -kap  # (cos)' = -kap sin
        d[2 * k - 1, 2 * k] = kap  # (sin)' = kap cos
    return d
