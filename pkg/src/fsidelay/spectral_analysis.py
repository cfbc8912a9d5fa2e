"""Eigenstructure of the discrete operator and its adjoint, the Hautus test
for stabilizability, and the spectral projection onto modes to the right
of ``Re lambda = -gamma``.

Matrices are in orthonormal state coordinates, so the state inner product
is Euclidean and ``A_adj`` should equal ``A^T`` up to assembly error.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import CriterionError

CLUSTER_TOL = 1e-7
BIORTH_COND_LIMIT = 1e8


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue with unit right eigenvector and bi-orthonormal left vector.

    ``left`` satisfies ``A_adj left = conj(value) left`` and
    ``left^H right = 1``. ``cluster`` labels eigenvalues that coincide to
    ``CLUSTER_TOL`` (relative); ``cond`` is the conditioning of the
    bi-orthogonalization of that cluster.
    """

    value: complex
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    residual_right: float
    residual_left: float
    cluster: int = 0
    cond: float = 1.0

    @property
    def flagged(self):
        return self.cond > BIORTH_COND_LIMIT


def _clusters(values, tol):
    scale = max(1.0, float(np.max(np.abs(values)))) if len(values) else 1.0
    labels = -np.ones(len(values), dtype=int)
    nxt = 0
    for i in range(len(values)):
        if labels[i] >= 0:
            continue
        close = np.abs(values - values[i]) <= tol * scale
        labels[close & (labels < 0)] = nxt
        nxt += 1
    return labels


def _match_left(vals, V, mu, W):
    """For each right eigenvalue pick left vectors with eigenvalue ``conj``."""
    scale = max(1.0, float(np.max(np.abs(vals))))
    used = np.zeros(len(mu), dtype=bool)
    order = []
    for lam in vals:
        d = np.abs(mu - np.conj(lam)) + used * 10.0 * scale * 1e9
        j = int(np.argmin(d))
        used[j] = True
        order.append(j)
    return W[:, order]


def compute_spectrum(system, count=None, shift=0.0):
    """Rightmost eigenpairs of the reduced matrix with matched adjoint vectors.

    Parameters
    ----------
    system : DiscreteSystem or object with ``A`` and ``A_adj``
    count : int, optional
        Number of pairs kept (all when omitted).
    shift : float
        The dense eigensolve is applied to ``A - shift I``; eigenvalues are
        reported unshifted.

    Returns
    -------
    list of EigenPair
        Sorted by decreasing real part, then increasing imaginary part.
    """
    A = np.asarray(system.A, dtype=float)
    Aadj = np.asarray(system.A_adj, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    vals, V = linalg.eig(A - shift * I)
    mu, W = linalg.eig(Aadj - shift * I)
    vals = vals + shift
    mu = mu + shift
    order = np.lexsort((vals.imag, -vals.real))
    vals, V = vals[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    Wm = _match_left(vals, V, mu, W)
    labels = _clusters(vals, CLUSTER_TOL)
    conds = np.ones(n)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        Rc = V[:, idx]
        Lc = Wm[:, idx]
        G = Lc.conj().T @ Rc
        c = np.linalg.cond(G)
        conds[idx] = c
        Wm[:, idx] = Lc @ np.linalg.inv(G).conj().T
    keep = n if count is None else min(int(count), n)
    pairs = []
    for i in range(keep):
        lam = vals[i]
        r = V[:, i]
        l = Wm[:, i]
        rr = np.linalg.norm(A @ r - lam * r)
        rl = np.linalg.norm(Aadj @ l - np.conj(lam) * l) / max(np.linalg.norm(l), 1e-300)
        pairs.append(EigenPair(complex(lam), r, l, float(rr), float(rl), int(labels[i]), float(conds[i])))
    return pairs


def spectral_abscissa(pairs):
    return max(p.value.real for p in pairs)


# ---------------------------------------------------------------------------
# Hautus test


@dataclass(frozen=True)
class HautusReport:
    """Per-eigenvalue outcome of the Hautus test.

    ``entries`` holds ``(lambda, ratio, passed)`` where ``ratio`` is the
    smallest ``|B* eps| / |eps|`` over the adjoint eigenspace of ``lambda``.
    """

    sigma: float
    tol_rel: float
    entries: list
    complete: bool = True

    @property
    def min_ratio(self):
        return min((e[1] for e in self.entries), default=np.inf)

    @property
    def passed(self):
        return self.complete and all(e[2] for e in self.entries)

    def rows(self):
        return [(e[0].real, e[0].imag, e[1], bool(e[2])) for e in self.entries]


def _bstar_images(system, pair_list):
    """Columns of ``B*`` applied to the given adjoint vectors."""
    from . import discretization as disc

    shape_ = getattr(system, "control", None)
    B = np.asarray(system.B)
    cols = []
    for p in pair_list:
        eps = p.left / np.linalg.norm(p.left)
        if isinstance(shape_, disc.ControlShape):
            img = disc.b_star(system, shape_, eps, np.conj(p.value))
            cols.append((img * np.sqrt(shape_.wf)).ravel())
        else:
            cols.append(B.T @ eps.conj())
    return cols


def hautus_test(system, sigma, tol_rel=1e-6, pairs=None):
    """Fattorini-Hautus test on every eigenvalue with ``Re lambda >= -sigma``.

    For an eigenvalue of multiplicity ``k`` the smallest singular value of
    ``B*`` restricted to an orthonormal basis of its adjoint eigenspace is
    reported, so every adjoint eigenvector in the space is covered.

    Parameters
    ----------
    system : DiscreteSystem or object with ``A``, ``A_adj``, ``B``
    sigma : float
    tol_rel : float
    pairs : list of EigenPair, optional
    """
    if system.B is None:
        raise CriterionError("the system has no control operator")
    if pairs is None:
        pairs = compute_spectrum(system)
    complete = len(pairs) == np.asarray(system.A).shape[0] or (
        min(p.value.real for p in pairs) < -sigma
    )
    sel = [p for p in pairs if p.value.real >= -sigma]
    entries = []
    for lab in dict.fromkeys(p.cluster for p in sel):
        group = [p for p in sel if p.cluster == lab]
        E = np.array([p.left for p in group]).T
        Q, _ = np.linalg.qr(E)
        basis = [EigenPair(group[0].value, group[0].right, Q[:, i], 0.0, 0.0) for i in range(Q.shape[1])]
        imgs = np.array(_bstar_images(system, basis)).T
        if imgs.size == 0:
            ratio = 0.0
        else:
            ratio = float(np.linalg.svd(imgs, compute_uv=False)[-1]) if imgs.shape[0] >= imgs.shape[1] else 0.0
        entries.append((group[0].value, ratio, ratio >= tol_rel))
    return HautusReport(float(sigma), float(tol_rel), entries, bool(complete))


# ---------------------------------------------------------------------------
# unstable subspace


@dataclass(frozen=True)
class UnstableProjection:
    """Real bases of the unstable invariant subspace and reduced matrices.

    ``R`` spans the right invariant subspace, ``Lb`` the left one with
    ``Lb^T R = I``; ``P_u = R Lb^T``. ``A_u = Lb^T A R`` and
    ``B_u = Lb^T B``.
    """

    count: int
    values: np.ndarray
    R: np.ndarray = field(repr=False)
    Lb: np.ndarray = field(repr=False)
    A_u: np.ndarray = field(repr=False)
    B_u: np.ndarray = field(repr=False)
    gamma: float = 0.0

    @property
    def P_u(self):
        return self.R @ self.Lb.T


def unstable_mode_count(system, gamma, pairs=None, margin=1e-6):
    """Count eigenvalues with ``Re lambda > -gamma`` and build the projection.

    Raises
    ------
    CriterionError
        If an eigenvalue lies within ``margin`` of the line ``-gamma``.
    """
    if pairs is None:
        pairs = compute_spectrum(system)
    A = np.asarray(system.A, dtype=float)
    for p in pairs:
        if abs(p.value.real + gamma) < margin:
            raise CriterionError(
                f"eigenvalue {p.value:.6g} lies within {margin:g} of Re = -{gamma:g}; "
                "choose another decay rate"
            )
    sel = [p for p in pairs if p.value.real > -gamma]
    rcols, lcols, values = [], [], []
    for p in sel:
        values.append(p.value)
        if abs(p.value.imag) <= CLUSTER_TOL * max(1.0, abs(p.value)):
            rcols.append(np.real(p.right))
            lcols.append(np.real(p.left))
        elif p.value.imag > 0:
            rcols += [p.right.real, p.right.imag]
            lcols += [p.left.real, p.left.imag]
    n = A.shape[0]
    if not rcols:
        nB = 0 if system.B is None else np.asarray(system.B).shape[1]
        return UnstableProjection(0, np.array([]), np.zeros((n, 0)), np.zeros((n, 0)),
                                  np.zeros((0, 0)), np.zeros((0, nB)), float(gamma))
    R = np.array(rcols).T
    Lb = np.array(lcols).T
    Lb = Lb @ np.linalg.inv(Lb.T @ R).T
    A_u = Lb.T @ A @ R
    B_u = Lb.T @ np.asarray(system.B) if system.B is not None else None
    return UnstableProjection(len(values), np.array(values), R, Lb, A_u, B_u, float(gamma))


@dataclass(frozen=True)
class MatrixSystem:
    """Plain matrix triple for toy problems and plate-only checks."""

    A: np.ndarray
    B: np.ndarray = None
    A_adj: np.ndarray = None
    control: object = None

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        if self.A_adj is None:
            object.__setattr__(self, "A_adj", self.A.T.copy())
        if self.B is not None:
            object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)).reshape(self.A.shape[0], -1))
