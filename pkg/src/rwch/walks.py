"""Finite random walk spaces.

A random walk space is stored as a node set, a sparse row-stochastic kernel
``P`` with ``P[x, y] = m_x({y})`` and a strictly positive measure ``nu``.
Every constructor validates stochasticity, invariance, reversibility and
connectedness numerically and keeps the residuals around.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "WalkError",
    "Thresholds",
    "NodeSpace",
    "WalkChecks",
    "RandomWalk",
    "as_mask",
    "from_weighted_graph",
    "from_markov_kernel",
    "from_point_cloud",
    "from_grid_kernel",
    "restrict",
    "convolve",
    "interaction",
    "mean_curvature",
    "embedding_constants",
]


class WalkError(ValueError):
    """Raised when a random walk cannot be built or fails validation."""


@dataclass(frozen=True)
class Thresholds:
    stochastic: float = 1e-12
    invariance: float = 1e-10
    reversibility: float = 1e-10


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class NodeSpace:
    n: int
    labels: tuple[str, ...] | None = None
    coordinates: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise WalkError("a node space needs at least one node")
        if self.labels is not None:
            if len(self.labels) != self.n:
                raise WalkError("label count does not match node count")
            if len(set(self.labels)) != self.n:
                raise WalkError("node labels must be unique")

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)

    def index(self, label: str) -> int:
        if self.labels is None:
            return int(label)
        return self.labels.index(label)


@dataclass(frozen=True)
class WalkChecks:
    stochastic_residual: float
    invariance_residual: float
    reversibility_residual: float
    n_components: int
    invariant: bool
    reversible: bool

    @property
    def connected(self) -> bool:
        return self.n_components == 1

    def as_dict(self) -> dict:
        return {
            "stochastic_residual": self.stochastic_residual,
            "invariance_residual": self.invariance_residual,
            "reversibility_residual": self.reversibility_residual,
            "n_components": self.n_components,
            "invariant": self.invariant,
            "reversible": self.reversible,
            "connected": self.connected,
        }


@dataclass(frozen=True, eq=False)
class RandomWalk:
    """Finite random walk space ``[X, m, nu]``.

    Build instances through the ``from_*`` constructors; they run the
    validation and fill in ``checks``.
    """

    space: NodeSpace
    kernel: sp.csr_matrix
    nu: np.ndarray
    checks: WalkChecks
    thresholds: Thresholds = field(default=DEFAULT_THRESHOLDS)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def total(self) -> float:
        return float(np.sum(self.nu))

    @property
    def invariant(self) -> bool:
        return self.checks.invariant

    @property
    def reversible(self) -> bool:
        return self.checks.reversible

    @property
    def connected(self) -> bool:
        return self.checks.connected

    def dense(self) -> np.ndarray:
        return self.kernel.toarray()


def _validate(P: sp.csr_matrix, nu: np.ndarray, thr: Thresholds) -> WalkChecks:
    if P.nnz and P.data.min() < 0:
        raise WalkError("transition kernel has negative entries")
    rows = np.asarray(P.sum(axis=1)).ravel()
    stoch = float(np.max(np.abs(rows - 1.0)))
    if stoch > thr.stochastic:
        bad = int(np.argmax(np.abs(rows - 1.0)))
        raise WalkError(f"row {bad} of the kernel sums to {rows[bad]!r}, not 1")
    inv = float(np.max(np.abs(P.T @ nu - nu) / nu))
    flux = sp.diags(nu) @ P
    asym = flux - flux.T
    rev = float(abs(asym).max()) if asym.nnz else 0.0
    ncomp, _ = connected_components(P + P.T, directed=False)
    return WalkChecks(
        stochastic_residual=stoch,
        invariance_residual=inv,
        reversibility_residual=rev,
        n_components=int(ncomp),
        invariant=inv <= thr.invariance,
        reversible=rev <= thr.reversibility * float(nu.max()),
    )


def _make(P, nu, labels=None, coordinates=None, thresholds=DEFAULT_THRESHOLDS) -> RandomWalk:
    P = sp.csr_matrix(P, dtype=float)
    P.eliminate_zeros()
    P.sort_indices()
    nu = np.asarray(nu, dtype=float).copy()
    if P.shape[0] != P.shape[1]:
        raise WalkError("kernel must be square")
    if nu.shape != (P.shape[0],):
        raise WalkError("measure length does not match kernel size")
    if not np.all(np.isfinite(nu)) or np.any(nu <= 0):
        raise WalkError("measure weights must be strictly positive")
    nu.setflags(write=False)
    space = NodeSpace(P.shape[0], None if labels is None else tuple(labels), coordinates)
    return RandomWalk(space, P, nu, _validate(P, nu, thresholds), thresholds)


def as_mask(n: int, nodes) -> np.ndarray:
    """Boolean membership vector for a node set given as indices or a mask."""
    arr = np.asarray(nodes if nodes is not None else [])
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise WalkError("boolean node set has the wrong length")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    if arr.size:
        idx = arr.astype(int).ravel()
        if idx.min() < 0 or idx.max() >= n:
            raise WalkError("node index out of range")
        mask[idx] = True
    return mask


def from_weighted_graph(
    edges: Iterable[Sequence],
    n: int | None = None,
    labels: Sequence[str] | None = None,
    allow_loops: bool = False,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> RandomWalk:
    """Graph walk ``m_x = sum_y w_xy delta_y / d_x`` with ``nu_x = d_x``.

    Each undirected edge ``(x, y, w)`` is listed once; repeated edges add up.
    """
    edges = [tuple(e) for e in edges]
    if n is None:
        n = len(labels) if labels is not None else 1 + max(max(int(e[0]), int(e[1])) for e in edges)
    rows, cols, vals = [], [], []
    for e in edges:
        x, y = int(e[0]), int(e[1])
        w = float(e[2]) if len(e) > 2 else 1.0
        if not np.isfinite(w) or w < 0:
            raise WalkError(f"edge ({x}, {y}) has invalid weight {w!r}")
        if w == 0:
            continue
        if x == y:
            if not allow_loops:
                raise WalkError(f"loop at node {x} but allow_loops is False")
            rows.append(x), cols.append(x), vals.append(w)
        else:
            rows += [x, y]
            cols += [y, x]
            vals += [w, w]
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    d = np.asarray(W.sum(axis=1)).ravel()
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0])
        name = labels[bad] if labels is not None else bad
        raise WalkError(f"node {name} is isolated (zero total weight)")
    P = sp.diags(1.0 / d) @ W
    return _make(P, d, labels=labels, thresholds=thresholds)


def _stationary(P: sp.csr_matrix, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    # lazy chain (I + P)/2 has the same stationary vectors and is aperiodic
    n = P.shape[0]
    PT = P.T.tocsr()
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    raise WalkError("power iteration for the stationary measure did not converge")


def _reject_transient(K: sp.csr_matrix) -> None:
    # a strictly positive stationary measure exists iff no communicating class leaks
    _, comp = connected_components(K, directed=True, connection="strong")
    coo = K.tocoo()
    leak = (comp[coo.row] != comp[coo.col]) & (coo.data > 0)
    if leak.any():
        x = int(coo.row[np.flatnonzero(leak)[0]])
        raise WalkError(f"chain is reducible: state {x} is transient, so no strictly positive stationary measure exists")


def from_markov_kernel(
    K,
    pi=None,
    labels: Sequence[str] | None = None,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> RandomWalk:
    """Walk ``m_x = K(x, .)``; the stationary measure is computed when omitted."""
    K = sp.csr_matrix(K, dtype=float)
    rows = np.asarray(K.sum(axis=1)).ravel()
    if np.max(np.abs(rows - 1.0)) > thresholds.stochastic:
        raise WalkError("Markov kernel rows must sum to 1")
    if pi is None:
        _reject_transient(K)
        pi = _stationary(K)
        if np.any(pi <= 1e-14 * pi.max()):
            raise WalkError("chain has no strictly positive stationary measure (reducible)")
    else:
        pi = np.asarray(pi, dtype=float)
        if np.any(pi <= 0):
            raise WalkError("supplied measure must be strictly positive")
        res = float(np.max(np.abs(K.T @ pi - pi) / pi))
        if res > thresholds.invariance:
            raise WalkError(f"supplied measure is not invariant (residual {res:.3e})")
    return _make(K, pi, labels=labels, thresholds=thresholds)


def from_point_cloud(points, eta: Callable[[np.ndarray], np.ndarray], thresholds=DEFAULT_THRESHOLDS) -> RandomWalk:
    """Graph on a point cloud with weights ``eta(|x_i - x_j|)``, no self-loops."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not eta(np.array([0.0]))[0] > 0:
        raise WalkError("radial profile must satisfy eta(0) > 0")
    n = X.shape[0]
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    w = np.asarray(eta(dist), dtype=float)
    if np.any(w < 0):
        raise WalkError("radial profile must be nonnegative")
    iu, ju = np.triu_indices(n, k=1)
    keep = w[iu, ju] > 0
    edges = list(zip(iu[keep], ju[keep], w[iu, ju][keep]))
    walk = from_weighted_graph(edges, n=n, thresholds=thresholds)
    return RandomWalk(
        NodeSpace(n, None, X), walk.kernel, walk.nu, walk.checks, walk.thresholds
    )


def _grid_points(shape: Sequence[int], h: float) -> np.ndarray:
    axes = [np.arange(k) * h for k in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def from_grid_kernel(
    shape: Sequence[int],
    h: float,
    J: Callable[[np.ndarray], np.ndarray],
    truncation_radius: float,
    include_self: bool = False,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> RandomWalk:
    """Quadrature discretization of the convolution walk ``m^J`` on a 1D/2D grid.

    Raw weights ``J(|x - y|) h**dim`` inside the truncation radius are
    row-normalized. The measure is the raw row mass rescaled so the fullest
    row gets ``h**dim``; that keeps it exactly reversible near the boundary.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (1, 2):
        raise WalkError("grid must be one- or two-dimensional")
    X = _grid_points(shape, h)
    dim = len(shape)
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    within = dist <= truncation_radius * (1 + 1e-12)
    if not include_self:
        np.fill_diagonal(within, False)
    Jd = np.asarray(J(dist), dtype=float)
    if np.any(Jd < 0):
        raise WalkError("kernel J must be nonnegative")
    W = np.where(within, Jd, 0.0) * h**dim
    mass = W.sum(axis=1)
    if np.any(mass <= 0):
        bad = int(np.flatnonzero(mass <= 0)[0])
        raise WalkError(f"grid node {bad} has zero kernel mass within the truncation radius")
    P = sp.csr_matrix(W / mass[:, None])
    nu = mass * (h**dim / mass.max())
    walk = _make(P, nu, thresholds=thresholds)
    return RandomWalk(NodeSpace(walk.n, None, X), walk.kernel, walk.nu, walk.checks, thresholds)


def restrict(rw: RandomWalk, omega) -> RandomWalk:
    """Walk on ``omega`` where mass leaving ``omega`` stays put at ``x``."""
    mask = as_mask(rw.n, omega)
    if not mask.any():
        raise WalkError("cannot restrict to an empty node set")
    idx = np.flatnonzero(mask)
    P = rw.kernel
    sub = P[idx][:, idx].tolil()
    escaped = 1.0 - np.asarray(sub.sum(axis=1)).ravel()
    escaped = np.clip(escaped, 0.0, None)
    sub.setdiag(sub.diagonal() + escaped)
    labels = None if rw.space.labels is None else [rw.space.labels[i] for i in idx]
    coords = None if rw.space.coordinates is None else rw.space.coordinates[idx]
    walk = _make(sub.tocsr(), rw.nu[idx], labels=labels, thresholds=rw.thresholds)
    return RandomWalk(NodeSpace(walk.n, walk.space.labels, coords), walk.kernel, walk.nu, walk.checks, walk.thresholds)


def convolve(rw1: RandomWalk, rw2: RandomWalk) -> RandomWalk:
    """``m1 * m2``: one step of ``m1`` followed by one step of ``m2``."""
    if rw1.n != rw2.n:
        raise WalkError("walks live on different node spaces")
    res = float(np.max(np.abs(rw2.kernel.T @ rw1.nu - rw1.nu) / rw1.nu))
    if res > rw1.thresholds.invariance:
        raise WalkError(f"first walk's measure is not invariant for the second kernel (residual {res:.3e})")
    return _make(rw1.kernel @ rw2.kernel, rw1.nu, labels=rw1.space.labels, thresholds=rw1.thresholds)


def interaction(rw: RandomWalk, A, B) -> float:
    """``L_m(A, B) = sum_{x in A} nu_x m_x(B)``."""
    a = as_mask(rw.n, A)
    b = as_mask(rw.n, B).astype(float)
    mB = rw.kernel @ b
    return float(np.sum(rw.nu[a] * mB[a]))


def mean_curvature(rw: RandomWalk, E) -> np.ndarray:
    """Nodewise ``1 - 2 m_x(E)``."""
    e = as_mask(rw.n, E).astype(float)
    return 1.0 - 2.0 * (rw.kernel @ e)


def embedding_constants(rw1: RandomWalk, rw2: RandomWalk) -> tuple[float, float]:
    """Constants ``(m, M)`` with ``m |f|_{L1(nu1)} <= |f|_{L1(nu2)} <= M |f|_{L1(nu1)}``."""
    if rw1.n != rw2.n:
        raise WalkError("walks live on different node spaces")
    # strictly positive measures on a shared finite set always have equal support
    R = rw1.nu / rw2.nu
    return 1.0 / float(R.max()), float(np.max(rw2.nu / rw1.nu))
