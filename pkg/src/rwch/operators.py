"""Nonlocal operators on a random walk space.

Fields are plain 1-D numpy arrays indexed by node. All weighted norms and
inner products use the walk's measure ``nu``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .walks import RandomWalk

__all__ = [
    "OperatorError",
    "DENSE_LIMIT",
    "check_field",
    "nu_inner",
    "nu_norm",
    "nu_mean",
    "averaging",
    "laplacian",
    "laplacian_matrix",
    "dirichlet_energy",
    "gradient_energy",
    "symmetrized",
    "spectral_gap",
    "HMinusOneContext",
    "solve_poisson",
    "hminus1_inner",
]

DENSE_LIMIT = 500


class OperatorError(ValueError):
    pass


def check_field(rw: RandomWalk, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (rw.n,):
        raise OperatorError(f"field has shape {f.shape}, expected ({rw.n},)")
    if not np.all(np.isfinite(f)):
        raise OperatorError("field has non-finite entries")
    return f


def nu_inner(nu: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    return float(np.dot(nu * f, g))


def nu_norm(nu: np.ndarray, f: np.ndarray, p: float = 2) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(f))) if f.size else 0.0
    return float(np.sum(nu * np.abs(f) ** p) ** (1.0 / p))


def nu_mean(nu: np.ndarray, f: np.ndarray) -> float:
    return float(np.dot(nu, f) / np.sum(nu))


def averaging(rw: RandomWalk, f) -> np.ndarray:
    """``(M_m f)(x) = sum_y P[x, y] f(y)``."""
    return rw.kernel @ check_field(rw, f)


def laplacian(rw: RandomWalk, f) -> np.ndarray:
    f = check_field(rw, f)
    return rw.kernel @ f - f


def laplacian_matrix(rw: RandomWalk, dense: bool | None = None):
    """``P - I`` as a dense array (small walks) or a sparse matrix."""
    if dense is None:
        dense = rw.n <= DENSE_LIMIT
    if dense:
        return rw.dense() - np.eye(rw.n)
    return (rw.kernel - sp.identity(rw.n, format="csr")).tocsr()


def _require_reversible(rw: RandomWalk, what: str) -> None:
    if not rw.reversible:
        raise OperatorError(f"{what} requires a reversible walk")


def gradient_energy(rw: RandomWalk, f) -> float:
    """``1/2 sum_x nu_x sum_y P[x, y] (f(y) - f(x))**2``."""
    f = check_field(rw, f)
    K = rw.kernel.tocoo()
    diff = f[K.col] - f[K.row]
    return 0.5 * float(np.sum(rw.nu[K.row] * K.data * diff * diff))


def dirichlet_energy(rw: RandomWalk, f) -> float:
    """``H_m(f)``, a quarter of the nu-weighted sum of squared jumps."""
    _require_reversible(rw, "the Dirichlet energy")
    return 0.5 * gradient_energy(rw, f)


def symmetrized(rw: RandomWalk):
    """``D^{1/2} P D^{-1/2}``, symmetric when the walk is reversible."""
    s = np.sqrt(rw.nu)
    S = sp.diags(s) @ rw.kernel @ sp.diags(1.0 / s)
    return 0.5 * (S + S.T)


def spectral_gap(rw: RandomWalk) -> float:
    """Smallest nonzero eigenvalue of ``-Delta_m`` on a reversible connected walk."""
    _require_reversible(rw, "the spectral gap")
    if not rw.connected:
        raise OperatorError("walk is not connected; the spectral gap vanishes")
    if rw.n == 1:
        raise OperatorError("a one-node walk has no mean-zero fields")
    S = symmetrized(rw)
    if rw.n <= DENSE_LIMIT:
        ev = sla.eigvalsh(np.eye(rw.n) - S.toarray())
    else:
        A = (sp.identity(rw.n) - S).tocsc()
        ev = spla.eigsh(A, k=2, sigma=-1e-3, which="LM", return_eigenvectors=False,
                        v0=np.ones(rw.n))
    ev = np.sort(ev)
    return float(ev[1])


class HMinusOneContext:
    """Poisson solver for ``Delta_m phi = v`` on nu-mean-zero fields.

    Small walks use an LU factorization of ``I - P + 1 nu^T / nu(X)``, which
    is nonsingular on a connected walk and agrees with ``-Delta_m`` on the
    mean-zero subspace. Large walks run CG on the symmetrized operator with
    the constant mode deflated. The context is read-only after construction.
    """

    def __init__(self, walk: RandomWalk, rtol: float = 1e-10):
        _require_reversible(walk, "the H^-1 structure")
        if not walk.connected:
            raise OperatorError("the H^-1 structure needs a connected walk")
        self.walk = walk
        self.rtol = rtol
        self.nu = walk.nu
        self._gap = None
        n = walk.n
        if n <= DENSE_LIMIT:
            A = np.eye(n) - walk.dense() + np.outer(np.ones(n), walk.nu) / walk.total
            self._lu = sla.lu_factor(A)
        else:
            self._lu = None
            s = np.sqrt(walk.nu)
            self._sqrt_nu = s
            self._kernel_dir = s / np.linalg.norm(s)
            self._op = (sp.identity(n) - symmetrized(walk)).tocsr()

    @property
    def gap(self) -> float:
        if self._gap is None:
            self._gap = spectral_gap(self.walk)
        return self._gap

    def _check_mean_zero(self, v: np.ndarray) -> None:
        mass = float(np.dot(self.nu, v))
        scale = float(np.dot(self.nu, np.abs(v)))
        if abs(mass) > 1e-10 * scale:
            raise OperatorError(f"field is not nu-mean-zero (mean {mass / self.walk.total:.3e})")

    def solve(self, v) -> np.ndarray:
        v = check_field(self.walk, v)
        self._check_mean_zero(v)
        if self._lu is not None:
            phi = sla.lu_solve(self._lu, -v)
        else:
            s, e = self._sqrt_nu, self._kernel_dir
            b = -(s * v)
            b -= e * np.dot(e, b)
            psi, info = spla.cg(self._op, b, rtol=1e-13, maxiter=20 * self.walk.n)
            if info != 0:
                raise OperatorError(f"CG did not converge (info={info})")
            psi -= e * np.dot(e, psi)
            phi = psi / s
        phi -= nu_mean(self.nu, phi)
        res = nu_norm(self.nu, self.walk.kernel @ phi - phi - v)
        if res > self.rtol * max(nu_norm(self.nu, v), 1e-300):
            raise OperatorError(f"Poisson solve residual {res:.3e} above tolerance")
        return phi

    def inner(self, v1, v2) -> float:
        """``<v1, v2>_{H^-1} = -sum_x nu_x (Delta^-1 v1)(x) v2(x)``."""
        v2 = check_field(self.walk, v2)
        self._check_mean_zero(v2)
        return -nu_inner(self.nu, self.solve(v1), v2)

    def norm(self, v) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))


def solve_poisson(ctx: HMinusOneContext, v) -> np.ndarray:
    return ctx.solve(v)


def hminus1_inner(ctx: HMinusOneContext, v1, v2) -> float:
    return ctx.inner(v1, v2)
