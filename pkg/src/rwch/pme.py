"""Generalized porous medium flow ``u_t - Delta_m v = f``, ``u in gamma(v)``.

The workhorse is the resolvent ``(I + lam B_gamma)^{-1}``, possibly with an
extra implicit linear part ``L``: given ``g`` find ``(u, v)`` with

    u - lam Delta_m v + lam L u = g,    v in gamma^{-1}(u).

The inclusion is replaced by the Minty equation ``u = R(sigma, u + sigma v)``
where ``R`` is the scalar resolvent of ``gamma^{-1}``. Writing
``z = u + sigma v`` leaves a single semismooth equation in ``z``,

    F(z) = R(z) + (lam / sigma) A (z - R(z)) + lam L R(z) - g = 0,

with ``A = I - P``. It is solved by semismooth Newton with an Armijo line
search on the nu-weighted residual and a damped Picard fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .operators import DENSE_LIMIT, nu_norm
from .potentials import MonotoneGraph
from .trajectory import Trajectory
from .walks import RandomWalk

__all__ = [
    "ConvergenceError",
    "MassWindowError",
    "MassWindowReport",
    "ResolventProblem",
    "ResolventSolution",
    "ResolventSolver",
    "mass_window_bounds",
    "validate_mass_window",
    "solve_resolvent",
    "is_pure_phase",
    "pme_mild_solve",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=math.nan, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class MassWindowError(ValueError):
    pass


def mass_window_bounds(nu: np.ndarray, graph: MonotoneGraph) -> tuple[float, float]:
    total = float(np.sum(nu))
    return total * graph.gamma_minus, total * graph.gamma_plus


def _strictly_inside(mass: float, lower: float, upper: float) -> bool:
    return lower < mass < upper


@dataclass
class MassWindowReport:
    ok: bool
    lower: float
    upper: float
    masses: np.ndarray
    times: np.ndarray
    first_violation_time: float | None = None

    def __bool__(self):
        return self.ok


def validate_mass_window(walk: RandomWalk, graph: MonotoneGraph, u0, forcing=None, times=None) -> MassWindowReport:
    """Check ``nu(X) gamma- < int u0 + int_0^t int f < nu(X) gamma+`` on a time grid.

    ``forcing`` is a callable ``t -> field`` or an array of fields on ``times``;
    the time integral is a cumulative trapezoid on that grid.
    """
    nu = walk.nu
    lower, upper = mass_window_bounds(nu, graph)
    m0 = float(np.dot(nu, u0))
    if forcing is None or times is None:
        times = np.array([0.0])
        masses = np.array([m0])
    else:
        times = np.asarray(times, dtype=float)
        F = np.array([forcing(t) for t in times]) if callable(forcing) else np.asarray(forcing, dtype=float)
        rate = F @ nu
        masses = m0 + cumulative_trapezoid(rate, times, initial=0.0)
    bad = np.flatnonzero(~((masses > lower) & (masses < upper)))
    first = float(times[bad[0]]) if bad.size else None
    return MassWindowReport(not bad.size, lower, upper, masses, times, first)


@dataclass
class ResolventProblem:
    walk: RandomWalk
    graph: MonotoneGraph
    lam: float
    g: np.ndarray
    L: np.ndarray | sp.spmatrix | None = None


@dataclass
class ResolventSolution:
    u: np.ndarray
    v: np.ndarray
    residual: float
    iterations: int
    z: np.ndarray


class ResolventSolver:
    """Reusable resolvent solver; operators are assembled once per walk."""

    def __init__(
        self,
        walk: RandomWalk,
        graph: MonotoneGraph,
        L=None,
        sigma: float = 1.0,
        tol: float = 1e-10,
        max_iter: int = 200,
    ):
        self.walk = walk
        self.graph = graph
        self.nu = walk.nu
        self.sigma = float(sigma)
        self.tol = tol
        self.max_iter = max_iter
        self.dense = walk.n <= DENSE_LIMIT
        n = walk.n
        if self.dense:
            self.A = np.eye(n) - walk.dense()
            self.L = None if L is None else (L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float))
        else:
            self.A = (sp.identity(n, format="csr") - walk.kernel).tocsr()
            self.L = None if L is None else sp.csr_matrix(L)
        self.lower, self.upper = mass_window_bounds(self.nu, graph)

    def _F(self, z, g, lam):
        u = self.graph.resolvent(self.sigma, z)
        F = u + (lam / self.sigma) * (self.A @ (z - u)) - g
        if self.L is not None:
            F += lam * (self.L @ u)
        return F, u

    def _jacobian(self, d, lam):
        c1 = lam / self.sigma
        if self.dense:
            J = c1 * self.A * (1.0 - d)[None, :]
            if self.L is not None:
                J += lam * self.L * d[None, :]
            J[np.diag_indices_from(J)] += d
            return J
        J = c1 * (self.A @ sp.diags(1.0 - d)) + sp.diags(d)
        if self.L is not None:
            J = J + lam * (self.L @ sp.diags(d))
        return J.tocsc()

    def _direction(self, J, F, d):
        if self.dense:
            if np.max(d) < 1e-12:
                # every node sits on a flat branch: J is singular along constants
                return sla.lstsq(J, -F, lapack_driver="gelsy")[0]
            try:
                return sla.solve(J, -F, check_finite=False)
            except (sla.LinAlgError, ValueError):
                return sla.lstsq(J, -F, lapack_driver="gelsy")[0]
        if np.max(d) < 1e-12:
            return spla.lsqr(J, -F, atol=1e-14, btol=1e-14)[0]
        return spla.spsolve(J, -F)

    def _picard(self, z, g, lam, sweeps=5, theta=0.5):
        for _ in range(sweeps):
            u = self.graph.resolvent(self.sigma, z)
            v_old = (z - u) / self.sigma
            r = g - u
            if self.L is not None:
                r = r - lam * (self.L @ u)
            r -= np.dot(self.nu, r) / np.sum(self.nu)
            if self.dense:
                v = sla.lstsq(lam * self.A, r, lapack_driver="gelsy")[0]
            else:
                v = spla.lsqr(lam * self.A, r, atol=1e-14, btol=1e-14)[0]
            v += np.dot(self.nu, v_old - v) / np.sum(self.nu)
            z = (1 - theta) * z + theta * (u + self.sigma * v)
        return z

    def _shift_mass(self, z, target):
        """Bracketed constant shift of ``z`` matching the mass; works when every node is saturated."""
        nu = self.nu

        def defect(s):
            return float(np.dot(nu, self.graph.resolvent(self.sigma, z + s))) - target

        f0 = defect(0.0)
        if f0 == 0.0:
            return z
        step = max(1.0, float(np.ptp(z)))
        s = -step if f0 > 0 else step
        for _ in range(200):
            if (defect(s) > 0) != (f0 > 0):
                break
            s *= 2.0
        else:
            return z
        lo, hi = sorted((0.0, s))
        return self._fix_mass(z + brentq(defect, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps), target)

    def _fix_mass(self, z, target):
        # constant shift of z keeps u = R(z) exact and moves only the mass
        for _ in range(3):
            u = self.graph.resolvent(self.sigma, z)
            err = target - float(np.dot(self.nu, u))
            if abs(err) <= 1e-15 * max(1.0, abs(target)):
                break
            slope = float(np.dot(self.nu, self.graph.resolvent_derivative(self.sigma, z)))
            if slope <= 0:
                break
            z = z + err / slope
        return z

    def initial_guess(self, g) -> np.ndarray:
        lo, hi = self.graph.gamma_minus, self.graph.gamma_plus
        u = np.clip(g, lo, hi)
        u = self.graph.interior_value(u)
        return u + self.sigma * self.graph.min_section(u)

    def solve(self, g, lam: float, z0=None) -> ResolventSolution:
        g = np.asarray(g, dtype=float)
        nu = self.nu
        mass = float(np.dot(nu, g))
        if not _strictly_inside(mass, self.lower, self.upper):
            raise MassWindowError(
                f"datum mass {mass!r} outside the open window ({self.lower!r}, {self.upper!r})"
            )
        z = self.initial_guess(g) if z0 is None else np.array(z0, dtype=float)
        target_res = self.tol * max(1.0, nu_norm(nu, g))
        F, u = self._F(z, g, lam)
        res = nu_norm(nu, F)
        it = 0
        best = (res, z)
        while res > target_res:
            if it >= self.max_iter:
                raise ConvergenceError(
                    f"resolvent solve did not converge in {self.max_iter} iterations", best[0]
                )
            it += 1
            d = self.graph.resolvent_derivative(self.sigma, z)
            dz = self._direction(self._jacobian(d, lam), F, d)
            alpha = 1.0
            accepted = False
            while alpha >= 1e-10:
                zt = z + alpha * dz
                Ft, ut = self._F(zt, g, lam)
                rt = nu_norm(nu, Ft)
                if np.isfinite(rt) and rt <= (1.0 - 1e-4 * alpha) * res:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # Newton cannot move the mass when the resolvent is flat at every node
                zt = self._shift_mass(z, mass)
                Ft, ut = self._F(zt, g, lam)
                rt = nu_norm(nu, Ft)
                if not rt < res:
                    zt = self._picard(zt, g, lam)
                    Ft, ut = self._F(zt, g, lam)
                    rt = nu_norm(nu, Ft)
            z, F, u, res = zt, Ft, ut, rt
            if res < best[0]:
                best = (res, z)
        z = self._fix_mass(z, mass)
        F, u = self._F(z, g, lam)
        v = (z - u) / self.sigma
        return ResolventSolution(u, v, nu_norm(nu, F), it, z)


def solve_resolvent(prob: ResolventProblem, tol: float = 1e-10, sigma: float = 1.0, z0=None) -> ResolventSolution:
    solver = ResolventSolver(prob.walk, prob.graph, L=prob.L, sigma=sigma, tol=tol)
    return solver.solve(prob.g, prob.lam, z0=z0)


def is_pure_phase(nu: np.ndarray, graph: MonotoneGraph, u) -> float | None:
    """Return the bound if ``u`` is the constant pure phase ``gamma-`` or ``gamma+``."""
    u = np.asarray(u, dtype=float)
    for b in (graph.gamma_minus, graph.gamma_plus):
        if math.isfinite(b) and np.all(u == b):
            return b
    return None


def _forcing_at(forcing, k: int, t: float, n: int):
    if forcing is None:
        return None
    if callable(forcing):
        return np.asarray(forcing(t), dtype=float)
    return np.asarray(forcing[k], dtype=float)


def _record(step, t, nu, u, energy, residual=0.0, iterations=0, increment=0.0, **extra):
    rec = {
        "step": step,
        "t": t,
        "mass": float(np.dot(nu, u)),
        "energy": energy,
        "residual": residual,
        "iterations": iterations,
        "increment": increment,
        "norm_l2": nu_norm(nu, u, 2),
        "norm_l4": nu_norm(nu, u, 4),
        "norm_linf": nu_norm(nu, u, math.inf),
    }
    rec.update(extra)
    return rec


def pme_mild_solve(
    walk: RandomWalk,
    graph: MonotoneGraph,
    u0,
    forcing: Callable | np.ndarray | None,
    tau: float,
    T: float,
    tol: float = 1e-10,
    stride: int = 1,
    solver: ResolventSolver | None = None,
    warm: list[np.ndarray] | None = None,
    steps: int | None = None,
) -> Trajectory:
    """Implicit Euler ``u^{k+1} = (I + tau B)^{-1}(u^k + tau f_k)``.

    ``forcing`` is ``None``, a callable evaluated at the left end ``t_k`` of
    each step, or an array whose row ``k`` is used in step ``k``. ``warm``
    optionally holds one ``z`` per step to warm-start the inner solves.
    ``steps`` overrides the step count ``ceil(T / tau)``.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    u = np.array(u0, dtype=float)
    nu = walk.nu
    nsteps = int(math.ceil(T / tau - 1e-12)) if steps is None else int(steps)
    traj = Trajectory(tau=tau, scheme="pme_implicit_euler", stride=stride)
    energy = lambda w: float(np.dot(nu, graph.j_star(w)))
    traj.records.append(_record(0, 0.0, nu, u, energy(u)))
    traj.add_snapshot(0, 0.0, u)
    pure = is_pure_phase(nu, graph, u)
    if pure is not None and forcing is None:
        traj.notices.append(f"pure phase u = {pure!r}: constant trajectory")
        for k in range(1, nsteps + 1):
            traj.records.append(_record(k, k * tau, nu, u, energy(u)))
            if traj.wants_snapshot(k, nsteps):
                traj.add_snapshot(k, k * tau, u)
        traj.complete = True
        return traj
    solver = solver or ResolventSolver(walk, graph, tol=tol)
    z = None
    traj.z = []
    for k in range(nsteps):
        t = k * tau
        f = _forcing_at(forcing, k, t, walk.n)
        g = u if f is None else u + tau * f
        if warm is not None:
            z = warm[k]
        try:
            sol = solver.solve(g, tau, z0=z)
        except (ConvergenceError, MassWindowError) as exc:
            raise type(exc)(f"step {k + 1}: {exc}") from exc
        z = sol.z
        traj.z.append(sol.z)
        inc = nu_norm(nu, sol.u - u)
        u = sol.u
        traj.records.append(_record(k + 1, (k + 1) * tau, nu, u, energy(u), sol.residual, sol.iterations, inc))
        if traj.wants_snapshot(k + 1, nsteps):
            traj.add_snapshot(k + 1, (k + 1) * tau, u, sol.v)
    traj.complete = True
    return traj
