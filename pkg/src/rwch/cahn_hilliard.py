"""Doubly nonlocal Cahn-Hilliard flow on a pair of random walks.

The system is

    u_t = Delta_1 mu,    mu in -delta Delta_2 u + gamma^{-1}(u) - c u,

where ``Delta_i = P_i - I``. Two time integrators are provided:

``imex_split``
    Convex splitting. The Dirichlet term and ``gamma^{-1}`` are implicit,
    the concave ``-c u`` term explicit. Each step is one resolvent solve with
    the implicit linear part ``L = delta Delta_1 Delta_2``. Energy decreases
    for every step size when both walks share their measure.

``picard``
    The flow is rewritten as a porous-medium problem forced by ``-G u`` with
    ``G = delta Delta_1 Delta_2 + c Delta_1`` and solved by fixed-point
    iteration on time windows short enough for the map to contract in
    ``L^1(nu_1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operators import DENSE_LIMIT, dirichlet_energy, gradient_energy, nu_norm
from .pme import (
    ConvergenceError,
    MassWindowError,
    ResolventSolver,
    is_pure_phase,
    mass_window_bounds,
    pme_mild_solve,
)
from .potentials import PotentialSpec
from .trajectory import Trajectory
from .walks import RandomWalk, embedding_constants

__all__ = [
    "SCHEMES",
    "ProblemError",
    "CHProblem",
    "LipschitzBound",
    "lipschitz_bound_G",
    "operator_G",
    "step_imex",
    "solve",
    "energy",
    "chemical_potential",
    "shares_measure",
]

SCHEMES = ("imex_split", "picard")


class ProblemError(ValueError):
    pass


def shares_measure(m1: RandomWalk, m2: RandomWalk, rtol: float = 1e-12) -> bool:
    return m1.n == m2.n and bool(np.allclose(m1.nu, m2.nu, rtol=rtol, atol=0.0))


@dataclass
class CHProblem:
    m1: RandomWalk
    m2: RandomWalk
    potential: PotentialSpec
    u0: np.ndarray
    scheme: str = "imex_split"
    tau: float = 1e-2
    T: float = 1.0
    snapshot_stride: int = 1
    tol: float = 1e-10
    picard_tol: float = 1e-9
    picard_max_sweeps: int = 100
    window_factor: float = 0.9
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.u0 = np.array(self.u0, dtype=float)

    @property
    def graph(self):
        return self.potential.graph

    @property
    def c(self) -> float:
        return self.potential.c

    @property
    def delta(self) -> float:
        return self.potential.delta

    @property
    def shared(self) -> bool:
        return shares_measure(self.m1, self.m2)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-12))

    def validate(self) -> "CHProblem":
        if self.scheme not in SCHEMES:
            raise ProblemError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ProblemError(f"tau must be positive, got {self.tau!r}")
        if not self.T >= 0:
            raise ProblemError(f"T must be nonnegative, got {self.T!r}")
        if self.snapshot_stride < 1:
            raise ProblemError("snapshot_stride must be at least 1")
        if self.m1.n != self.m2.n:
            raise ProblemError("the two walks live on different node spaces")
        if self.u0.shape != (self.m1.n,) or not np.all(np.isfinite(self.u0)):
            raise ProblemError(f"u0 must be a finite field of length {self.m1.n}")
        for name, w in (("m1", self.m1), ("m2", self.m2)):
            if not w.reversible:
                raise ProblemError(f"{name} is not reversible")
        if not self.m1.connected:
            raise ProblemError("m1 is not connected")
        if self.scheme == "imex_split" and not self.shared:
            raise ProblemError("the convex-splitting scheme needs m1 and m2 to share their measure; use picard")
        if not np.all(self.graph.in_domain(self.u0)) and is_pure_phase(self.m1.nu, self.graph, self.u0) is None:
            raise ProblemError("u0 leaves the domain of the potential")
        if is_pure_phase(self.m1.nu, self.graph, self.u0) is None:
            lo, hi = mass_window_bounds(self.m1.nu, self.graph)
            mass = float(np.dot(self.m1.nu, self.u0))
            if not lo < mass < hi:
                raise MassWindowError(f"mass {mass!r} of u0 is not strictly inside ({lo!r}, {hi!r})")
        return self

    # assembled operators, cached per problem
    def _ops(self):
        if "A1" not in self._cache:
            n = self.m1.n
            I = sp.identity(n, format="csr")
            A1 = (self.m1.kernel - I).tocsr()
            A2 = (self.m2.kernel - I).tocsr()
            L = (self.delta * (A1 @ A2)).tocsr()
            G = (L + self.c * A1).tocsr()
            self._cache.update(A1=A1, A2=A2, L=L, G=G)
        return self._cache


def operator_G(prob: CHProblem):
    """Sparse ``G = delta Delta_1 Delta_2 + c Delta_1``."""
    return prob._ops()["G"]


@dataclass(frozen=True)
class LipschitzBound:
    l2: float
    l1: float
    analytic: float

    @property
    def window_constant(self) -> float:
        return max(self.l1, self.l2)

    def as_dict(self) -> dict:
        return {"l2": self.l2, "l1": self.l1, "analytic": self.analytic}


def _l2_norm(G, nu, tol=1e-8, max_iter=10_000) -> float:
    s = np.sqrt(nu)
    if G.shape[0] <= DENSE_LIMIT:
        S = (s[:, None] * G.toarray()) / s[None, :]
        return float(np.linalg.norm(S, 2))
    S = sp.diags(s) @ G @ sp.diags(1.0 / s)
    x = np.random.default_rng(0).standard_normal(G.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = S.T @ (S @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = math.sqrt(ny)
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def lipschitz_bound_G(prob: CHProblem) -> LipschitzBound:
    """Operator norms of ``G`` in ``L^2(nu_1)`` and ``L^1(nu_1)`` plus a closed-form bound."""
    G = operator_G(prob)
    nu = prob.m1.nu
    l2 = _l2_norm(G, nu)
    col = np.asarray(abs(G).T @ nu).ravel()
    l1 = float(np.max(col / nu)) if col.size else 0.0
    m, M = embedding_constants(prob.m1, prob.m2)
    kappa = M / m
    c, d = prob.c, prob.delta
    analytic = 2.0 * c + 4.0 * d * kappa
    inv = np.max(np.abs(prob.m2.kernel.T @ nu - nu) / nu)
    if inv <= prob.m1.thresholds.invariance:
        # expanded form delta*Delta_{m1*m2} + (c - delta)*Delta_1 - delta*Delta_2
        analytic = min(analytic, 2.0 * d + 2.0 * abs(c - d) + 2.0 * d * kappa)
    return LipschitzBound(l2, l1, analytic)


def energy(prob: CHProblem, u) -> float:
    """Ginzburg-Landau energy ``delta H_{m2}(u) + sum nu (j*(u) - c u^2 / 2)``."""
    u = np.asarray(u, dtype=float)
    j = prob.graph.j_star(u)
    if not np.all(np.isfinite(j)):
        return math.inf
    nu = prob.m2.nu
    return prob.delta * dirichlet_energy(prob.m2, u) + float(np.dot(nu, j - 0.5 * prob.c * u * u))


def chemical_potential(prob: CHProblem, u, v, tol: float = 1e-8) -> np.ndarray:
    """``mu = -delta Delta_2 u + v - c u`` after checking ``v in gamma^{-1}(u)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    gap = np.abs(prob.graph.resolvent(1.0, u + v) - u)
    if gap.size and gap.max() > tol:
        raise ValueError(f"v is not in gamma^-1(u): Minty defect {gap.max():.3e} at node {int(gap.argmax())}")
    return -prob.delta * (prob.m2.kernel @ u - u) + v - prob.c * u


def _mu(prob, u, v, u_explicit):
    return -prob.delta * (prob.m2.kernel @ u - u) + v - prob.c * u_explicit


def _imex_solver(prob: CHProblem) -> ResolventSolver:
    if "imex" not in prob._cache:
        prob._cache["imex"] = ResolventSolver(prob.m1, prob.graph, L=prob._ops()["L"], tol=prob.tol)
    return prob._cache["imex"]


def _imex(prob, u_n, z0=None):
    A1 = prob._ops()["A1"]
    w = u_n - prob.tau * prob.c * (A1 @ u_n)
    sol = _imex_solver(prob).solve(w, prob.tau, z0=z0)
    return sol, _mu(prob, sol.u, sol.v, u_n)


def step_imex(prob: CHProblem, u_n) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One convex-splitting step; returns ``(u, v, mu)``."""
    u_n = np.asarray(u_n, dtype=float)
    sol, mu = _imex(prob, u_n)
    return sol.u, sol.v, mu


def _record(prob, step, t, u, mu=None, residual=0.0, iterations=0, increment=0.0, **extra):
    nu = prob.m1.nu
    rec = {
        "step": step,
        "t": t,
        "mass": float(np.dot(nu, u)),
        "energy": energy(prob, u) if prob.shared else None,
        "mu_dirichlet": None if mu is None else gradient_energy(prob.m1, mu),
        "residual": residual,
        "iterations": iterations,
        "increment": increment,
        "norm_l2": nu_norm(nu, u, 2),
        "norm_l4": nu_norm(nu, u, 4),
        "norm_linf": nu_norm(nu, u, math.inf),
    }
    rec.update(extra)
    return rec


def _start(prob: CHProblem) -> Trajectory:
    traj = Trajectory(tau=prob.tau, scheme=prob.scheme, stride=prob.snapshot_stride, problem=prob)
    if not prob.shared:
        traj.notices.append("m1 and m2 have different measures: energy diagnostics disabled")
    return traj


def _pure_phase(prob: CHProblem, traj: Trajectory, value: float, on_step) -> Trajectory:
    u = prob.u0.copy()
    v = np.zeros_like(u)
    mu = _mu(prob, u, v, u)
    traj.notices.append(f"pure phase u = {value!r}: constant trajectory")
    last = prob.n_steps
    for k in range(last + 1):
        traj.records.append(_record(prob, k, k * prob.tau, u, mu if k else None))
        if k == 0 or traj.wants_snapshot(k, last):
            traj.add_snapshot(k, k * prob.tau, u, v if k else None, mu if k else None)
        if on_step is not None:
            on_step(traj)
    traj.complete = True
    return traj


def _solve_imex(prob: CHProblem, traj: Trajectory, on_step) -> Trajectory:
    nu = prob.m1.nu
    u = prob.u0.copy()
    last = prob.n_steps
    z = None
    for k in range(last):
        try:
            sol, mu = _imex(prob, u, z0=z)
        except (ConvergenceError, MassWindowError) as exc:
            raise type(exc)(f"step {k + 1}: {exc}") from exc
        z = sol.z
        inc = nu_norm(nu, sol.u - u)
        u = sol.u
        t = (k + 1) * prob.tau
        traj.records.append(_record(prob, k + 1, t, u, mu, sol.residual, sol.iterations, inc))
        if traj.wants_snapshot(k + 1, last):
            traj.add_snapshot(k + 1, t, u, sol.v, mu)
        if on_step is not None:
            on_step(traj)
    traj.complete = True
    return traj


def _solve_picard(prob: CHProblem, traj: Trajectory, on_step) -> Trajectory:
    nu = prob.m1.nu
    G = operator_G(prob)
    tau = prob.tau
    last = prob.n_steps
    LG = lipschitz_bound_G(prob).window_constant
    n_w = last if LG == 0 else max(1, int(math.floor(prob.window_factor / (LG * tau))))
    traj.notices.append(f"picard window: {n_w} steps (L_G = {LG!r})")
    solver = ResolventSolver(prob.m1, prob.graph, tol=prob.tol)
    level = prob.picard_tol * prob.m1.total
    u_start = prob.u0.copy()
    k0 = 0
    while k0 < last:
        m = min(n_w, last - k0)
        Z = np.tile(u_start, (m, 1))
        warm = None
        prev = None
        for sweep in range(1, prob.picard_max_sweeps + 1):
            forcing = -(G @ Z.T).T
            sub = pme_mild_solve(prob.m1, prob.graph, u_start, forcing, tau, m * tau,
                                 tol=prob.tol, solver=solver, warm=warm, steps=m)
            U = np.array(sub.u[1:])
            change = float(np.max(np.abs(U - Z) @ nu))
            Z = U
            warm = sub.z
            if change <= level:
                break
            if prev is not None and change >= prev and change > 100.0 * level:
                raise ConvergenceError(
                    f"picard iteration is not contracting on the window starting at step {k0} "
                    f"(change {change:.3e} after {prev:.3e}); reduce window_factor or tau",
                    change, k0,
                )
            prev = change
        else:
            raise ConvergenceError(
                f"picard iteration hit the sweep budget on the window starting at step {k0}", change, k0
            )
        u_prev = u_start
        for j in range(m):
            k = k0 + j + 1
            u = U[j]
            v = sub.v[j + 1]
            mu = _mu(prob, u, v, u)
            rec = sub.records[j + 1]
            traj.records.append(_record(prob, k, k * tau, u, mu, rec["residual"], rec["iterations"],
                                        nu_norm(nu, u - u_prev), sweeps=sweep))
            if traj.wants_snapshot(k, last):
                traj.add_snapshot(k, k * tau, u, v, mu)
            if on_step is not None:
                on_step(traj)
            u_prev = u
        u_start = U[-1].copy()
        k0 += m
    traj.complete = True
    return traj


def solve(prob: CHProblem, on_step=None) -> Trajectory:
    """Integrate the problem on ``[0, T]`` with its configured scheme.

    ``on_step(traj)`` is called after every step is recorded. When a step
    fails, the partial trajectory rides along on the exception as
    ``exc.trajectory``.
    """
    prob.validate()
    traj = _start(prob)
    pure = is_pure_phase(prob.m1.nu, prob.graph, prob.u0)
    if pure is not None:
        return _pure_phase(prob, traj, pure, on_step)
    traj.records.append(_record(prob, 0, 0.0, prob.u0))
    traj.add_snapshot(0, 0.0, prob.u0)
    if on_step is not None:
        on_step(traj)
    try:
        if prob.scheme == "imex_split":
            return _solve_imex(prob, traj, on_step)
        return _solve_picard(prob, traj, on_step)
    except (ConvergenceError, MassWindowError) as exc:
        exc.trajectory = traj
        raise
