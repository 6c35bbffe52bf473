"""Long-time diagnostics: equilibria, pure-phase states, steady states and audits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cahn_hilliard import CHProblem, energy
from .operators import OperatorError, nu_norm, spectral_gap
from .trajectory import Trajectory
from .walks import as_mask, mean_curvature

__all__ = [
    "EquilibriumReport",
    "AsymptoticsReport",
    "CheckResult",
    "AuditReport",
    "check_equilibrium",
    "pure_phase_criterion",
    "phase_indicator",
    "detect_steady_state",
    "audit",
    "lp_growth_constant",
]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class EquilibriumReport:
    is_equilibrium: bool
    mu_const: float | None
    residual: float
    binding_nodes: list[int]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def check_equilibrium(prob: CHProblem, u, tol: float = 1e-8) -> EquilibriumReport:
    """Look for a constant ``mu`` with ``mu + delta Delta_2 u + c u`` in ``gamma^{-1}(u)`` at every node.

    Each node contributes the interval ``gamma^{-1}(u_x) - a_x``; the residual
    is the overlap deficit of all those intervals (the spread of ``mu`` when
    they are all singletons).
    """
    u = np.asarray(u, dtype=float)
    a = prob.delta * (prob.m2.kernel @ u - u) + prob.c * u
    lo, hi = prob.graph.inverse_interval(u)
    binding = np.flatnonzero(hi > lo).tolist()
    if np.any(lo > hi):
        return EquilibriumReport(False, None, math.inf, binding)
    low = float(np.max(lo - a))
    up = float(np.min(hi - a))
    residual = max(0.0, low - up)
    if math.isfinite(low) and math.isfinite(up):
        mu = 0.5 * (low + up)
    elif math.isfinite(low):
        mu = max(low, 0.0)
    elif math.isfinite(up):
        mu = min(up, 0.0)
    else:
        mu = 0.0
    ok = residual <= tol
    return EquilibriumReport(ok, mu if ok else None, residual, binding)


def phase_indicator(n: int, D) -> np.ndarray:
    """``chi_D - chi_{X \\ D}``."""
    return np.where(as_mask(n, D), 1.0, -1.0)


def pure_phase_criterion(prob: CHProblem, D) -> float:
    """Margin ``c/delta`` minus the curvature bound for the two-phase state on ``D``.

    A nonnegative margin guarantees that ``chi_D - chi_{X \\ D}`` is an
    equilibrium. Trivial partitions have no interface and return ``inf``.
    """
    mask = as_mask(prob.m2.n, D)
    if mask.all() or not mask.any() or prob.delta == 0:
        return math.inf
    h_in = mean_curvature(prob.m2, mask)[mask].max()
    h_out = mean_curvature(prob.m2, ~mask)[~mask].max()
    return prob.c / prob.delta - (1.0 + 0.5 * (h_in + h_out))


@dataclass
class AsymptoticsReport:
    gap2: float | None
    predicts_mean_convergence: bool
    pure_phase_margin: float | None
    omega_candidate: np.ndarray | None
    steady: bool
    steady_from: int | None
    max_rate: float
    tol: float
    window: int
    equilibrium: EquilibriumReport | None = None
    distance_to_mean: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["equilibrium"] = None if self.equilibrium is None else self.equilibrium.to_dict()
        return _jsonable(d)


def _rates(traj: Trajectory) -> np.ndarray:
    return traj.series("increment")[1:] / traj.tau


def detect_steady_state(
    traj: Trajectory,
    window: int = 50,
    tol: float | None = None,
    prob: CHProblem | None = None,
    eq_tol: float = 1e-8,
) -> AsymptoticsReport:
    """Declare the run steady when every rate ``|u^{n+1} - u^n| / tau`` in the last ``window`` steps is below ``tol``."""
    prob = prob if prob is not None else traj.problem
    nu = prob.m1.nu if prob is not None else np.ones_like(traj.initial)
    if tol is None:
        tol = 1e-8 * (1.0 + nu_norm(nu, traj.initial))
    notes = []
    gap2 = None
    predicts = False
    if prob is not None:
        try:
            gap2 = spectral_gap(prob.m2)
        except OperatorError as exc:
            notes.append(f"no spectral gap for m2: {exc}")
        if gap2 is not None:
            predicts = prob.c < prob.delta * gap2
    rates = _rates(traj)
    max_rate = float(np.max(rates[-window:])) if rates.size else 0.0
    steady = rates.size >= window and max_rate <= tol
    if rates.size < window:
        notes.append(f"trajectory has {rates.size} steps, fewer than the window of {window}")
    steady_from = None
    if steady:
        above = np.flatnonzero(rates > tol)
        steady_from = int(above[-1] + 2) if above.size else 1
    omega = traj.final.copy() if steady else None
    eq = None
    margin = None
    dist = None
    if prob is not None:
        ubar = float(np.dot(nu, traj.initial) / np.sum(nu))
        dist = nu_norm(nu, traj.final - ubar)
        final = traj.final
        if np.all(np.isfinite(prob.graph.gamma_minus)) and np.all(np.isfinite(prob.graph.gamma_plus)):
            hi = np.abs(final - prob.graph.gamma_plus) <= 1e-9
            lo_ = np.abs(final - prob.graph.gamma_minus) <= 1e-9
            if np.all(hi | lo_):
                margin = pure_phase_criterion(prob, hi)
        if steady:
            eq = check_equilibrium(prob, omega, eq_tol)
    if not steady:
        notes.append("no steady state detected; the omega-limit set is not asserted empty")
    return AsymptoticsReport(gap2, predicts, margin, omega, steady, steady_from, max_rate, tol, window,
                             eq, dist, notes)


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skipped"
    worst_margin: float | None = None
    worst_step: int | None = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class AuditReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _jsonable({"passed": self.passed, "checks": [asdict(c) for c in self.checks]})


def lp_growth_constant(c: float) -> float:
    return 4.0 * max(c, 1.0)


def _worst(margins: np.ndarray, steps) -> tuple[float, int]:
    i = int(np.argmin(margins))
    return float(margins[i]), int(steps[i])


def audit(
    traj: Trajectory,
    prob: CHProblem | None = None,
    mass_tol: float = 1e-10,
    energy_tol: float = 1e-9,
) -> AuditReport:
    """Recheck conservation, dissipation and growth bounds along a trajectory.

    Snapshot fields are re-evaluated rather than trusting stored diagnostics,
    so edited snapshot files are caught at the step they belong to.
    """
    prob = prob if prob is not None else traj.problem
    nu = prob.m1.nu
    total = float(np.sum(nu))
    steps = np.array(traj.steps)
    times = np.array(traj.times)
    U = np.array(traj.u)
    checks = []

    m0 = float(np.dot(nu, traj.initial))
    drift_snap = np.abs(U @ nu - m0)
    rec_mass = traj.series("mass")
    drift_rec = np.abs(rec_mass - m0)
    limit = mass_tol * total
    margins = np.concatenate([limit - drift_snap, limit - drift_rec])
    all_steps = np.concatenate([steps, np.arange(rec_mass.size)])
    wm, ws = _worst(margins, all_steps)
    checks.append(CheckResult("mass", "pass" if wm >= 0 else "fail", wm, ws,
                              f"max drift {max(drift_snap.max(), drift_rec.max()):.3e}, limit {limit:.3e}"))

    if traj.scheme == "imex_split" and prob.shared:
        E = traj.series("energy")
        for k, u in zip(steps, U):
            E[k] = energy(prob, u)
        inc = np.diff(E)
        if inc.size:
            wm, ws = _worst(energy_tol - inc, np.arange(1, E.size))
            checks.append(CheckResult("energy", "pass" if wm >= 0 else "fail", wm, ws,
                                      f"largest increase {inc.max():.3e}"))
        else:
            checks.append(CheckResult("energy", "pass", energy_tol, 0, "no steps"))
    else:
        checks.append(CheckResult("energy", "skipped", detail="energy monotonicity is only asserted for the convex-splitting scheme with a shared measure"))

    C = lp_growth_constant(prob.c)
    grow = np.exp(C * times) * (1.0 + 10.0 * traj.tau)
    for p, key in ((2, "norm_l2"), (4, "norm_l4"), (math.inf, "norm_linf")):
        n0 = nu_norm(nu, traj.initial, p)
        vals = np.array([nu_norm(nu, u, p) for u in U])
        bound = n0 * grow + 1e-12
        wm, ws = _worst(bound - vals, steps)
        name = f"lp_envelope_{'inf' if math.isinf(p) else p}"
        checks.append(CheckResult(name, "pass" if wm >= 0 else "fail", wm, ws,
                                  f"C = {C!r}, |u0|_p = {n0!r}"))

    fmin = -math.inf
    try:
        fmin = prob.graph.potential_lower_bound(prob.c)
    except NotImplementedError:
        pass
    gap2 = None
    if prob.shared and prob.delta > 0:
        try:
            gap2 = spectral_gap(prob.m2)
        except OperatorError:
            gap2 = None
    if gap2 and math.isfinite(fmin) and traj.scheme == "imex_split":
        ubar = m0 / total
        E0 = energy(prob, traj.initial)
        radius = math.sqrt(max(0.0, 2.0 * (E0 - total * fmin) / (prob.delta * gap2)))
        bound = nu_norm(nu, np.full_like(traj.initial, ubar)) + radius
        vals = np.array([nu_norm(nu, u) for u in U])
        wm, ws = _worst(bound * (1 + 1e-12) - vals, steps)
        checks.append(CheckResult("l2_bounded", "pass" if wm >= 0 else "fail", wm, ws, f"bound {bound!r}"))
    else:
        checks.append(CheckResult("l2_bounded", "skipped",
                                  detail="needs the convex-splitting scheme, a shared measure, a positive gap and a potential bounded below"))
    return AuditReport(checks)
