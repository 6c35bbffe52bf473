import numpy as np
import pytest

from helpers import k2, path, random_connected
from rwch.operators import nu_norm
from rwch.potentials import hele_shaw, logarithmic, obstacle, power_law, stefan
from rwch.pme import (
    ConvergenceError,
    MassWindowError,
    ResolventProblem,
    ResolventSolver,
    pme_mild_solve,
    solve_resolvent,
    validate_mass_window,
)

GRAPHS = [obstacle(), hele_shaw(), logarithmic(), power_law(3), power_law(1), power_law(0.5), stefan()]
IDS = ["obstacle", "hele_shaw", "log", "p3", "p1", "p05", "stefan"]


def _datum(rng, graph, nu, n):
    lo = max(graph.gamma_minus, -2.0)
    hi = min(graph.gamma_plus, 2.0)
    g = rng.uniform(lo, hi, n)
    if graph.gamma_minus > -np.inf:
        # keep the mean strictly inside the window
        mean = np.dot(nu, g) / nu.sum()
        g = g + np.clip(mean, lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)) - mean
    return g


def _check_solution(walk, graph, lam, g, sol, L=None, tol=1e-10):
    nu = walk.nu
    lap_v = walk.kernel @ sol.v - sol.v
    res = sol.u - lam * lap_v - g
    if L is not None:
        res = res + lam * (L @ sol.u)
    assert nu_norm(nu, res) <= tol * max(1.0, nu_norm(nu, g)) * 10
    assert np.max(np.abs(graph.resolvent(1.0, sol.u + sol.v) - sol.u)) <= 1e-9
    m = np.dot(nu, g)
    assert abs(np.dot(nu, sol.u) - m) <= 1e-11 * max(1.0, abs(m), np.dot(nu, np.abs(g)))


def test_mass_window_examples():
    w = path(4)
    assert validate_mass_window(w, obstacle(), np.zeros(4)).ok
    rep = validate_mass_window(w, obstacle(), np.ones(4))
    assert not rep.ok and rep.first_violation_time == 0.0
    assert validate_mass_window(w, power_law(3), np.full(4, 1e6)).ok


def test_mass_window_with_forcing():
    w = k2()
    times = np.linspace(0, 2, 21)
    rep = validate_mass_window(w, obstacle(), np.zeros(2), lambda t: np.array([0.5, 0.5]), times)
    # mass grows like t, bound nu(X) = 2 is reached at t = 2
    assert not rep.ok and rep.first_violation_time == pytest.approx(2.0)
    np.testing.assert_allclose(rep.masses, times)


@pytest.mark.parametrize("graph", GRAPHS, ids=IDS)
def test_constant_datum_is_fixed(graph):
    w = path(5)
    a = 0.3
    sol = solve_resolvent(ResolventProblem(w, graph, 0.7, np.full(5, a)))
    np.testing.assert_allclose(sol.u, a, atol=1e-12)
    np.testing.assert_allclose(sol.v, graph.min_section(np.array([a]))[0], atol=1e-10)


def test_heat_resolvent_k2():
    sol = solve_resolvent(ResolventProblem(k2(), power_law(1), 0.5, np.array([1.0, 0.0])))
    np.testing.assert_allclose(sol.u, [0.75, 0.25], atol=1e-12)


def test_obstacle_resolvent_k2():
    sol = solve_resolvent(ResolventProblem(k2(), obstacle(), 1.0, np.array([2.0, -2.0])))
    np.testing.assert_allclose(sol.u, [1.0, -1.0], atol=1e-12)
    # v is only determined up to v = (a, a - 1) with a in [0, 1]
    assert sol.v[1] - sol.v[0] == pytest.approx(-1.0, abs=1e-10)
    assert sol.v[0] >= -1e-12 and sol.v[1] <= 1e-12


def test_mass_window_violation_raises():
    with pytest.raises(MassWindowError):
        solve_resolvent(ResolventProblem(k2(), obstacle(), 1.0, np.array([1.0, 1.0])))


def test_budget_exhaustion_reports_residual():
    solver = ResolventSolver(path(6), power_law(3), max_iter=1)
    with pytest.raises(ConvergenceError) as info:
        solver.solve(np.array([3.0, -2.0, 1.0, 0.0, 4.0, -5.0]), 2.0)
    assert np.isfinite(info.value.residual) and info.value.residual > 0


@pytest.mark.parametrize("graph", GRAPHS, ids=IDS)
@pytest.mark.parametrize("seed", range(3))
def test_random_resolvent_invariants(graph, seed):
    rng = np.random.default_rng(seed)
    w = random_connected(rng, int(rng.integers(3, 25)))
    g = _datum(rng, graph, w.nu, w.n)
    lam = float(rng.uniform(0.05, 5.0))
    sol = solve_resolvent(ResolventProblem(w, graph, lam, g))
    _check_solution(w, graph, lam, g, sol)
    assert np.all(sol.u >= graph.gamma_minus - 1e-12) and np.all(sol.u <= graph.gamma_plus + 1e-12)


@pytest.mark.parametrize("graph", GRAPHS, ids=IDS)
def test_resolvent_with_linear_part(graph):
    rng = np.random.default_rng(11)
    w = random_connected(rng, 10)
    A = w.dense() - np.eye(w.n)
    L = 0.8 * A @ A
    g = _datum(rng, graph, w.nu, w.n)
    sol = solve_resolvent(ResolventProblem(w, graph, 0.3, g, L=L))
    _check_solution(w, graph, 0.3, g, sol, L=L)


@pytest.mark.parametrize("graph", [obstacle(), power_law(3)], ids=["obstacle", "p3"])
def test_sparse_path_resolvent(graph):
    rng = np.random.default_rng(5)
    w = path(700)
    g = _datum(rng, graph, w.nu, w.n)
    sol = solve_resolvent(ResolventProblem(w, graph, 1.0, g))
    _check_solution(w, graph, 1.0, g, sol)


@pytest.mark.parametrize("graph", GRAPHS, ids=IDS)
def test_resolvent_l1_contraction(graph):
    rng = np.random.default_rng(2)
    for _ in range(5):
        w = random_connected(rng, int(rng.integers(3, 15)))
        solver = ResolventSolver(w, graph)
        g1, g2 = _datum(rng, graph, w.nu, w.n), _datum(rng, graph, w.nu, w.n)
        u1, u2 = solver.solve(g1, 0.8).u, solver.solve(g2, 0.8).u
        assert np.dot(w.nu, np.abs(u1 - u2)) <= np.dot(w.nu, np.abs(g1 - g2)) + 1e-10


def test_heat_trajectory_k2():
    traj = pme_mild_solve(k2(), power_law(1), [1.0, 0.0], None, 1e-3, 1.0, stride=100)
    exact = 0.5 + 0.5 * np.exp(-2.0)
    assert traj.n_steps == 1000
    assert np.max(np.abs(traj.final - [exact, 1 - exact])) <= 2e-3


def test_constant_trajectory():
    traj = pme_mild_solve(path(4), logarithmic(), np.full(4, 0.2), None, 0.1, 1.0)
    for u in traj.u:
        np.testing.assert_allclose(u, 0.2, atol=1e-13)


def test_pure_phase_fast_path():
    traj = pme_mild_solve(path(4), obstacle(), np.ones(4), None, 0.1, 0.5)
    assert traj.complete and traj.n_steps == 5
    assert any("pure phase" in n for n in traj.notices)
    np.testing.assert_array_equal(traj.final, np.ones(4))


@pytest.mark.parametrize("graph", GRAPHS, ids=IDS)
def test_t_contraction_and_bounds(graph):
    rng = np.random.default_rng(21)
    w = random_connected(rng, 12)
    nu = w.nu
    a = _datum(rng, graph, nu, w.n)
    b = np.minimum(a + rng.uniform(0, 0.5, w.n), graph.gamma_plus)
    solver = ResolventSolver(w, graph)
    ta = pme_mild_solve(w, graph, a, None, 0.05, 1.0, solver=solver)
    tb = pme_mild_solve(w, graph, b, None, 0.05, 1.0, solver=solver)
    pos = [np.dot(nu, np.maximum(x - y, 0)) for x, y in zip(ta.u, tb.u)]
    assert all(p2 <= p1 + 1e-10 for p1, p2 in zip(pos, pos[1:]))
    for u in ta.u + tb.u:
        assert np.all(u >= graph.gamma_minus - 1e-12) and np.all(u <= graph.gamma_plus + 1e-12)
    E = ta.series("energy")
    assert np.all(np.diff(E) <= 1e-10)


def test_forcing_mass_balance():
    rng = np.random.default_rng(4)
    w = random_connected(rng, 9)
    nu = w.nu
    F = rng.uniform(-0.2, 0.2, (40, w.n))
    u0 = rng.uniform(-0.3, 0.3, w.n)
    tau = 0.025
    traj = pme_mild_solve(w, obstacle(), u0, F, tau, 1.0)
    expected = np.dot(nu, u0) + tau * np.concatenate([[0.0], np.cumsum(F @ nu)])
    assert np.max(np.abs(traj.series("mass") - expected)) <= 1e-10 * w.total
    callable_traj = pme_mild_solve(w, obstacle(), u0, lambda t: F[int(round(t / tau))], tau, 1.0)
    np.testing.assert_allclose(callable_traj.final, traj.final, atol=1e-12)


def test_forced_t_contraction():
    rng = np.random.default_rng(8)
    w = random_connected(rng, 10)
    nu = w.nu
    f1 = rng.uniform(-0.1, 0.1, (20, w.n))
    f2 = f1 + rng.uniform(0, 0.05, (20, w.n))
    u1 = rng.uniform(-0.5, 0.5, w.n)
    u2 = u1 + 0.1
    t1 = pme_mild_solve(w, power_law(2), u1, f1, 0.05, 1.0)
    t2 = pme_mild_solve(w, power_law(2), u2, f2, 0.05, 1.0)
    for k in range(20):
        lhs = np.dot(nu, np.maximum(t1.u[k + 1] - t2.u[k + 1], 0))
        rhs = np.dot(nu, np.maximum(t1.u[k] - t2.u[k], 0)) + 0.05 * np.dot(nu, np.maximum(f1[k] - f2[k], 0))
        assert lhs <= rhs + 1e-10


def test_step_errors_carry_index():
    w = k2()
    F = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0]])
    with pytest.raises(MassWindowError, match="step 2"):
        pme_mild_solve(w, obstacle(), np.zeros(2), F, 0.5, 1.5)


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        pme_mild_solve(k2(), obstacle(), np.zeros(2), None, 0.0, 1.0)


def test_obstacle_flow_without_forcing_is_stationary():
    u0 = np.array([0.3, -0.9, 1.0, -1.0])
    traj = pme_mild_solve(path(4), obstacle(), u0, None, 0.1, 1.0)
    np.testing.assert_allclose(traj.final, u0, atol=1e-12)


@pytest.mark.parametrize("graph", [logarithmic(), power_law(3), stefan()], ids=["log", "p3", "stefan"])
def test_crandall_liggett_refinement(graph):
    rng = np.random.default_rng(13)
    w = random_connected(rng, 8)
    u0 = _datum(rng, graph, w.nu, w.n)
    T = 1.0
    finals = {}
    for k in range(3, 10):
        finals[k] = pme_mild_solve(w, graph, u0, None, T * 2.0**-k, T).final
    diffs = [nu_norm(w.nu, finals[k] - finals[k + 1]) for k in range(3, 9)]
    assert all(b < a for a, b in zip(diffs, diffs[1:])), diffs
