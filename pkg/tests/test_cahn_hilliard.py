import math

import numpy as np
import pytest

from helpers import complete, k2, path, random_connected
from rwch.cahn_hilliard import (
    CHProblem,
    ProblemError,
    chemical_potential,
    energy,
    lipschitz_bound_G,
    operator_G,
    solve,
    step_imex,
)
from rwch.operators import dirichlet_energy
from rwch.pme import ConvergenceError, MassWindowError
from rwch.potentials import PotentialSpec, logarithmic, obstacle, power_law, stefan
from rwch.walks import from_markov_kernel, from_weighted_graph


def _prob(m, graph, c, delta, u0, m2=None, **kw):
    return CHProblem(m, m2 if m2 is not None else m, PotentialSpec(graph, c, delta), np.asarray(u0, float), **kw)


def _other_measure(rng, n):
    """A path walk on n nodes with random weights, so its measure differs from the unit path."""
    return from_weighted_graph([(i, i + 1, rng.uniform(0.5, 2.0)) for i in range(n - 1)], n=n)


def test_lipschitz_k2():
    b = lipschitz_bound_G(_prob(k2(), power_law(3), 1.0, 1.0, [0.1, 0.0]))
    assert b.l2 == pytest.approx(2.0, abs=1e-12)
    assert b.l1 == pytest.approx(2.0, abs=1e-12)
    assert b.l2 <= b.analytic


def test_lipschitz_identity_second_walk():
    # with Delta_2 = 0 the operator reduces to c Delta_1, whose norm on K2 is 2c
    m1 = k2()
    ident = from_markov_kernel(np.eye(2), pi=m1.nu)
    for c in (1.0, 0.3):
        prob = _prob(m1, power_law(3), c, 2.5, [0.1, 0.0], m2=ident, scheme="picard")
        np.testing.assert_allclose(operator_G(prob).toarray(), c * (m1.dense() - np.eye(2)), atol=1e-15)
        assert lipschitz_bound_G(prob).l2 == pytest.approx(2.0 * c, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_lipschitz_bounds_dominate(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 15))
    m1 = random_connected(rng, n, loops=True)
    shared = seed % 2 == 0
    m2 = random_connected(rng, n) if not shared else from_markov_kernel(
        np.linalg.matrix_power(m1.dense(), 2), pi=m1.nu)
    prob = _prob(m1, power_law(3), rng.uniform(0.1, 3), rng.uniform(0.1, 3), np.zeros(n), m2=m2, scheme="picard")
    b = lipschitz_bound_G(prob)
    assert b.l2 <= b.analytic * (1 + 1e-10)
    assert b.l1 <= b.analytic * (1 + 1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_operator_expansion(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    m1 = random_connected(rng, n)
    m2 = from_markov_kernel(np.linalg.matrix_power(m1.dense(), 3), pi=m1.nu)
    c, d = rng.uniform(0.1, 3), rng.uniform(0.1, 3)
    G = operator_G(_prob(m1, obstacle(), c, d, np.zeros(n), m2=m2)).toarray()
    P1, P2, I = m1.dense(), m2.dense(), np.eye(n)
    # convolution m1 * m2 has kernel P1 P2
    expanded = d * (P1 @ P2 - I) + (c - d) * (P1 - I) - d * (P2 - I)
    assert np.max(np.abs(G - expanded)) <= 1e-13
    assert np.max(np.abs((P1 - I) @ (P2 - I) - (P1 @ P2 - P1 - P2 + I))) <= 1e-14


def test_step_constant_state():
    prob = _prob(path(5), logarithmic(), 0.7, 1.0, np.full(5, 0.3), tau=0.1)
    u, v, mu = step_imex(prob, prob.u0)
    np.testing.assert_allclose(u, 0.3, atol=1e-13)
    np.testing.assert_allclose(mu, mu[0], atol=1e-12)
    assert mu[0] == pytest.approx(2 * math.atanh(0.3) - 0.7 * 0.3, abs=1e-10)


def test_step_keeps_pure_phase_equilibrium():
    w = path(6)
    u0 = np.array([1.0, 1, 1, -1, -1, -1])
    prob = _prob(w, obstacle(), 2.0, 1.0, u0, tau=0.05)
    u, v, mu = step_imex(prob, u0)
    np.testing.assert_allclose(u, u0, atol=1e-10)


def _one_step_gap(tau):
    u0 = np.array([0.2, -0.2])
    a = _prob(k2(), power_law(3), 0.5, 1.0, u0, tau=tau, T=tau)
    b = _prob(k2(), power_law(3), 0.5, 1.0, u0, tau=tau, T=tau, scheme="picard", picard_tol=1e-14)
    return np.linalg.norm(step_imex(a, u0)[0] - solve(b).final)


def test_one_step_cross_scheme_second_order():
    gaps = [_one_step_gap(t) for t in (1e-2, 5e-3, 2.5e-3)]
    assert gaps[0] <= 10.0 * 1e-2**2
    for g1, g2 in zip(gaps, gaps[1:]):
        assert 3.0 <= g1 / g2 <= 5.0


@pytest.mark.parametrize("graph", [obstacle(), logarithmic(), power_law(3), stefan()],
                         ids=["obstacle", "log", "p3", "stefan"])
@pytest.mark.parametrize("tau", [1e-2, 1.0])
def test_imex_mass_energy_domain(graph, tau):
    rng = np.random.default_rng(3)
    w = random_connected(rng, 12)
    u0 = rng.uniform(-0.9, 0.9, 12) if graph.gamma_minus > -np.inf else rng.uniform(-1.5, 1.5, 12)
    if graph.gamma_minus == 0.0:
        u0 = np.abs(u0)
    prob = _prob(w, graph, 1.5, 0.5, u0, tau=tau, T=30 * tau)
    traj = solve(prob)
    m = traj.series("mass")
    assert np.max(np.abs(m - m[0])) <= 1e-10 * w.total
    assert np.all(np.diff(traj.series("energy")) <= 1e-9)
    for u in traj.u:
        assert np.all(u >= graph.gamma_minus - 1e-12) and np.all(u <= graph.gamma_plus + 1e-12)


def test_picard_mass_and_domain():
    rng = np.random.default_rng(9)
    w = random_connected(rng, 10)
    u0 = rng.uniform(-0.8, 0.8, 10)
    traj = solve(_prob(w, obstacle(), 1.0, 1.0, u0, scheme="picard", tau=0.02, T=1.0))
    m = traj.series("mass")
    assert np.max(np.abs(m - m[0])) <= 1e-10 * w.total
    assert any(n.startswith("picard window") for n in traj.notices)
    assert all("sweeps" in r for r in traj.records[1:])
    for u in traj.u:
        assert np.all(np.abs(u) <= 1 + 1e-12)


def test_discrete_energy_identity_residual_shrinks():
    rng = np.random.default_rng(1)
    w = random_connected(rng, 8)
    u0 = rng.uniform(-0.5, 0.5, 8)
    res = []
    for tau in (0.04, 0.02, 0.01):
        traj = solve(_prob(w, power_law(3), 0.5, 1.0, u0, tau=tau, T=0.4))
        E = traj.series("energy")
        D = traj.series("mu_dirichlet")[1:]
        res.append(abs(E[-1] - E[0] + tau * D.sum()))
    assert res[0] > res[1] > res[2]
    assert res[1] / res[2] >= 1.5


def test_zero_datum_trajectory():
    for g in (obstacle(), logarithmic(), power_law(3)):
        traj = solve(_prob(path(4), g, 1.0, 1.0, np.zeros(4), tau=0.1, T=1.0))
        for u in traj.u:
            np.testing.assert_allclose(u, 0.0, atol=1e-14)


@pytest.mark.parametrize("scheme", ["imex_split", "picard"])
def test_k2_converges_to_mean(scheme):
    prob = _prob(k2(), power_law(3), 0.1, 1.0, [0.4, -0.2], scheme=scheme, tau=0.1, T=80, snapshot_stride=100)
    traj = solve(prob)
    assert np.linalg.norm(traj.final - 0.1) <= 1e-6


def test_energy_examples():
    w = k2()
    assert energy(_prob(w, obstacle(), 3.0, 1.0, [0.0, 0.0]), np.zeros(2)) == 0.0
    assert energy(_prob(w, obstacle(), 2.0, 1.0, [0.0, 0.0]), np.array([1.0, -1.0])) == pytest.approx(0.0, abs=1e-15)
    assert energy(_prob(w, obstacle(), 2.0, 1.0, [0.0, 0.0]), np.array([1.5, -1.0])) == math.inf
    rng = np.random.default_rng(0)
    m = random_connected(rng, 7)
    u = rng.uniform(-0.9, 0.9, 7)
    E = [energy(_prob(m, logarithmic(), 1.3, d, u), u) for d in (0.0, 1.0, 2.5)]
    H = dirichlet_energy(m, u)
    assert E[1] - E[0] == pytest.approx(H, rel=1e-12)
    assert E[2] - E[0] == pytest.approx(2.5 * H, rel=1e-12)


def test_chemical_potential_examples():
    w = k2()
    prob = _prob(w, obstacle(), 2.0, 1.0, [0.0, 0.0])
    np.testing.assert_allclose(chemical_potential(prob, np.array([1.0, -1.0]), np.zeros(2)), 0.0, atol=1e-15)
    for s in (0.0, 0.7):
        mu = chemical_potential(prob, np.ones(2), np.full(2, s))
        np.testing.assert_allclose(mu, s - 2.0)
    lg = _prob(w, logarithmic(), 0.5, 1.0, [0.0, 0.0])
    a = 0.4
    mu = chemical_potential(lg, np.full(2, a), np.full(2, 2 * math.atanh(a)))
    np.testing.assert_allclose(mu, 2 * math.atanh(a) - 0.5 * a)
    with pytest.raises(ValueError, match="Minty"):
        chemical_potential(prob, np.array([1.0, -1.0]), np.array([-1.0, 0.0]))


def test_two_measure_instances():
    rng = np.random.default_rng(2)
    m1 = path(6)
    m2 = _other_measure(rng, 6)
    u0 = rng.uniform(-0.5, 0.5, 6)
    with pytest.raises(ProblemError, match="share"):
        solve(_prob(m1, power_law(3), 1.0, 1.0, u0, m2=m2, tau=0.05, T=0.5))
    traj = solve(_prob(m1, power_law(3), 1.0, 1.0, u0, m2=m2, scheme="picard", tau=0.05, T=0.5))
    assert any("different measures" in n for n in traj.notices)
    assert all(r["energy"] is None for r in traj.records)
    m = traj.series("mass")
    assert np.max(np.abs(m - m[0])) <= 1e-10 * m1.total


def test_validation_errors():
    w = path(4)
    with pytest.raises(ProblemError):
        _prob(w, obstacle(), 1.0, 1.0, np.zeros(4), tau=0.0).validate()
    with pytest.raises(ProblemError):
        _prob(w, obstacle(), 1.0, 1.0, np.zeros(4), scheme="rk4").validate()
    with pytest.raises(ProblemError):
        _prob(w, obstacle(), 1.0, 1.0, np.array([2.0, 0, 0, 0])).validate()
    with pytest.raises(MassWindowError):
        _prob(w, obstacle(), 1.0, 1.0, np.array([1.0, 1.0, 1.0, 1.0 - 1e-16])).validate()
    # a pure phase is admissible even though its mass sits on the window edge
    _prob(w, obstacle(), 1.0, 1.0, np.ones(4)).validate()


def test_picard_non_contraction_is_reported():
    rng = np.random.default_rng(4)
    w = complete(6)
    u0 = rng.uniform(-0.5, 0.5, 6)
    prob = _prob(w, power_law(3), 20.0, 5.0, u0, scheme="picard", tau=0.5, T=5.0, window_factor=40.0)
    with pytest.raises(ConvergenceError, match="window") as info:
        solve(prob)
    assert info.value.trajectory.n_steps >= 0


def test_on_step_callback_sees_every_step():
    seen = []
    prob = _prob(path(4), power_law(3), 1.0, 1.0, [0.3, 0.1, -0.2, 0.0], tau=0.1, T=0.5)
    solve(prob, on_step=lambda t: seen.append(t.n_steps))
    assert seen == list(range(6))


def test_snapshot_stride():
    prob = _prob(path(4), power_law(3), 1.0, 1.0, [0.3, 0.1, -0.2, 0.0], tau=0.1, T=1.0, snapshot_stride=3)
    traj = solve(prob)
    assert traj.steps == [0, 3, 6, 9, 10]
    assert len(traj.records) == 11
