import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwch.potentials import (
    PotentialError,
    PotentialSpec,
    custom,
    graph_from_name,
    hele_shaw,
    logarithmic,
    obstacle,
    potential_energy,
    power_law,
    stefan,
)

GRAPHS = {
    "obstacle": obstacle(),
    "hele_shaw": hele_shaw(),
    "logarithmic": logarithmic(),
    "power3": power_law(3),
    "power1": power_law(1),
    "power_half": power_law(0.5),
    "stefan": stefan(),
    "custom_cubic": custom(lambda r: r**3 + r, j_star=lambda r: r**4 / 4 + r**2 / 2),
}

finite = st.floats(-50, 50, allow_nan=False)
steps = st.floats(1e-3, 20)


def test_power_law_examples():
    g = power_law(3)
    assert g.resolvent(1.0, np.array([2.0]))[0] == pytest.approx(1.0, abs=1e-12)
    assert g.j_star(np.array([2.0]))[0] == 4.0
    z = np.array([-3.0, 0.2, 5.0])
    np.testing.assert_allclose(power_law(1).resolvent(0.7, z), z / 1.7)


def test_power_law_rejects_nonpositive():
    with pytest.raises(PotentialError):
        power_law(0)


def test_logarithmic_examples():
    g = logarithmic()
    assert g.min_section(np.array([0.0]))[0] == 0.0
    assert g.resolvent(2.0, np.array([0.0]))[0] == 0.0
    assert g.j_star(np.array([1.0]))[0] == pytest.approx(2 * math.log(2), abs=1e-12)
    assert g.j_star(np.array([1.5]))[0] == math.inf


def test_obstacle_examples():
    g = obstacle()
    assert (g.gamma_minus, g.gamma_plus) == (-1.0, 1.0)
    assert g.resolvent(3.0, np.array([2.5]))[0] == 1.0
    assert g.resolvent(3.0, np.array([0.3]))[0] == 0.3
    assert g.j_star(np.array([0.5]))[0] == 0.0
    assert g.j_star(np.array([1.2]))[0] == math.inf


def test_stefan_and_hele_shaw_examples():
    s = stefan()
    assert s.resolvent(1.0, np.array([0.5]))[0] == 0.5
    assert s.min_section(np.array([0.5]))[0] == 0.0
    assert s.resolvent(1.0, np.array([-2.0]))[0] == -1.0
    assert s.resolvent(1.0, np.array([3.0]))[0] == 2.0
    assert hele_shaw().min_section(np.array([0.5]))[0] == 0.0


def test_potential_energy_examples():
    nu = np.ones(2)
    assert potential_energy(PotentialSpec(obstacle(), 2.0), np.zeros(2), nu) == 0.0
    assert potential_energy(PotentialSpec(obstacle(), 2.0), np.ones(2), nu) == -2.0
    assert potential_energy(PotentialSpec(power_law(3), 1.0), np.ones(1), np.ones(1)) == pytest.approx(-0.25)
    assert potential_energy(PotentialSpec(obstacle(), 2.0), np.array([2.0, 0.0]), nu) == math.inf


def test_spec_validation():
    with pytest.raises(PotentialError):
        PotentialSpec(obstacle(), 0.0)
    with pytest.raises(PotentialError):
        PotentialSpec(obstacle(), 1.0, -1.0)


def test_graph_from_name():
    assert graph_from_name("power", p=2).p == 2
    assert graph_from_name("double_well").p == 3
    with pytest.raises(PotentialError, match="unknown"):
        graph_from_name("quartic")


def test_custom_requires_origin():
    with pytest.raises(PotentialError):
        custom(lambda r: r + 1)


@pytest.mark.parametrize("name", sorted(GRAPHS))
@settings(max_examples=200, deadline=None)
@given(t=steps, z1=finite, z2=finite)
def test_resolvent_nonexpansive(name, t, z1, z2):
    g = GRAPHS[name]
    r = g.resolvent(t, np.array([z1, z2]))
    assert abs(r[0] - r[1]) <= abs(z1 - z2) * (1 + 1e-12) + 1e-12


@pytest.mark.parametrize("name", sorted(GRAPHS))
@settings(max_examples=200, deadline=None)
@given(t=steps, z=finite)
def test_resolvent_consistency(name, t, z):
    # x = R(t, z) must satisfy (z - x) / t in gamma^{-1}(x)
    g = GRAPHS[name]
    x = g.resolvent(t, np.array([z]))
    assert np.all(g.in_domain(x))
    if name == "logarithmic" and 1 - abs(x[0]) < 1e-15:
        return  # x is the last double before the boundary; the slope is not resolvable
    lo, hi = g.inverse_interval(x, atol=1e-9)
    s = (z - x[0]) / t
    scale = 1e-9 * (1 + abs(s))
    if np.isfinite(lo[0]) and np.isfinite(hi[0]) and lo[0] == hi[0]:
        # near the ends of the logarithmic domain one ulp of x moves the slope a lot
        cond = 4e-16 / max(1.0 - x[0] ** 2, 1e-300) if name == "logarithmic" else 0.0
        assert abs(x[0] + t * lo[0] - z) <= 1e-9 * (1 + abs(z)) + 2 * t * cond
    else:
        assert lo[0] - scale <= s <= hi[0] + scale


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_j_star_convex(name):
    g = GRAPHS[name]
    lo = max(g.gamma_minus, -3.0)
    hi = min(g.gamma_plus, 3.0)
    r = np.linspace(lo, hi, 2001)
    j = g.j_star(r)
    ok = np.isfinite(j)
    j = j[ok]
    assert np.all(j[:-2] - 2 * j[1:-1] + j[2:] >= -1e-10)


MINTY_SAMPLES = {
    "obstacle": [(1.0, 0.0), (1.0, 3.0), (-1.0, -2.0), (0.4, 0.0)],
    "hele_shaw": [(0.0, -1.5), (1.0, 0.7), (0.5, 0.0)],
    "stefan": [(0.5, 0.0), (0.0, 0.0), (1.0, 0.0), (-2.0, -2.0), (3.0, 2.0)],
    "logarithmic": [(0.0, 0.0), (0.9, 2 * math.atanh(0.9)), (-0.5, 2 * math.atanh(-0.5))],
    "power3": [(2.0, 8.0), (-1.0, -1.0), (0.0, 0.0)],
}


@pytest.mark.parametrize("name", sorted(MINTY_SAMPLES))
@pytest.mark.parametrize("sigma", [0.1, 1.0, 7.0])
def test_minty_identity(name, sigma):
    g = GRAPHS[name]
    for u, v in MINTY_SAMPLES[name]:
        assert g.resolvent(sigma, np.array([u + sigma * v]))[0] == pytest.approx(u, abs=1e-10)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_resolvent_derivative_matches_difference(name):
    g = GRAPHS[name]
    z = np.array([-2.3, -0.41, 0.37, 0.8, 1.7, 4.2])
    h = 1e-6
    fd = (g.resolvent(0.6, z + h) - g.resolvent(0.6, z - h)) / (2 * h)
    np.testing.assert_allclose(g.resolvent_derivative(0.6, z), fd, atol=1e-4)


@pytest.mark.parametrize("name", ["obstacle", "logarithmic", "power3", "stefan", "hele_shaw"])
def test_lower_bound(name):
    g = GRAPHS[name]
    c = 0.7
    lb = g.potential_lower_bound(c)
    lo, hi = max(g.gamma_minus, -10), min(g.gamma_plus, 10)
    r = np.linspace(lo, hi, 4001)
    vals = g.j_star(r) - 0.5 * c * r * r
    assert lb <= vals.min() + 1e-9
    assert lb >= vals.min() - 1e-3
