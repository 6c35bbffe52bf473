"""Maximal monotone graphs and the potential split ``dF(r) = gamma^{-1}(r) - c r``.

Each graph is exposed through the least-norm section of ``gamma^{-1}``, its
primitive ``j_star``, the scalar resolvent ``(I + t gamma^{-1})^{-1}`` and the
resolvent's derivative. Multivalued plateaus never need to be enumerated:
the resolvent is single valued and exact for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "PotentialError",
    "MonotoneGraph",
    "PowerLaw",
    "Logarithmic",
    "BoxIndicator",
    "Stefan",
    "CustomGraph",
    "power_law",
    "logarithmic",
    "obstacle",
    "stefan",
    "hele_shaw",
    "custom",
    "PotentialSpec",
    "potential_energy",
    "graph_from_name",
    "safeguarded_root",
]


class PotentialError(ValueError):
    pass


def safeguarded_root(
    fun: Callable[[np.ndarray], np.ndarray],
    dfun: Callable[[np.ndarray], np.ndarray] | None,
    lo: np.ndarray,
    hi: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Vectorized Newton with bisection fallback for increasing ``fun`` on ``[lo, hi]``."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float), lo, hi)
    for _ in range(max_iter):
        r = fun(x)
        done = (np.abs(r) <= tol) | (hi - lo <= tol * (1.0 + np.abs(x)))
        if np.all(done):
            break
        pos = r > 0
        hi = np.where(pos, x, hi)
        lo = np.where(pos, lo, x)
        if dfun is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                step = x - r / dfun(x)
            ok = np.isfinite(step) & (step > lo) & (step < hi)
            x_new = np.where(ok, step, 0.5 * (lo + hi))
        else:
            x_new = 0.5 * (lo + hi)
        x = np.where(done, x, x_new)
    return x


class MonotoneGraph:
    """Maximal monotone graph ``gamma`` with ``0 in gamma(0)``.

    Subclasses supply the least-norm section of ``gamma^{-1}``, ``j_star``,
    the resolvent and its derivative, and the interval ``gamma^{-1}(u)``.
    """

    name = "graph"
    gamma_minus = -math.inf
    gamma_plus = math.inf

    def params(self) -> dict:
        return {}

    def in_domain(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (u >= self.gamma_minus) & (u <= self.gamma_plus)

    def min_section(self, u):
        raise NotImplementedError

    def j_star(self, u):
        raise NotImplementedError

    def resolvent(self, t: float, z):
        raise NotImplementedError

    def resolvent_derivative(self, t: float, z):
        raise NotImplementedError

    def inverse_interval(self, u, atol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Bounds ``(lo, hi)`` of ``gamma^{-1}(u)``; empty where ``lo > hi``."""
        u = np.asarray(u, dtype=float)
        s = self.min_section(np.clip(u, self.gamma_minus, self.gamma_plus))
        ok = self.in_domain(u)
        return np.where(ok, s, np.inf), np.where(ok, s, -np.inf)

    def interior_value(self, u):
        """Clamp ``u`` strictly inside the domain so ``min_section`` is finite."""
        return np.asarray(u, dtype=float)

    def potential_lower_bound(self, c: float) -> float:
        """``inf_r j_star(r) - c r**2 / 2`` (may be ``-inf``)."""
        lo, hi = self.gamma_minus, self.gamma_plus
        if math.isinf(lo) or math.isinf(hi):
            raise NotImplementedError
        f = lambda r: float(self.j_star(np.array([r]))[0] - 0.5 * c * r * r)
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        return min(res.fun, f(lo), f(hi), f(0.0))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class PowerLaw(MonotoneGraph):
    """``gamma^{-1}(r) = |r|**(p-1) r``: heat (p=1), porous medium (p>1), fast diffusion (p<1)."""

    name = "power"

    def __init__(self, p: float):
        if not p > 0:
            raise PotentialError(f"power-law exponent must be positive, got {p!r}")
        self.p = float(p)

    def params(self):
        return {"p": self.p}

    def min_section(self, u):
        u = np.asarray(u, dtype=float)
        return np.sign(u) * np.abs(u) ** self.p

    def j_star(self, u):
        u = np.asarray(u, dtype=float)
        return np.abs(u) ** (self.p + 1) / (self.p + 1)

    def resolvent(self, t, z):
        z = np.asarray(z, dtype=float)
        if self.p == 1.0:
            return z / (1.0 + t)
        a = np.abs(z)
        p = self.p
        # solve x + t x**p = |z| on [0, |z|]
        x = safeguarded_root(
            lambda x: x + t * x**p - a,
            lambda x: 1.0 + t * p * x ** (p - 1),
            np.zeros_like(a), a.copy(), x0=np.minimum(a, (a / t) ** (1.0 / p)),
        )
        return np.sign(z) * x

    def resolvent_derivative(self, t, z):
        x = np.abs(self.resolvent(t, z))
        with np.errstate(divide="ignore"):
            d = 1.0 + t * self.p * x ** (self.p - 1)
        return np.where(np.isfinite(d), 1.0 / d, 0.0)

    def potential_lower_bound(self, c):
        p = self.p
        if p < 1:
            return -math.inf
        if p == 1:
            return 0.0 if c <= 1 else -math.inf
        r = c ** (1.0 / (p - 1))
        return r ** (p + 1) / (p + 1) - 0.5 * c * r * r


class Logarithmic(MonotoneGraph):
    """``gamma^{-1}(r) = log(1 + r) - log(1 - r)`` on ``(-1, 1)``."""

    name = "logarithmic"
    gamma_minus = -1.0
    gamma_plus = 1.0

    def min_section(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log1p(u) - np.log1p(-u)

    def in_domain(self, u):
        u = np.asarray(u, dtype=float)
        return (u > -1.0) & (u < 1.0)

    def j_star(self, u):
        u = np.asarray(u, dtype=float)
        out = np.full(u.shape, np.inf)
        inside = np.abs(u) <= 1.0
        a, b = 1.0 + u[inside], 1.0 - u[inside]
        out[inside] = _xlogx(a) + _xlogx(b)
        return out

    @staticmethod
    def _branch(t, z):
        # solve tanh(y) + 2 t y = |z| for y = artanh(x) >= 0; well conditioned even when x -> 1
        a = np.abs(np.asarray(z, dtype=float))
        y = safeguarded_root(
            lambda y: np.tanh(y) + 2.0 * t * y - a,
            lambda y: 1.0 - np.tanh(y) ** 2 + 2.0 * t,
            np.zeros_like(a), a / (2.0 * t), x0=a / (1.0 + 2.0 * t),
            tol=1e-15,
        )
        return np.sign(z) * y

    def resolvent(self, t, z):
        # once tanh rounds to +-1 keep the largest double strictly inside the domain
        x = np.tanh(self._branch(t, z))
        return np.clip(x, -_BELOW_ONE, _BELOW_ONE)

    def resolvent_derivative(self, t, z):
        y = np.abs(self._branch(t, z))
        # 1 / (1 + 2 t cosh(y)^2) written with exp(-2y) to avoid overflow
        e = np.exp(-2.0 * y)
        return 4.0 * e / (4.0 * e + 2.0 * t * (1.0 + e) ** 2)

    def inverse_interval(self, u, atol=1e-12):
        u = np.asarray(u, dtype=float)
        ok = self.in_domain(u)
        s = self.min_section(np.where(ok, u, 0.0))
        return np.where(ok, s, np.inf), np.where(ok, s, -np.inf)

    def interior_value(self, u):
        return np.clip(np.asarray(u, dtype=float), -1.0 + 1e-9, 1.0 - 1e-9)


_BELOW_ONE = np.nextafter(1.0, 0.0)


def _xlogx(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)


class BoxIndicator(MonotoneGraph):
    """``gamma^{-1} = d I_[lo, hi]``: obstacle (``[-1, 1]``) and Hele-Shaw (``[0, 1]``)."""

    def __init__(self, lo: float, hi: float, name: str = "box"):
        if not lo <= 0 <= hi or not lo < hi:
            raise PotentialError("box must contain 0 and have positive length")
        self.gamma_minus = float(lo)
        self.gamma_plus = float(hi)
        self.name = name

    def params(self):
        return {} if self.name in ("obstacle", "hele_shaw") else {"lo": self.gamma_minus, "hi": self.gamma_plus}

    def min_section(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros_like(u)

    def j_star(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(self.in_domain(u), 0.0, np.inf)

    def resolvent(self, t, z):
        return np.clip(np.asarray(z, dtype=float), self.gamma_minus, self.gamma_plus)

    def resolvent_derivative(self, t, z):
        z = np.asarray(z, dtype=float)
        # at the kinks the inactive branch is taken
        return ((z >= self.gamma_minus) & (z <= self.gamma_plus)).astype(float)

    def inverse_interval(self, u, atol=1e-12):
        u = np.asarray(u, dtype=float)
        lo = np.zeros_like(u)
        hi = np.zeros_like(u)
        at_lo = np.abs(u - self.gamma_minus) <= atol
        at_hi = np.abs(u - self.gamma_plus) <= atol
        lo[at_lo] = -np.inf
        hi[at_hi] = np.inf
        out = (u < self.gamma_minus - atol) | (u > self.gamma_plus + atol)
        lo[out], hi[out] = np.inf, -np.inf
        return lo, hi

    def potential_lower_bound(self, c):
        return -0.5 * c * max(self.gamma_minus**2, self.gamma_plus**2)


class Stefan(MonotoneGraph):
    """Two-phase Stefan graph: ``gamma^{-1}(r)`` is ``r`` below 0, flat on ``[0, 1]``, ``r - 1`` above 1."""

    name = "stefan"

    def min_section(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, u, np.where(u > 1, u - 1.0, 0.0))

    def j_star(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * np.where(u < 0, u * u, np.where(u > 1, (u - 1.0) ** 2, 0.0))

    def resolvent(self, t, z):
        z = np.asarray(z, dtype=float)
        return np.where(z < 0, z / (1.0 + t), np.where(z > 1, (z + t) / (1.0 + t), z))

    def resolvent_derivative(self, t, z):
        z = np.asarray(z, dtype=float)
        return np.where((z < 0) | (z > 1), 1.0 / (1.0 + t), 1.0)

    def potential_lower_bound(self, c):
        # below 0 the quadratic wins; above 1 the minimum sits at r = 1 / (1 - c)
        return -c / (2.0 * (1.0 - c)) if c < 1 else -math.inf


class CustomGraph(MonotoneGraph):
    """User graph given by a continuous nondecreasing single-valued ``gamma^{-1}``.

    The resolvent is found by bracketing on ``[min(0, z), max(0, z)]``;
    that is only valid for single-valued continuous ``gamma^{-1}``.
    """

    name = "custom"

    def __init__(self, inverse: Callable, gamma_minus=-math.inf, gamma_plus=math.inf, j_star=None):
        self._inv = inverse
        self.gamma_minus = float(gamma_minus)
        self.gamma_plus = float(gamma_plus)
        self._j = j_star
        if abs(float(np.asarray(inverse(np.array([0.0])))[0])) > 1e-12:
            raise PotentialError("custom graph must satisfy 0 in gamma(0)")

    def min_section(self, u):
        return np.asarray(self._inv(np.asarray(u, dtype=float)), dtype=float)

    def j_star(self, u):
        u = np.asarray(u, dtype=float)
        if self._j is not None:
            return np.where(self.in_domain(u), self._j(u), np.inf)
        from scipy.integrate import quad

        out = np.array([quad(lambda s: float(self.min_section(np.array([s]))[0]), 0.0, x)[0]
                        if self.gamma_minus <= x <= self.gamma_plus else np.inf for x in u.ravel()])
        return out.reshape(u.shape)

    def resolvent(self, t, z):
        z = np.asarray(z, dtype=float)
        lo = np.clip(np.minimum(z, 0.0), self.gamma_minus, self.gamma_plus)
        hi = np.clip(np.maximum(z, 0.0), self.gamma_minus, self.gamma_plus)
        return safeguarded_root(lambda x: x + t * self.min_section(x) - z, None, lo, hi)

    def resolvent_derivative(self, t, z, h=1e-7):
        return (self.resolvent(t, np.asarray(z) + h) - self.resolvent(t, np.asarray(z) - h)) / (2 * h)

    def potential_lower_bound(self, c):
        lo = self.gamma_minus if math.isfinite(self.gamma_minus) else -1e3
        hi = self.gamma_plus if math.isfinite(self.gamma_plus) else 1e3
        grid = np.linspace(lo, hi, 20001)
        return float(np.min(self.j_star(grid) - 0.5 * c * grid**2))


def power_law(p: float) -> PowerLaw:
    return PowerLaw(p)


def logarithmic() -> Logarithmic:
    return Logarithmic()


def obstacle() -> BoxIndicator:
    return BoxIndicator(-1.0, 1.0, name="obstacle")


def hele_shaw() -> BoxIndicator:
    return BoxIndicator(0.0, 1.0, name="hele_shaw")


def stefan() -> Stefan:
    return Stefan()


def custom(inverse, gamma_minus=-math.inf, gamma_plus=math.inf, j_star=None) -> CustomGraph:
    return CustomGraph(inverse, gamma_minus, gamma_plus, j_star)


_BUILTIN = {
    "obstacle": lambda **kw: obstacle(),
    "logarithmic": lambda **kw: logarithmic(),
    "log": lambda **kw: logarithmic(),
    "power": lambda p=3.0, **kw: power_law(p),
    "power_law": lambda p=3.0, **kw: power_law(p),
    "double_well": lambda **kw: power_law(3.0),
    "stefan": lambda **kw: stefan(),
    "hele_shaw": lambda **kw: hele_shaw(),
}


def graph_from_name(name: str, **params) -> MonotoneGraph:
    try:
        return _BUILTIN[name](**params)
    except KeyError:
        raise PotentialError(f"unknown potential {name!r}; choose from {sorted(_BUILTIN)}") from None


@dataclass(frozen=True)
class PotentialSpec:
    """``dF(r) = gamma^{-1}(r) - c r`` together with the interface weight ``delta``."""

    graph: MonotoneGraph
    c: float
    delta: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise PotentialError(f"c must be positive, got {self.c!r}")
        if not self.delta >= 0:
            raise PotentialError(f"delta must be nonnegative, got {self.delta!r}")


def potential_energy(spec: PotentialSpec, u, nu) -> float:
    """``sum_x nu_x (j_star(u_x) - c u_x**2 / 2)``; ``inf`` outside the domain."""
    u = np.asarray(u, dtype=float)
    j = spec.graph.j_star(u)
    if not np.all(np.isfinite(j)):
        return math.inf
    return float(np.dot(nu, j - 0.5 * spec.c * u * u))
