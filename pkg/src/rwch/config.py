"""Run configuration: JSON files, ``key=value`` overrides and builders.

A configuration is a JSON object with the keys below. Unknown keys are
rejected so typos do not silently fall back to defaults.

``walk_m1``, ``walk_m2``
    Walk descriptions (see :func:`build_walk`). ``walk_m2`` defaults to
    ``walk_m1``.
``potential``
    A name (``obstacle``, ``logarithmic``, ``power``, ``double_well``,
    ``stefan``, ``hele_shaw``) or ``{"name": ..., "p": ...}``.
``c``, ``delta``, ``u0``, ``scheme``, ``tau``, ``T``, ``snapshot_stride``
    Model and discretization parameters.
``tolerances``
    Optional overrides of :data:`DEFAULT_TOLERANCES`.
``output_dir``
    Where ``run`` writes its files.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import numpy as np

from . import io
from .cahn_hilliard import SCHEMES, CHProblem
from .potentials import PotentialSpec, graph_from_name
from .walks import RandomWalk, from_grid_kernel, from_markov_kernel, from_point_cloud, from_weighted_graph

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "DEFAULT_TOLERANCES",
    "WALK_PRESETS",
    "U0_PRESETS",
    "load_config",
    "apply_overrides",
    "resolve_config",
    "build_walk",
    "build_u0",
    "build_potential",
    "build_problem",
]


class ConfigError(ValueError):
    pass


DEFAULT_TOLERANCES = {
    "resolvent": 1e-10,
    "picard": 1e-9,
    "picard_max_sweeps": 100,
    "window_factor": 0.9,
    "mass": 1e-10,
    "energy": 1e-9,
    "equilibrium": 1e-8,
    "steady_window": 50,
    "steady_tol": None,
}

DEFAULTS = {
    "walk_m1": None,
    "walk_m2": None,
    "potential": "obstacle",
    "c": 1.0,
    "delta": 1.0,
    "u0": None,
    "scheme": "imex_split",
    "tau": 1e-2,
    "T": 1.0,
    "snapshot_stride": 1,
    "tolerances": {},
    "output_dir": "rwch_out",
}


def _preset_path(n):
    return [(i, i + 1, 1.0) for i in range(n - 1)]


def _preset_cycle(n):
    return [(i, (i + 1) % n, 1.0) for i in range(n)]


def _preset_complete(n):
    return [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)]


WALK_PRESETS = {
    "path": _preset_path,
    "cycle": _preset_cycle,
    "complete": _preset_complete,
    "K2": lambda n=2: _preset_complete(2),
}

U0_PRESETS = ("two-phase split", "random uniform", "constant")


def load_config(path) -> dict:
    """Read a JSON config; a run manifest is accepted and its stored config reused."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "config" in data and isinstance(data["config"], dict) and "manifest_version" in data:
        data = data["config"]
    return _absolutize(data, path.parent.resolve())


def _absolutize(cfg: dict, base: Path) -> dict:
    cfg = copy.deepcopy(cfg)

    def fix(spec):
        if isinstance(spec, dict):
            for key in ("path", "file", "points_file"):
                if isinstance(spec.get(key), str):
                    spec[key] = str((base / spec[key]).resolve())
        return spec

    for key in ("walk_m1", "walk_m2"):
        if isinstance(cfg.get(key), str) and not cfg[key].startswith("preset:"):
            cfg[key] = {"type": "edges", "path": cfg[key]}
        cfg[key] = fix(cfg.get(key))
    cfg["u0"] = fix(cfg.get("u0"))
    if isinstance(cfg.get("output_dir"), str):
        cfg["output_dir"] = str((base / cfg["output_dir"]).resolve())
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key=value`` strings; dotted keys reach into nested objects."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(text.strip())
    return cfg


def resolve_config(cfg: dict) -> dict:
    """Fill defaults and check ranges; returns a fully explicit config."""
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS)
    out.update(copy.deepcopy(cfg))
    tol = dict(DEFAULT_TOLERANCES)
    extra = set(out.get("tolerances") or {}) - set(DEFAULT_TOLERANCES)
    if extra:
        raise ConfigError(f"unknown tolerance keys: {sorted(extra)}")
    tol.update(out.get("tolerances") or {})
    out["tolerances"] = tol
    if out["walk_m1"] is None:
        raise ConfigError("walk_m1 is required")
    if out["walk_m2"] is None:
        out["walk_m2"] = copy.deepcopy(out["walk_m1"])
    if out["u0"] is None:
        raise ConfigError("u0 is required")
    for key in ("tau", "T", "c", "delta"):
        v = out[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{key} must be a finite number, got {v!r}")
        out[key] = float(v)
    if out["tau"] <= 0:
        raise ConfigError(f"tau must be positive, got {out['tau']!r}")
    if out["T"] < 0:
        raise ConfigError(f"T must be nonnegative, got {out['T']!r}")
    if out["c"] <= 0:
        raise ConfigError(f"c must be positive, got {out['c']!r}")
    if out["delta"] < 0:
        raise ConfigError(f"delta must be nonnegative, got {out['delta']!r}")
    if out["scheme"] not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {out['scheme']!r}")
    if not isinstance(out["snapshot_stride"], int) or out["snapshot_stride"] < 1:
        raise ConfigError("snapshot_stride must be a positive integer")
    for key in ("resolvent", "picard", "mass", "energy", "equilibrium"):
        if not tol[key] > 0:
            raise ConfigError(f"tolerance {key} must be positive")
    if not 0 < tol["window_factor"] < 1:
        raise ConfigError("tolerance window_factor must lie in (0, 1)")
    return out


def _radial(spec: dict):
    kind = spec.get("kernel", "indicator")
    r = float(spec.get("radius", 1.0))
    if kind == "indicator":
        return lambda d: (np.asarray(d) <= r * (1 + 1e-12)).astype(float)
    if kind == "gaussian":
        s = float(spec.get("width", r))
        return lambda d: np.exp(-0.5 * (np.asarray(d) / s) ** 2)
    raise ConfigError(f"unknown radial kernel {kind!r}")


def _need_file(spec, key="path"):
    p = spec.get(key)
    if not isinstance(p, str) or not Path(p).is_file():
        raise ConfigError(f"referenced file {p!r} does not exist")
    return p


def build_walk(spec) -> RandomWalk:
    """Build a walk from its config description.

    ``{"type": "preset", "name": "path" | "cycle" | "complete" | "K2", "n": N}``,
    ``{"type": "edges", "path": file}`` or ``{"type": "edges", "edges": [[x, y, w], ...]}``,
    ``{"type": "kernel", "path": file, "measure": file?}``,
    ``{"type": "grid", "shape": [...], "h": h, "kernel": "indicator" | "gaussian", "radius": r}``,
    ``{"type": "point_cloud", "path": file | "points": [...], "kernel": ..., "radius": r}``.
    The string ``"preset:NAME:N"`` is shorthand for a preset.
    """
    if isinstance(spec, str) and spec.startswith("preset:"):
        parts = spec.split(":")
        spec = {"type": "preset", "name": parts[1]}
        if len(parts) > 2:
            spec["n"] = int(parts[2])
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"walk description must be an object with a 'type', got {spec!r}")
    kind = spec["type"]
    if kind == "preset":
        name = spec.get("name")
        if name not in WALK_PRESETS:
            raise ConfigError(f"unknown walk preset {name!r}; choose from {sorted(WALK_PRESETS)}")
        n = int(spec.get("n", 2))
        if n < 2:
            raise ConfigError("walk presets need at least 2 nodes")
        return from_weighted_graph(WALK_PRESETS[name](n), n=2 if name == "K2" else n)
    if kind == "edges":
        if "edges" in spec:
            return from_weighted_graph([tuple(e) for e in spec["edges"]], n=spec.get("n"))
        edges, labels = io.read_edge_list(_need_file(spec))
        return from_weighted_graph(edges, labels=labels)
    if kind == "kernel":
        K = io.read_kernel(_need_file(spec))
        pi = io.read_field(_need_file(spec, "measure"), n=K.shape[0]) if spec.get("measure") else None
        return from_markov_kernel(K, pi)
    if kind == "grid":
        shape = spec.get("shape")
        if not shape:
            raise ConfigError("grid walk needs a shape")
        h = float(spec.get("h", 1.0))
        r = float(spec.get("radius", h))
        return from_grid_kernel(shape, h, _radial(spec), float(spec.get("truncation", r)))
    if kind == "point_cloud":
        pts = np.asarray(spec["points"], dtype=float) if "points" in spec else io.read_points(_need_file(spec))
        return from_point_cloud(pts, _radial(spec))
    raise ConfigError(f"unknown walk type {kind!r}")


def build_potential(spec):
    if isinstance(spec, str):
        return graph_from_name(spec)
    if isinstance(spec, dict) and "name" in spec:
        params = {k: v for k, v in spec.items() if k != "name"}
        return graph_from_name(spec["name"], **params)
    raise ConfigError(f"potential must be a name or an object with 'name', got {spec!r}")


def build_u0(spec, walk: RandomWalk) -> np.ndarray:
    """Initial datum from a list, a number, a file or a named preset.

    Presets: ``{"preset": "two-phase split", "values": [a, b], "fraction": f}``
    puts ``a`` on the first ``round(f n)`` nodes and ``b`` on the rest;
    ``{"preset": "random uniform", "low": a, "high": b, "seed": s}`` draws
    i.i.d. uniform values (the seed is mandatory);
    ``{"preset": "constant", "value": a}``.
    """
    n = walk.n
    if isinstance(spec, bool):
        raise ConfigError("u0 cannot be a boolean")
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    if isinstance(spec, list):
        u = np.asarray(spec, dtype=float)
        if u.shape != (n,):
            raise ConfigError(f"u0 has {u.size} values but the walk has {n} nodes")
        return u
    if not isinstance(spec, dict):
        raise ConfigError(f"cannot interpret u0 description {spec!r}")
    if "file" in spec:
        return io.read_field(_need_file(spec, "file"), n=n, labels=walk.space.labels)
    preset = spec.get("preset")
    if preset == "two-phase split":
        a, b = spec.get("values", [1.0, -1.0])
        k = int(round(float(spec.get("fraction", 0.5)) * n))
        u = np.full(n, float(b))
        u[:k] = float(a)
        return u
    if preset == "random uniform":
        if "seed" not in spec:
            raise ConfigError("the random uniform preset needs an explicit seed")
        lo, hi = float(spec.get("low", -1.0)), float(spec.get("high", 1.0))
        if not lo <= hi:
            raise ConfigError("random uniform preset needs low <= high")
        return np.random.default_rng(int(spec["seed"])).uniform(lo, hi, n)
    if preset == "constant":
        return np.full(n, float(spec.get("value", 0.0)))
    raise ConfigError(f"unknown u0 preset {preset!r}; choose from {U0_PRESETS}")


def build_problem(cfg: dict) -> CHProblem:
    """Assemble a :class:`CHProblem` from a resolved config (walks are rebuilt)."""
    m1 = build_walk(cfg["walk_m1"])
    m2 = m1 if cfg["walk_m2"] == cfg["walk_m1"] else build_walk(cfg["walk_m2"])
    graph = build_potential(cfg["potential"])
    tol = cfg["tolerances"]
    return CHProblem(
        m1=m1,
        m2=m2,
        potential=PotentialSpec(graph, cfg["c"], cfg["delta"]),
        u0=build_u0(cfg["u0"], m1),
        scheme=cfg["scheme"],
        tau=cfg["tau"],
        T=cfg["T"],
        snapshot_stride=cfg["snapshot_stride"],
        tol=tol["resolvent"],
        picard_tol=tol["picard"],
        picard_max_sweeps=int(tol["picard_max_sweeps"]),
        window_factor=tol["window_factor"],
    )
