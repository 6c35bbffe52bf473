"""Command-line driver: ``rwch validate | run | analyze | sweep``.

Exit codes: 0 success, 1 a check or the solver failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, io
from .analysis import audit, detect_steady_state
from .cahn_hilliard import CHProblem, lipschitz_bound_G, solve
from .config import ConfigError, apply_overrides, build_problem, load_config, resolve_config
from .operators import OperatorError, spectral_gap
from .pme import ConvergenceError, MassWindowError, is_pure_phase, validate_mass_window
from .potentials import PotentialError
from .trajectory import Trajectory
from .walks import WalkError, embedding_constants

__all__ = ["main", "validate_config", "run_config", "analyze_dir", "load_trajectory"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
MANIFEST_VERSION = 1
FLAG_KEYS = ("potential", "c", "delta", "u0", "scheme", "tau", "T", "snapshot_stride", "output_dir",
             "walk_m1", "walk_m2")


def _check(name, passed, value=None, detail=""):
    return {"name": name, "passed": bool(passed), "value": value, "detail": detail}


def validate_config(cfg: dict) -> tuple[dict, CHProblem]:
    """Run every structural and hypothesis check; returns ``(manifest, problem)``.

    Raises :class:`ConfigError` when the problem cannot even be assembled.
    """
    try:
        prob = build_problem(cfg)
    except (WalkError, PotentialError, io.FormatError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    checks = []
    gaps = {}
    for name, w in (("m1", prob.m1), ("m2", prob.m2)):
        c = w.checks
        thr = w.thresholds
        checks.append(_check(f"{name}_stochastic", True, c.stochastic_residual, f"threshold {thr.stochastic!r}"))
        checks.append(_check(f"{name}_invariance", c.invariant, c.invariance_residual, f"threshold {thr.invariance!r}"))
        checks.append(_check(f"{name}_reversibility", c.reversible, c.reversibility_residual,
                             f"threshold {thr.reversibility!r} * max nu"))
        checks.append(_check(f"{name}_connected", c.connected, c.n_components, "number of components"))
        gap = None
        if c.reversible and c.connected and w.n > 1:
            try:
                gap = spectral_gap(w)
            except OperatorError:
                gap = None
        gaps[name] = gap
        checks.append(_check(f"{name}_gap_positive", gap is not None and gap > 0, gap, "spectral gap of -Laplacian"))
    if prob.m1.n != prob.m2.n:
        raise ConfigError("walk_m1 and walk_m2 have different node counts")
    lo, hi = embedding_constants(prob.m1, prob.m2)
    checks.append(_check("embedding", math.isfinite(hi) and lo > 0, [lo, hi],
                         "L1 norm equivalence constants (m, M) between nu1 and nu2"))
    if prob.scheme == "imex_split":
        checks.append(_check("shared_measure", prob.shared, None,
                             "convex splitting needs nu1 == nu2; use scheme picard otherwise"))
    dom = bool(np.all(prob.graph.in_domain(prob.u0))) or is_pure_phase(prob.m1.nu, prob.graph, prob.u0) is not None
    checks.append(_check("u0_domain", dom, None, "u0 within the domain of the potential"))
    window = validate_mass_window(prob.m1, prob.graph, prob.u0)
    mass = float(window.masses[0])
    checks.append(_check("mass_window", window.ok, mass,
                         f"strict bound nu(X)*gamma- < mass < nu(X)*gamma+ with bounds ({window.lower!r}, {window.upper!r})"))
    lip = lipschitz_bound_G(prob)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "rwch",
        "version": __version__,
        "config": cfg,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "gap_m1": gaps["m1"],
        "gap_m2": gaps["m2"],
        "lipschitz_G": lip.as_dict(),
        "mass_window": {"ok": window.ok, "mass": mass, "lower": window.lower, "upper": window.upper},
        "n_nodes": prob.m1.n,
        "n_steps": prob.n_steps,
        "wall_clock": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    return manifest, prob


def _failures(manifest) -> list[str]:
    return [f"{c['name']} failed (value {c['value']!r}; {c['detail']})" for c in manifest["checks"] if not c["passed"]]


def _snapshot_name(kind: str, step: int) -> str:
    return f"snapshots/{kind}_{step:07d}.txt"


class _Writer:
    """Streams diagnostics and snapshot files as the solver advances."""

    def __init__(self, out: Path, labels):
        self.out = out
        self.labels = labels
        self.fh = open(out / "diagnostics.jsonl", "w", encoding="utf-8")
        self.written = 0

    def __call__(self, traj: Trajectory):
        while self.written < len(traj.records):
            rec = dict(traj.records[self.written])
            step = rec["step"]
            rec["file"] = None
            if traj.steps and traj.steps[-1] == step:
                i = len(traj.steps) - 1
                rec["file"] = _snapshot_name("u", step)
                io.write_field(self.out / rec["file"], traj.u[i], self.labels)
                for kind, arr in (("v", traj.v[i]), ("mu", traj.mu[i])):
                    if arr is not None:
                        io.write_field(self.out / _snapshot_name(kind, step), arr, self.labels)
            ordered = {k: rec.pop(k) for k in ("step", "t", "mass", "energy", "residual", "file")}
            ordered.update(rec)
            self.fh.write(io.json_line(ordered) + "\n")
            self.written += 1

    def close(self):
        self.fh.close()


def run_config(cfg: dict, quiet: bool = False) -> int:
    manifest, prob = validate_config(cfg)
    out = Path(cfg["output_dir"])
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    io.dump_json(out / "manifest.json", manifest)
    status = {"complete": False, "last_step": None, "n_steps": prob.n_steps, "error": None}
    if not manifest["passed"]:
        status["error"] = "validation failed: " + "; ".join(_failures(manifest))
        io.dump_json(out / "status.json", status)
        _err(status["error"])
        return EXIT_FAIL
    writer = _Writer(out, prob.m1.space.labels)
    code = EXIT_OK
    try:
        traj = solve(prob, on_step=writer)
        status["complete"] = traj.complete
        status["last_step"] = traj.n_steps
    except (ConvergenceError, MassWindowError) as exc:
        partial = getattr(exc, "trajectory", None)
        status["last_step"] = partial.n_steps if partial is not None else None
        status["error"] = f"{type(exc).__name__}: {exc} (residual {getattr(exc, 'residual', math.nan)!r})"
        _err(status["error"])
        code = EXIT_FAIL
    finally:
        writer.close()
        io.dump_json(out / "status.json", status)
    if code == EXIT_OK and not quiet:
        print(f"run complete: {status['last_step']} steps written to {out}")
    return code


def load_trajectory(run_dir) -> tuple[Trajectory, CHProblem, dict]:
    run_dir = Path(run_dir)
    status_path = run_dir / "status.json"
    if not status_path.is_file():
        raise ConfigError(f"{run_dir} has no status.json; not a run directory")
    status = json.loads(status_path.read_text())
    if not status.get("complete"):
        raise ConfigError(f"trajectory in {run_dir} is incomplete; last valid step {status.get('last_step')!r}"
                          + (f" ({status['error']})" if status.get("error") else ""))
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = manifest["config"]
    prob = build_problem(cfg)
    traj = Trajectory(tau=cfg["tau"], scheme=cfg["scheme"], stride=cfg["snapshot_stride"], problem=prob)
    labels = prob.m1.space.labels
    with open(run_dir / "diagnostics.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            for k, v in rec.items():
                if isinstance(v, str) and v in ("inf", "-inf", "nan"):
                    rec[k] = float(v)
            f = rec.pop("file")
            traj.records.append(rec)
            if f is not None:
                u = io.read_field(run_dir / f, prob.m1.n, labels)
                extra = {}
                for kind in ("v", "mu"):
                    p = run_dir / _snapshot_name(kind, rec["step"])
                    extra[kind] = io.read_field(p, prob.m1.n, labels) if p.is_file() else None
                traj.add_snapshot(rec["step"], rec["t"], u, **extra)
    traj.complete = True
    return traj, prob, manifest


def analyze_dir(run_dir) -> tuple[int, dict, dict]:
    traj, prob, manifest = load_trajectory(run_dir)
    tol = manifest["config"]["tolerances"]
    rep = audit(traj, prob, mass_tol=tol["mass"], energy_tol=tol["energy"])
    asym = detect_steady_state(traj, window=int(tol["steady_window"]), tol=tol["steady_tol"], prob=prob,
                               eq_tol=tol["equilibrium"])
    a, s = rep.to_dict(), asym.to_dict()
    io.dump_json(Path(run_dir) / "audit.json", a)
    io.dump_json(Path(run_dir) / "asymptotics.json", s)
    return (EXIT_OK if rep.passed else EXIT_FAIL), a, s


def _err(msg):
    print(f"rwch: {msg}", file=sys.stderr)


def _config_from_args(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    overrides = list(args.set or [])
    for key in FLAG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    cfg = apply_overrides(cfg, overrides)
    if isinstance(cfg.get("output_dir"), str):
        cfg["output_dir"] = str(Path(cfg["output_dir"]).resolve())
    return resolve_config(cfg)


def _sweep_job(cfg):
    try:
        return run_config(cfg, quiet=True)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


def _parse_param(spec: str):
    if "=" not in spec:
        raise ConfigError(f"--param {spec!r} is not of the form key=v1,v2,...")
    key, text = spec.split("=", 1)
    text = text.strip()
    if text.startswith("["):
        values = json.loads(text)
    else:
        values = [t.strip() for t in text.split(",") if t.strip()]
    return key.strip(), [v if isinstance(v, str) else json.dumps(v) for v in values]


def _cmd_sweep(args, cfg) -> int:
    params = [_parse_param(p) for p in args.param or []]
    if not params:
        raise ConfigError("sweep needs at least one --param")
    base = Path(cfg["output_dir"])
    jobs, meta = [], []
    for i, combo in enumerate(itertools.product(*[vals for _, vals in params])):
        overrides = [f"{k}={v}" for (k, _), v in zip(params, combo)]
        sub = apply_overrides(cfg, overrides)
        sub["output_dir"] = str(base / f"run_{i:03d}")
        jobs.append(resolve_config(sub))
        meta.append({"index": i, "overrides": overrides, "output_dir": sub["output_dir"]})
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_sweep_job, jobs))
    else:
        codes = [_sweep_job(j) for j in jobs]
    for m, c in zip(meta, codes):
        m["exit_code"] = c
    base.mkdir(parents=True, exist_ok=True)
    io.dump_json(base / "sweep.json", {"runs": meta})
    print(f"sweep: {sum(c == 0 for c in codes)}/{len(codes)} runs succeeded")
    return EXIT_OK if all(c == 0 for c in codes) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwch", description="Nonlocal Cahn-Hilliard simulator on random walk spaces")
    parser.add_argument("--version", action="version", version=f"rwch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="JSON run configuration (a run manifest also works)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key; dotted keys reach nested objects; values are JSON")
        for key in FLAG_KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE")

    p = sub.add_parser("validate", help="check a configuration without time stepping")
    config_args(p)
    p.add_argument("--manifest", help="also write the manifest to this file")
    p = sub.add_parser("run", help="validate and integrate")
    config_args(p)
    p = sub.add_parser("analyze", help="audit a finished run directory")
    p.add_argument("run_dir")
    p = sub.add_parser("sweep", help="run a parameter grid")
    config_args(p)
    p.add_argument("--param", action="append", metavar="KEY=V1,V2", help="swept key with its values")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            code, a, s = analyze_dir(args.run_dir)
            for c in a["checks"]:
                print(f"{c['name']}: {c['status']}" + (f" (worst margin {c['worst_margin']!r} at step {c['worst_step']})"
                                                       if c["worst_margin"] is not None else ""))
            print(f"steady: {s['steady']}; predicts mean convergence: {s['predicts_mean_convergence']}")
            return code
        cfg = _config_from_args(args)
        if args.command == "validate":
            manifest, _ = validate_config(cfg)
            if args.manifest:
                io.dump_json(args.manifest, manifest)
            print(io.json_line({k: manifest[k] for k in ("passed", "gap_m1", "gap_m2", "lipschitz_G", "mass_window")}))
            for f in _failures(manifest):
                _err(f)
            return EXIT_OK if manifest["passed"] else EXIT_FAIL
        if args.command == "run":
            return run_config(cfg)
        return _cmd_sweep(args, cfg)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
