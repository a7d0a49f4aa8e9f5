"""Command-line entry point: ``drift-spectra <command> --config PATH [--out DIR] [--quiet]``.

One JSON config describes one run. Exit codes are a stable contract:
0 success, 1 usage or config error, 2 invalid mesh, 3 degenerate Morse
structure, 4 solver failure, 5 inconclusive (or failed) verdict.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acceptance, exprlang, spectral
from .experiment import DEFAULT_RADII, SolverConfig, concentration, emit_report, sweep
from .mesh import MeshError, TriMesh, icosphere, load_off, sample, uv_torus, validate
from .morse import predicted_limit

EXIT_OK, EXIT_USAGE, EXIT_MESH, EXIT_DEGENERATE, EXIT_SOLVER, EXIT_INCONCLUSIVE = range(6)

TOP_KEYS = {"manifold", "f", "c", "s_grid", "s", "solver", "concentration_radii",
            "output", "seed", "verdict_threshold"}
MANIFOLD_PARAMS = {
    "icosphere": {"subdivisions": int, "radius": float},
    "uv_torus": {"R": float, "r": float, "nu": int, "nv": int},
}
SOLVER_KEYS = {"method", "tol", "max_iter"}
OUTPUT_KEYS = {"dir", "formats"}
GRID_KEYS = {"start", "stop", "count", "spacing"}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    manifold: dict
    f: str | None
    c: str | None
    s_grid: list | None
    s: float | None
    solver: SolverConfig
    radii: list
    out_dir: str
    formats: list
    seed: int
    threshold: float | None
    base_dir: str = "."


def _number(x, what, positive=False, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{what} must be a number, got {x!r}")
    if integer and (not isinstance(x, int) and not float(x).is_integer()):
        raise ConfigError(f"{what} must be an integer, got {x!r}")
    if not math.isfinite(x):
        raise ConfigError(f"{what} must be finite")
    if positive and not x > 0:
        raise ConfigError(f"{what} must be positive, got {x!r}")
    return int(x) if integer else float(x)


def _unknown(d: dict, allowed: set, where: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _s_grid(spec) -> list:
    if isinstance(spec, list):
        if not spec:
            raise ConfigError("s_grid is empty")
        grid = [_number(x, "s_grid entry") for x in spec]
    elif isinstance(spec, dict):
        _unknown(spec, GRID_KEYS, "s_grid")
        missing = {"start", "stop", "count"} - set(spec)
        if missing:
            raise ConfigError(f"s_grid is missing {', '.join(sorted(missing))}")
        start = _number(spec["start"], "s_grid.start")
        stop = _number(spec["stop"], "s_grid.stop")
        count = _number(spec["count"], "s_grid.count", positive=True, integer=True)
        spacing = spec.get("spacing", "linear")
        if spacing == "linear":
            grid = np.linspace(start, stop, count).tolist()
        elif spacing == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError("log spacing needs start > 0 and stop > 0")
            grid = np.geomspace(start, stop, count).tolist()
        else:
            raise ConfigError(f"s_grid.spacing must be 'linear' or 'log', got {spacing!r}")
    else:
        raise ConfigError("s_grid must be a list or an object")
    if any(s < 0 for s in grid):
        raise ConfigError("s values must be non-negative")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("s_grid must be strictly increasing")
    return grid


def parse_config(raw, base_dir: str = ".") -> Config:
    """Validate a decoded JSON config. Raises ConfigError on any problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _unknown(raw, TOP_KEYS, "config")
    man = raw.get("manifold")
    if not isinstance(man, dict) or "type" not in man:
        raise ConfigError("manifold must be an object with a 'type'")
    kind = man["type"]
    if kind in MANIFOLD_PARAMS:
        _unknown(man, {"type", "params"}, "manifold")
        params = man.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("manifold.params must be an object")
        _unknown(params, set(MANIFOLD_PARAMS[kind]), f"manifold.params ({kind})")
        clean = {k: _number(v, f"manifold.params.{k}", positive=True,
                            integer=MANIFOLD_PARAMS[kind][k] is int)
                 for k, v in params.items()}
        if kind == "uv_torus":
            missing = set(MANIFOLD_PARAMS[kind]) - set(clean)
            if missing:
                raise ConfigError(f"uv_torus needs {', '.join(sorted(missing))}")
        manifold = {"type": kind, "params": clean}
    elif kind == "off":
        _unknown(man, {"type", "path"}, "manifold")
        if not isinstance(man.get("path"), str):
            raise ConfigError("manifold.path must be a string for type 'off'")
        manifold = {"type": "off", "path": man["path"]}
    else:
        raise ConfigError(f"manifold.type must be icosphere, uv_torus or off, got {kind!r}")

    exprs = {}
    for key in ("f", "c"):
        if key in raw:
            if not isinstance(raw[key], str):
                raise ConfigError(f"{key} must be an expression string")
            try:
                exprlang.parse(raw[key])
            except exprlang.ExprSyntaxError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            exprs[key] = raw[key]

    solver = SolverConfig()
    if "solver" in raw:
        sv = raw["solver"]
        if not isinstance(sv, dict):
            raise ConfigError("solver must be an object")
        _unknown(sv, SOLVER_KEYS, "solver")
        if "method" in sv:
            if sv["method"] not in spectral.METHODS:
                raise ConfigError(f"solver.method must be one of {list(spectral.METHODS)}")
            solver.method = sv["method"]
        if "tol" in sv:
            solver.tol = _number(sv["tol"], "solver.tol", positive=True)
            if solver.tol > 1e-2:
                raise ConfigError("solver.tol must be at most 1e-2")
        if "max_iter" in sv:
            solver.max_iter = _number(sv["max_iter"], "solver.max_iter", positive=True,
                                      integer=True)
    seed = raw.get("seed", 42)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    solver.seed = seed

    radii = raw.get("concentration_radii", list(DEFAULT_RADII))
    if not isinstance(radii, list) or not radii:
        raise ConfigError("concentration_radii must be a non-empty list")
    radii = [_number(r, "concentration radius", positive=True) for r in radii]

    out = raw.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("output must be an object")
    _unknown(out, OUTPUT_KEYS, "output")
    formats = out.get("formats", ["csv", "json", "svg"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json", "svg"}:
        raise ConfigError("output.formats must be a list drawn from csv, json, svg")
    out_dir = out.get("dir", "drift_out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir must be a string")

    s_grid = _s_grid(raw["s_grid"]) if "s_grid" in raw else None
    s = _number(raw["s"], "s") if "s" in raw else None
    if s is not None and s < 0:
        raise ConfigError("s must be non-negative")
    thr = raw.get("verdict_threshold")
    if thr is not None:
        thr = _number(thr, "verdict_threshold", positive=True)
    return Config(manifold, exprs.get("f"), exprs.get("c"), s_grid, s, solver, radii,
                  out_dir, list(formats), seed, thr, base_dir)


def build_mesh(cfg: Config) -> TriMesh:
    m = cfg.manifold
    if m["type"] == "icosphere":
        p = m["params"]
        return icosphere(p.get("subdivisions", 3), p.get("radius", 1.0))
    if m["type"] == "uv_torus":
        p = m["params"]
        return uv_torus(p["R"], p["r"], p["nu"], p["nv"])
    path = m["path"]
    if not os.path.isabs(path):
        path = os.path.join(cfg.base_dir, path)
    if not os.path.exists(path):
        raise ConfigError(f"OFF file not found: {path}")
    return load_off(Path(path))


# ---------------------------------------------------------------------------
# commands

class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, text: str = ""):
        if not self.quiet:
            print(text)


def _require(cfg: Config, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"this command needs config key(s): {', '.join(missing)}")


def _fields(cfg: Config, mesh: TriMesh):
    _require(cfg, "f", "c")
    return sample(exprlang.parse(cfg.f), mesh), sample(exprlang.parse(cfg.c), mesh)


def _write_json(out_dir: str | None, name: str, payload: dict):
    if out_dir is None:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write to {out_dir}: {exc.strerror}") from None


def cmd_mesh_info(cfg: Config, out: _Out, out_dir) -> int:
    mesh = build_mesh(cfg)
    rep = validate(mesh)
    out(f"closed={str(rep.closed).lower()} orientable={str(rep.orientable).lower()} "
        f"chi={rep.euler_characteristic}")
    out(json.dumps(rep.to_dict(), indent=2))
    _write_json(out_dir, "mesh_info.json", rep.to_dict())
    if not rep.ok:
        for p in rep.problems:
            print(f"invalid mesh: {p}", file=sys.stderr)
        return EXIT_MESH
    return EXIT_OK


def _checked_mesh(cfg: Config) -> TriMesh:
    mesh = build_mesh(cfg)
    rep = validate(mesh)
    if not rep.ok:
        raise MeshError("; ".join(rep.problems))
    return mesh


def cmd_morse(cfg: Config, out: _Out, out_dir) -> int:
    mesh = _checked_mesh(cfg)
    f, c = _fields(cfg, mesh)
    rep = predicted_limit(f, c, mesh)
    out(rep.to_json(indent=2))
    _write_json(out_dir, "morse.json", rep.to_dict())
    return EXIT_DEGENERATE if rep.degenerate else EXIT_OK


def cmd_solve(cfg: Config, out: _Out, out_dir) -> int:
    mesh = _checked_mesh(cfg)
    f, c = _fields(cfg, mesh)
    if cfg.s is not None:
        s = cfg.s
    elif cfg.s_grid:
        s = max(cfg.s_grid)
    else:
        raise ConfigError("solve needs 's' or 's_grid' in the config")
    op = spectral.assemble(mesh, f, c, s)
    sv = cfg.solver
    try:
        res = spectral.smallest_eigenpair(op, tol=sv.tol, max_iter=sv.max_iter,
                                          method=sv.method, seed=sv.seed)
    except spectral.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    morse = predicted_limit(f, c, mesh)
    obtuse = validate(mesh).obtuse_triangle_count > 0
    pos = spectral.positivity_check(res, obtuse)
    conc = concentration(op, res, morse, cfg.radii)
    payload = res.to_dict()
    payload.update({
        "s": s, "c_star": op.c_star, "c_upper": op.c_upper,
        "bounds_ok": bool(op.c_star - sv.tol <= res.lam <= op.c_upper + sv.tol),
        "energy": spectral.energy(op, res.vector),
        "positivity": pos.status, "positivity_worst_violation": pos.worst_violation,
        "mass_on_maxima": dict(zip(map(str, conc.radii), conc.mass_on_maxima)),
        "mass_M1": conc.mass_on_M1, "mass_M2": conc.mass_on_M2,
        "predicted_limit": morse.predicted_limit,
    })
    out(json.dumps(payload, indent=2))
    _write_json(out_dir, "solve.json", payload)
    if not res.converged:
        print(f"solver failure: {res.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sweep(cfg: Config, out: _Out, out_dir) -> int:
    _require(cfg, "s_grid")
    mesh = _checked_mesh(cfg)
    f, c = _fields(cfg, mesh)
    rep = sweep(mesh, f, c, cfg.s_grid, cfg.solver, cfg.radii, cfg.threshold)
    rep.mesh = mesh.name
    paths = emit_report(rep, out_dir or cfg.out_dir, cfg.formats)
    for r in rep.rows:
        out(f"s={r.s:g} lambda={r.lam:.10g} residual={r.residual:.2e} "
            f"bounds_ok={r.bounds_ok} energy_ok={r.energy_ok}")
    extra = "" if rep.extrapolated is None else f" extrapolated={rep.extrapolated:.6g}"
    out(f"predicted L*={rep.predicted_limit:.6g}{extra} verdict={rep.verdict}")
    for p in paths:
        out(f"wrote {p}")
    if rep.verdict == "pass":
        return EXIT_OK
    if rep.verdict == "degenerate":
        return EXIT_DEGENERATE
    return EXIT_INCONCLUSIVE


def cmd_verify(cfg: Config | None, out: _Out, out_dir) -> int:
    if out_dir is not None:
        # fail before the long run if the results cannot be saved
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {out_dir}: {exc.strerror}") from None
        if not os.access(out_dir, os.W_OK):
            raise OSError(f"output directory is not writable: {out_dir}")
    results = acceptance.run_acceptance(progress=lambda r: out(acceptance.format_result(r)))
    passed = sum(r.passed for r in results)
    out(f"{passed}/{len(results)} criteria passed")
    _write_json(out_dir, "acceptance.json", {"results": [
        {"criterion": r.number, "title": r.title, "passed": r.passed,
         "detail": r.detail, "seconds": r.seconds} for r in results]})
    return EXIT_OK if passed == len(results) else EXIT_INCONCLUSIVE


COMMANDS = {"mesh-info": cmd_mesh_info, "morse": cmd_morse, "solve": cmd_solve,
            "sweep": cmd_sweep, "verify": cmd_verify}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drift-spectra",
                                description="Principal eigenvalue of drifted Laplacians "
                                            "on closed surfaces.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="JSON config (optional for verify)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--quiet", action="store_true", help="suppress stdout")
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    out = _Out(args.quiet)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = None
        if args.config is not None:
            try:
                with open(args.config) as fh:
                    raw = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {args.config}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
            cfg = parse_config(raw, os.path.dirname(os.path.abspath(args.config)))
        elif args.command != "verify":
            raise ConfigError("--config is required")
        return COMMANDS[args.command](cfg, out, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MeshError as exc:
        print(f"invalid mesh: {exc}", file=sys.stderr)
        return EXIT_MESH
    except (exprlang.ExprEvalError, exprlang.ExprSyntaxError) as exc:
        print(f"expression error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
