"""s-sweeps and the diagnostics attached to each solve.

For every drift strength the sweep records the principal eigenvalue, checks
``c_* <= lambda <= c^*`` and the energy bound ``v^T A v <= c^* - c_*``, and
measures where the probability density ``rho_i = M_ii v_i^2`` sits: near the
local maxima of f, on regular vertices, or near the other critical points.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .mesh import ScalarField, TriMesh, geodesic_distance
from .morse import MAXIMUM, MorseReport, predicted_limit
from .oracle import richardson_extrapolate

__all__ = [
    "ConcentrationReport", "SweepRow", "SweepReport", "TestFunctionBound", "SolverConfig",
    "concentration", "sweep", "test_function_bound", "emit_report", "render_svg",
    "DEFAULT_RADII", "CSV_COLUMNS",
]

DEFAULT_RADII = (0.2, 0.4)
CSV_COLUMNS = ["s", "lambda", "residual", "iterations", "bounds_ok", "energy_ok",
               "mass_max_r1", "mass_max_r2", "mass_M1", "mass_M2"]


@dataclass
class SolverConfig:
    method: str = "lobpcg"
    tol: float = spectral.DEFAULT_TOL
    max_iter: int = spectral.DEFAULT_MAX_ITER
    seed: int = 42
    warm_start: bool = True


@dataclass
class ConcentrationReport:
    rho: np.ndarray
    radii: list
    mass_on_maxima: list          # aligned with radii
    mass_on_M1: float
    mass_on_M2: float
    exclusion_radius: float
    saturated: bool = False

    def mass_at(self, r: float) -> float:
        return self.mass_on_maxima[self.radii.index(r)]


def concentration(op: spectral.WeightedOperator, res, morse: MorseReport,
                  radii=DEFAULT_RADII, exclusion_radius: float | None = None,
                  mesh: TriMesh | None = None) -> ConcentrationReport:
    """Split the eigenfunction's probability mass by distance to critical points.

    ``mass_on_M1`` is the mass on regular vertices farther than
    ``exclusion_radius`` from every critical point; ``mass_on_M2`` the mass
    within ``exclusion_radius`` of critical points that are not local maxima.
    The exclusion radius defaults to the largest concentration radius.
    """
    mesh = mesh or op.mesh
    radii = [float(r) for r in radii]
    if not radii or any(r < 0 for r in radii):
        raise ValueError("radii must be a non-empty list of non-negative numbers")
    v = np.asarray(res.vector, dtype=float)
    w = op.mass * v * v
    rho = w / w.sum()
    r_ex = max(radii) if exclusion_radius is None else float(exclusion_radius)

    d_max = geodesic_distance(mesh, morse.maximum_set)
    on_max = [float(rho[d_max <= r].sum()) for r in radii]
    crit = [cp.vertex for cp in morse.criticals]
    other = [cp.vertex for cp in morse.criticals if cp.kind != MAXIMUM]
    d_crit = geodesic_distance(mesh, crit)
    regular = np.ones(mesh.n_vertices, dtype=bool)
    regular[crit] = False
    m1 = float(rho[regular & (d_crit > r_ex)].sum())
    m2 = float(rho[geodesic_distance(mesh, other) <= r_ex].sum()) if other else 0.0
    saturated = max(radii + [r_ex]) >= mesh.diameter_bound
    return ConcentrationReport(rho, radii, on_max, m1, m2, r_ex, bool(saturated))


@dataclass
class TestFunctionBound:
    center: int
    R: float
    s: float
    u: np.ndarray
    value: float
    I_term: float
    J_term: float
    ball_size: int

    __test__ = False  # not a pytest class


def test_function_bound(mesh: TriMesh, f, c, s: float, center: int, R: float,
                        op: spectral.WeightedOperator | None = None) -> TestFunctionBound:
    """Quotient of the plateau-and-ramp function around a local maximum.

    ``u = 1`` within graph distance ``2R`` of ``center``, ``(3R - d) / R`` on
    the annulus out to ``3R`` and 0 beyond. The quotient splits into the
    gradient part ``I`` and the reaction part ``J``.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    fv = np.asarray(getattr(f, "values", f), dtype=float)
    ring = mesh.one_rings[center]
    if not np.all(fv[ring] < fv[center]):
        raise ValueError(f"vertex {center} is not a strict local maximum of f")
    d = geodesic_distance(mesh, center, limit=3.0 * R)
    inside = d <= 3.0 * R
    if np.count_nonzero(inside) < 10:
        raise ValueError(f"ball of radius 3R={3 * R:g} holds fewer than 10 vertices; "
                         "refine the mesh or enlarge R")
    u = np.zeros(mesh.n_vertices)
    u[inside] = np.clip((3.0 * R - d[inside]) / R, 0.0, 1.0)
    op = op or spectral.assemble(mesh, f, c, s)
    den = float(u @ (op.mass * u))
    I = float(u @ (op.A @ u)) / den
    J = float(u @ (op.reaction * op.mass * u)) / den
    return TestFunctionBound(int(center), float(R), float(s), u, I + J, I, J,
                             int(np.count_nonzero(inside)))


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRow:
    s: float
    lam: float
    residual: float
    iterations: int
    converged: bool
    bounds_ok: bool
    energy_ok: bool
    energy: float
    mass_on_maxima: list
    mass_on_M1: float
    mass_on_M2: float
    positivity: str = "pass"

    def csv_values(self) -> list:
        m = self.mass_on_maxima
        return [self.s, self.lam, self.residual, self.iterations, self.bounds_ok,
                self.energy_ok, m[0], m[-1], self.mass_on_M1, self.mass_on_M2]


@dataclass
class SweepReport:
    mesh: str
    f: str
    c: str
    radii: list
    tol: float
    morse: dict
    rows: list = field(default_factory=list)
    extrapolated: float | None = None
    extrapolation_slope: float | None = None
    extrapolation_residual: float | None = None
    predicted_limit: float = float("nan")
    c_star: float = float("nan")
    c_upper: float = float("nan")
    threshold: float = 0.0
    verdict: str = "inconclusive"
    notes: list = field(default_factory=list)

    @property
    def final_lambda(self) -> float:
        return self.rows[-1].lam

    def row(self, s: float) -> SweepRow:
        for r in self.rows:
            if r.s == s:
                return r
        raise KeyError(s)

    def to_dict(self) -> dict:
        return {
            "mesh": self.mesh, "f": self.f, "c": self.c, "radii": list(self.radii),
            "tol": self.tol, "morse": self.morse,
            "rows": [{
                "s": r.s, "lambda": r.lam, "residual": r.residual,
                "iterations": r.iterations, "converged": r.converged,
                "bounds_ok": r.bounds_ok, "energy_ok": r.energy_ok, "energy": r.energy,
                "mass_on_maxima": list(r.mass_on_maxima), "mass_M1": r.mass_on_M1,
                "mass_M2": r.mass_on_M2, "positivity": r.positivity,
            } for r in self.rows],
            "extrapolated_limit": self.extrapolated,
            "extrapolation_slope": self.extrapolation_slope,
            "extrapolation_residual": self.extrapolation_residual,
            "predicted_limit": self.predicted_limit,
            "c_star": self.c_star, "c_upper": self.c_upper,
            "threshold": self.threshold, "verdict": self.verdict,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        rows = [SweepRow(r["s"], r["lambda"], r["residual"], r["iterations"],
                         r["converged"], r["bounds_ok"], r["energy_ok"], r["energy"],
                         list(r["mass_on_maxima"]), r["mass_M1"], r["mass_M2"],
                         r["positivity"]) for r in d["rows"]]
        return cls(d["mesh"], d["f"], d["c"], list(d["radii"]), d["tol"], d["morse"], rows,
                   d["extrapolated_limit"], d["extrapolation_slope"],
                   d["extrapolation_residual"], d["predicted_limit"], d["c_star"],
                   d["c_upper"], d["threshold"], d["verdict"], list(d["notes"]))


def sweep(mesh: TriMesh, f: ScalarField, c: ScalarField, s_list, solver: SolverConfig | None = None,
          radii=DEFAULT_RADII, threshold: float | None = None,
          exclusion_radius: float | None = None, keep_results: bool = False):
    """Solve for every ``s`` in increasing order, warm-starting from the previous vector.

    Returns a :class:`SweepReport`; with ``keep_results=True`` also the list of
    ``(operator, EigenResult)`` pairs.
    """
    solver = solver or SolverConfig()
    s_list = [float(s) for s in s_list]
    if not s_list:
        raise ValueError("s_list is empty")
    if any(b <= a for a, b in zip(s_list, s_list[1:])):
        raise ValueError("s_list must be strictly increasing")
    morse = predicted_limit(f, c, mesh)
    span = morse.c_upper - morse.c_star
    thr = 0.1 * span if threshold is None else float(threshold)
    obtuse = _has_obtuse(mesh)
    report = SweepReport(mesh.name, getattr(f, "expr", ""), getattr(c, "expr", ""),
                         [float(r) for r in radii], solver.tol, morse.to_dict(),
                         predicted_limit=morse.predicted_limit, c_star=morse.c_star,
                         c_upper=morse.c_upper, threshold=thr)
    kept = []
    x0 = None
    for s in s_list:
        op = spectral.assemble(mesh, f, c, s)
        try:
            res = spectral.smallest_eigenpair(op, tol=solver.tol, max_iter=solver.max_iter,
                                              method=solver.method, x0=x0, seed=solver.seed)
        except spectral.SolverError as exc:
            report.notes.append(f"s={s:g}: solver failed: {exc}")
            report.rows.append(_failed_row(s, len(radii)))
            continue
        if solver.warm_start and res.converged:
            x0 = res.vector
        conc = concentration(op, res, morse, radii, exclusion_radius, mesh)
        en = spectral.energy(op, res.vector)
        tol = solver.tol
        report.rows.append(SweepRow(
            s=s, lam=res.lam, residual=res.residual, iterations=res.iterations,
            converged=res.converged,
            bounds_ok=bool(morse.c_star - tol <= res.lam <= morse.c_upper + tol),
            energy_ok=bool(en <= span + tol), energy=en,
            mass_on_maxima=conc.mass_on_maxima, mass_on_M1=conc.mass_on_M1,
            mass_on_M2=conc.mass_on_M2,
            positivity=spectral.positivity_check(res, obtuse).status))
        if keep_results:
            kept.append((op, res))

    positive = [(r.s, r.lam) for r in report.rows if r.s > 0]
    if len(positive) >= 3:
        try:
            fit = richardson_extrapolate(positive)
            report.extrapolated = fit.limit
            report.extrapolation_slope = fit.slope
            report.extrapolation_residual = fit.fit_residual
        except ValueError as exc:
            report.notes.append(f"extrapolation failed: {exc}")
    report.notes.append("the s grid samples lambda(s) at fixed points; "
                        "subsequential limits cannot be distinguished")
    report.verdict = _verdict(report, morse)
    return (report, kept) if keep_results else report


def _failed_row(s: float, k: int) -> SweepRow:
    nan = float("nan")
    return SweepRow(s, nan, nan, 0, False, False, False, nan, [nan] * k, nan, nan, "fail")


def _has_obtuse(mesh: TriMesh) -> bool:
    from .mesh import validate
    return validate(mesh).obtuse_triangle_count > 0


def _verdict(report: SweepReport, morse: MorseReport) -> str:
    if not all(r.converged for r in report.rows):
        report.notes.append("a solve failed to converge")
        return "inconclusive"
    if morse.c_upper == morse.c_star:
        # constant reaction: lambda(s) = c for every s, whatever f is
        ok = all(abs(r.lam - morse.c_star) <= max(report.tol, 1e-7) for r in report.rows)
        return "pass" if ok else "fail"
    if morse.degenerate:
        report.notes.append("f is degenerate (constant or tie-sensitive); "
                            "the limit prediction does not apply")
        return "degenerate"
    gap = abs(report.final_lambda - morse.predicted_limit)
    if report.extrapolated is not None:
        report.notes.append(f"|extrapolated - L*| = "
                            f"{abs(report.extrapolated - morse.predicted_limit):.3e}")
    return "pass" if gap <= max(report.threshold, report.tol) else "fail"


# ---------------------------------------------------------------------------
# output

def _csv_text(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r.csv_values()])
    return buf.getvalue()


def render_svg(report: SweepReport, width: int = 640, height: int = 400) -> str:
    """Line chart of lambda(s) with a dashed line at the predicted limit."""
    xs = [r.s for r in report.rows]
    ys = [r.lam for r in report.rows]
    lstar = report.predicted_limit
    yv = ys + ([lstar] if math.isfinite(lstar) else [])
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(yv), max(yv)
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 50

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>',
    ]
    parts += [f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>'
              for x, y in zip(xs, ys)]
    if math.isfinite(lstar):
        parts.append(f'<line x1="{pad}" y1="{py(lstar):.2f}" x2="{width - pad}" '
                     f'y2="{py(lstar):.2f}" stroke="firebrick" stroke-dasharray="6,4"/>')
        parts.append(f'<text x="{width - pad}" y="{py(lstar) - 6:.2f}" text-anchor="end" '
                     f'font-size="12" fill="firebrick">L* = {lstar:.6g}</text>')
    parts += [
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="13">s</text>',
        f'<text x="14" y="{height / 2:.0f}" font-size="13" '
        f'transform="rotate(-90 14 {height / 2:.0f})" text-anchor="middle">lambda(s)</text>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="11">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" font-size="11" '
        f'text-anchor="end">{x1:g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="11" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="11" text-anchor="end">{y1:.4g}</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def emit_report(report: SweepReport, out_dir, formats=("csv", "json", "svg"),
                stem: str = "sweep") -> list[str]:
    """Write the report as CSV, JSON and/or SVG into ``out_dir``."""
    if not report.rows:
        raise ValueError("no rows")
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown output format(s): {sorted(unknown)}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    writers = {
        "csv": lambda: _csv_text(report),
        "json": lambda: json.dumps(report.to_dict(), indent=2) + "\n",
        "svg": lambda: render_svg(report),
    }
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        try:
            with open(path, "w") as fh:
                fh.write(writers[fmt]())
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from None
        paths.append(path)
    return paths
