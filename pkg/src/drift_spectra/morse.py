"""Combinatorial critical points of a vertex field on a closed surface.

A vertex is classified from the cyclic sign pattern of ``f(neighbour) - f(vertex)``
around its ordered one-ring (the Banchoff rule): no sign change means an
extremum, two changes a regular point, ``2 + 2m`` changes a saddle of
multiplicity ``m``. Exact ties are broken by the symbolic perturbation
``f(i) + i * eps``, which makes the vertex order total and keeps
``#max - sum(m) + #min == chi`` exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import ScalarField, TriMesh

__all__ = ["CriticalPoint", "MorseReport", "classify", "predicted_limit",
           "classify_circle", "MAXIMUM", "MINIMUM", "SADDLE"]

MAXIMUM = "maximum"
MINIMUM = "minimum"
SADDLE = "saddle"


@dataclass(frozen=True)
class CriticalPoint:
    vertex: int
    kind: str
    multiplicity: int
    f: float
    c: float = float("nan")
    tie_sensitive: bool = False

    @property
    def index(self) -> int:
        """Signed Euler contribution: +1 for extrema, -m for a saddle."""
        return -self.multiplicity if self.kind == SADDLE else 1


@dataclass
class MorseReport:
    criticals: list
    maximum_set: list
    c_star: float
    c_upper: float
    predicted_limit: float
    predicted_limit_global: float
    global_maximum_set: list
    euler_lhs: int
    euler_chi: int | None
    degenerate: bool
    notes: list = field(default_factory=list)

    @property
    def n_maxima(self) -> int:
        return sum(cp.kind == MAXIMUM for cp in self.criticals)

    @property
    def n_minima(self) -> int:
        return sum(cp.kind == MINIMUM for cp in self.criticals)

    @property
    def n_saddles(self) -> int:
        """Saddles counted with multiplicity."""
        return sum(cp.multiplicity for cp in self.criticals if cp.kind == SADDLE)

    @property
    def euler_ok(self) -> bool:
        return self.euler_chi is None or self.euler_lhs == self.euler_chi

    def to_dict(self) -> dict:
        return {
            "criticals": [{"vertex": cp.vertex, "kind": cp.kind,
                           "multiplicity": cp.multiplicity, "f": cp.f, "c": cp.c}
                          for cp in self.criticals],
            "maximum_set": list(self.maximum_set),
            "c_star": self.c_star,
            "c_upper": self.c_upper,
            "predicted_limit": self.predicted_limit,
            "predicted_limit_global": self.predicted_limit_global,
            "global_maximum_set": list(self.global_maximum_set),
            "euler_lhs": self.euler_lhs,
            "euler_chi": self.euler_chi,
            "degenerate": self.degenerate,
            "notes": list(self.notes),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _sign_changes(signs: np.ndarray) -> int:
    return int(np.count_nonzero(signs != np.roll(signs, 1)))


def _kind(signs: np.ndarray) -> tuple[str | None, int]:
    changes = _sign_changes(signs)
    if changes == 0:
        return (MAXIMUM, 0) if signs[0] < 0 else (MINIMUM, 0)
    if changes == 2:
        return None, 0
    return SADDLE, (changes - 2) // 2


def _classify_rings(values: np.ndarray, rings) -> tuple[list[tuple[int, str, int, bool]], bool]:
    out = []
    any_sensitive = False
    for i, ring in enumerate(rings):
        d = values[ring] - values[i]
        ties = d == 0.0
        # symbolic perturbation: a tied neighbour with larger index counts as higher
        signs = np.where(ties, np.where(ring > i, 1, -1), np.sign(d)).astype(np.int8)
        kind, mult = _kind(signs)
        sensitive = False
        if ties.any():
            alternatives = (np.where(ties, 1, signs), np.where(ties, -1, signs))
            sensitive = any(_kind(a) != (kind, mult) for a in alternatives)
            any_sensitive |= sensitive
        if kind is not None:
            out.append((i, kind, mult, sensitive))
    return out, any_sensitive


def classify(f: ScalarField, mesh: TriMesh, c: ScalarField | None = None) -> list[CriticalPoint]:
    """Non-regular vertices of ``f``, sorted by vertex index."""
    values = np.asarray(getattr(f, "values", f), dtype=float)
    if len(values) != mesh.n_vertices:
        raise ValueError("field size does not match mesh")
    cvals = None if c is None else np.asarray(getattr(c, "values", c), dtype=float)
    found, _ = _classify_rings(values, mesh.one_rings)
    return [CriticalPoint(i, kind, mult, float(values[i]),
                          float("nan") if cvals is None else float(cvals[i]), sens)
            for i, kind, mult, sens in found]


def _report(values, cvals, found, any_sensitive, chi, notes) -> MorseReport:
    crit = [CriticalPoint(i, kind, mult, float(values[i]), float(cvals[i]), sens)
            for i, kind, mult, sens in found]
    maxima = [cp.vertex for cp in crit if cp.kind == MAXIMUM]
    fmax = float(values.max())
    span = float(values.max() - values.min())
    constant = span == 0.0
    # global maxima: local maxima that attain max f up to rounding
    gtol = 1e-12 * max(abs(fmax), span, 1.0)
    global_max = [v for v in maxima if values[v] >= fmax - gtol]
    lstar = float(min(cvals[v] for v in maxima)) if maxima else float("nan")
    lglob = float(min(cvals[v] for v in global_max)) if global_max else float("nan")
    euler = sum(cp.index for cp in crit)
    degenerate = constant or any_sensitive
    if constant:
        notes.append("f is constant: no Morse structure, classification unreliable")
    elif any_sensitive:
        notes.append("exact ties change the classification of some vertices")
    return MorseReport(
        criticals=crit,
        maximum_set=maxima,
        c_star=float(cvals.min()),
        c_upper=float(cvals.max()),
        predicted_limit=lstar,
        predicted_limit_global=lglob,
        global_maximum_set=global_max,
        euler_lhs=int(euler),
        euler_chi=chi,
        degenerate=bool(degenerate),
        notes=notes,
    )


def predicted_limit(f: ScalarField, c: ScalarField, mesh: TriMesh) -> MorseReport:
    """Classify ``f`` and report the large-drift limit ``min over local maxima of c``.

    The report also carries the variant restricted to global maxima of f.
    """
    values = np.asarray(getattr(f, "values", f), dtype=float)
    cvals = np.asarray(getattr(c, "values", c), dtype=float)
    if len(values) != mesh.n_vertices or len(cvals) != mesh.n_vertices:
        raise ValueError("field size does not match mesh")
    found, sensitive = _classify_rings(values, mesh.one_rings)
    return _report(values, cvals, found, sensitive, mesh.euler_characteristic, [])


def classify_circle(f_values, c_values) -> MorseReport:
    """Same rule on a periodic 1-D grid: each point has the two-cycle ring (j-1, j+1).

    On a circle a two-element ring has sign changes 0 or 2, so only extrema
    appear and ``chi(S^1) = #min - #max = 0``.
    """
    f_values = np.asarray(f_values, dtype=float)
    c_values = np.asarray(c_values, dtype=float)
    n = len(f_values)
    rings = [np.array([(j - 1) % n, (j + 1) % n]) for j in range(n)]
    found, sensitive = _classify_rings(f_values, rings)
    report = _report(f_values, c_values, found, sensitive, 0, [])
    # in one dimension a maximum has index 1, so it enters chi with sign -1
    report.euler_lhs = report.n_minima - report.n_maxima
    return report
