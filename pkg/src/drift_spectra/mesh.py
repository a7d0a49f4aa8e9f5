"""Closed triangulated surfaces embedded in R^3.

Generators (icosphere, uv torus), an ASCII OFF reader/writer, combinatorial
validation, per-vertex sampling of expressions and graph-geodesic balls.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import exprlang

__all__ = [
    "TriMesh", "ScalarField", "ValidationReport", "MeshError",
    "icosphere", "uv_torus", "load_off", "write_off", "validate", "sample",
    "geodesic_ball", "geodesic_distance",
]

MAX_SUBDIVISIONS = 8
DEGENERATE_AREA_RATIO = 1e-14


class MeshError(ValueError):
    """Invalid mesh input or a surface that fails validation."""


class TriMesh:
    """Immutable triangle mesh with a precomputed P1 geometry cache.

    Attributes
    ----------
    vertices : (V, 3) float array
    triangles : (F, 3) int array, counter-clockwise w.r.t. the outward normal
    parametric : (V, 2) float array of (u, v) or None
    areas : (F,) triangle areas
    grads : (F, 3, 3) gradient of each P1 hat function, ``grads[t, k]`` for
        the k-th corner of triangle t
    lumped : (V,) lumped vertex areas, one third of each incident triangle
    """

    def __init__(self, vertices, triangles, parametric=None, name: str = "mesh",
                 genus: int | None = None):
        vertices = np.array(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be an array of shape (V, 3)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an array of shape (F, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle vertex index out of range")
        if parametric is not None:
            parametric = np.array(parametric, dtype=float)
            if parametric.shape != (len(vertices), 2):
                raise MeshError("parametric coordinates must have shape (V, 2)")
            parametric.setflags(write=False)
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self.vertices = vertices
        self.triangles = triangles
        self.parametric = parametric
        self.name = name
        self.genus = genus
        self._build_geometry()

    def _build_geometry(self):
        p = self.vertices[self.triangles]          # (F, 3 corners, 3)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        n = np.cross(e1, e2)
        n2 = np.einsum("ij,ij->i", n, n)
        self.areas = 0.5 * np.sqrt(n2)
        # grad phi_k = n x (edge opposite k) / |n|^2
        opp = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(n2 > 0, 1.0 / n2, 0.0)
        self.grads = np.cross(n[:, None, :], opp) * inv[:, None, None]
        lumped = np.zeros(len(self.vertices))
        # sorted-triangle accumulation order keeps sums deterministic
        np.add.at(lumped, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        self.lumped = lumped
        for a in (self.areas, self.grads, self.lumped):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs, i < j."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of edge lengths."""
        i, j = self.edges.T
        d = np.linalg.norm(self.vertices[i] - self.vertices[j], axis=1)
        n = self.n_vertices
        g = sparse.coo_matrix((np.concatenate([d, d]), (np.concatenate([i, j]),
                                                        np.concatenate([j, i]))), shape=(n, n))
        return g.tocsr()

    @cached_property
    def mean_edge_length(self) -> float:
        i, j = self.edges.T
        return float(np.linalg.norm(self.vertices[i] - self.vertices[j], axis=1).mean())

    @cached_property
    def one_rings(self) -> list[np.ndarray]:
        """Neighbours of every vertex in counter-clockwise cyclic order.

        Requires a closed, consistently oriented manifold; raises
        :class:`MeshError` otherwise.
        """
        succ: list[dict[int, int]] = [dict() for _ in range(self.n_vertices)]
        for a, b, c in self.triangles.tolist():
            for v, p, q in ((a, b, c), (b, c, a), (c, a, b)):
                if p in succ[v]:
                    raise MeshError(f"vertex {v} has an inconsistent one-ring")
                succ[v][p] = q
        rings = []
        for v, nxt in enumerate(succ):
            if not nxt:
                raise MeshError(f"vertex {v} is not used by any triangle")
            start = min(nxt)
            ring = [start]
            cur = nxt[start]
            while cur != start:
                ring.append(cur)
                if cur not in nxt or len(ring) > len(nxt):
                    raise MeshError(f"one-ring of vertex {v} is not a single closed cycle")
                cur = nxt[cur]
            if len(ring) != len(nxt):
                raise MeshError(f"one-ring of vertex {v} is not a single closed cycle")
            rings.append(np.array(ring, dtype=np.int64))
        return rings

    @cached_property
    def diameter_bound(self) -> float:
        """Upper bound on the graph-geodesic diameter (twice the eccentricity of vertex 0)."""
        d = csgraph.dijkstra(self.edge_graph, directed=False, indices=0)
        return float(2.0 * d.max())

    def __repr__(self):
        return (f"TriMesh({self.name!r}, V={self.n_vertices}, F={self.n_triangles}, "
                f"chi={self.euler_characteristic})")


@dataclass(frozen=True)
class ScalarField:
    """Per-vertex samples of an expression on a specific mesh."""
    values: np.ndarray
    expr: str = ""

    def __len__(self):
        return len(self.values)

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def min(self) -> float:
        return float(self.values.min())


@dataclass
class ValidationReport:
    closed: bool
    orientable: bool
    euler_characteristic: int
    min_area: float
    min_angle: float
    obtuse_triangle_count: int
    n_vertices: int = 0
    n_edges: int = 0
    n_triangles: int = 0
    degenerate_triangle_count: int = 0
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.closed and self.orientable and self.degenerate_triangle_count == 0

    @property
    def obtuse_fraction(self) -> float:
        return self.obtuse_triangle_count / max(self.n_triangles, 1)

    def to_dict(self) -> dict:
        return {
            "closed": self.closed,
            "orientable": self.orientable,
            "euler_characteristic": self.euler_characteristic,
            "min_area": self.min_area,
            "min_angle": self.min_angle,
            "obtuse_triangle_count": self.obtuse_triangle_count,
            "n_vertices": self.n_vertices,
            "n_edges": self.n_edges,
            "n_triangles": self.n_triangles,
            "degenerate_triangle_count": self.degenerate_triangle_count,
            "problems": list(self.problems),
        }


def validate(mesh: TriMesh) -> ValidationReport:
    """Audit closedness, orientation, Euler characteristic and element quality."""
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    uniq, counts = np.unique(undirected, axis=0, return_counts=True)
    problems = []

    closed = bool(np.all(counts == 2))
    for (i, j), k in zip(uniq[counts != 2][:5], counts[counts != 2][:5]):
        problems.append(f"open surface: edge ({i},{j}) has {k} incident face"
                        + ("" if k == 1 else "s"))

    # consistent orientation: every directed edge occurs once and so does its reverse
    duniq, dcounts = np.unique(directed, axis=0, return_counts=True)
    orientable = bool(np.all(dcounts == 1))
    if orientable and closed:
        keys = set(map(tuple, duniq.tolist()))
        orientable = all((j, i) in keys for i, j in keys)
    if not orientable:
        bad = duniq[dcounts > 1][:5]
        for i, j in bad:
            problems.append(f"non-orientable: edge ({i},{j}) traversed twice in the same direction")
        if not len(bad):
            problems.append("non-orientable: inconsistent edge traversal")

    areas = mesh.areas
    mean_area = float(areas.mean()) if len(areas) else 0.0
    degenerate = int(np.count_nonzero(areas < DEGENERATE_AREA_RATIO * mean_area))
    if degenerate:
        problems.append(f"{degenerate} degenerate triangle(s) with area < "
                        f"{DEGENERATE_AREA_RATIO:g} x mean area")

    p = mesh.vertices[t]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    angles = np.stack(angles, axis=1)
    obtuse = int(np.count_nonzero(angles.max(axis=1) > 0.5 * math.pi + 1e-12))

    chi = mesh.n_vertices - len(uniq) + mesh.n_triangles
    return ValidationReport(
        closed=closed,
        orientable=orientable,
        euler_characteristic=int(chi),
        min_area=float(areas.min()) if len(areas) else 0.0,
        min_angle=float(angles.min()) if len(angles) else 0.0,
        obtuse_triangle_count=obtuse,
        n_vertices=mesh.n_vertices,
        n_edges=len(uniq),
        n_triangles=mesh.n_triangles,
        degenerate_triangle_count=degenerate,
        problems=problems,
    )


def _check(mesh: TriMesh) -> TriMesh:
    report = validate(mesh)
    if not report.ok:
        raise MeshError(report.problems[0])
    return mesh


# ---------------------------------------------------------------------------
# generators

def _icosahedron():
    # polar orientation: one vertex at each pole
    zr = 1.0 / math.sqrt(5.0)
    rr = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    verts += [(rr * math.cos(2 * math.pi * k / 5), rr * math.sin(2 * math.pi * k / 5), zr)
              for k in range(5)]
    verts += [(rr * math.cos(2 * math.pi * k / 5 + math.pi / 5),
               rr * math.sin(2 * math.pi * k / 5 + math.pi / 5), -zr) for k in range(5)]
    verts.append((0.0, 0.0, -1.0))
    faces = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        faces += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (11, l1, l0)]
    return np.array(verts), np.array(faces)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Midpoint-subdivided icosahedron projected onto a sphere.

    The base icosahedron has a vertex at each pole, so ``(0, 0, radius)`` is
    always a mesh vertex. ``V = 10 * 4**k + 2``.
    """
    if not isinstance(subdivisions, (int, np.integer)) or subdivisions < 0:
        raise MeshError("subdivisions must be a non-negative integer")
    if subdivisions > MAX_SUBDIVISIONS:
        raise MeshError(f"subdivisions={subdivisions} exceeds the limit of {MAX_SUBDIVISIONS}")
    if not radius > 0:
        raise MeshError("radius must be positive")
    verts, faces = _icosahedron()
    verts = list(map(tuple, verts))
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            idx = cache.get(key)
            if idx is None:
                pa, pb = verts[a], verts[b]
                m = np.add(pa, pb) * 0.5
                m = m / np.linalg.norm(m)
                idx = len(verts)
                verts.append(tuple(m))
                cache[key] = idx
            return idx

        new = []
        for a, b, c in faces.tolist():
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(new)
    v = np.array(verts) * radius
    return TriMesh(v, faces, name=f"icosphere({subdivisions},{radius:g})", genus=0)


def uv_torus(R: float, r: float, nu: int, nv: int) -> TriMesh:
    """Torus of revolution on a periodic ``nu x nv`` grid, quads split in two.

    Vertex ``i * nv + j`` sits at ``u = 2 pi i / nu``, ``v = 2 pi j / nv``.
    """
    if not (R > 0 and r > 0):
        raise MeshError("R and r must be positive")
    if not r < R:
        raise MeshError(f"torus requires r < R (got R={R}, r={r})")
    if int(nu) != nu or int(nv) != nv or nu < 3 or nv < 3:
        raise MeshError("nu and nv must be integers >= 3")
    nu, nv = int(nu), int(nv)
    u = 2.0 * np.pi * np.arange(nu) / nu
    v = 2.0 * np.pi * np.arange(nv) / nv
    U, V = np.meshgrid(u, v, indexing="ij")
    xyz = np.stack([(R + r * np.cos(V)) * np.cos(U),
                    (R + r * np.cos(V)) * np.sin(U),
                    r * np.sin(V)], axis=-1).reshape(-1, 3)
    uv = np.stack([U, V], axis=-1).reshape(-1, 2)
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    i, j = i.ravel(), j.ravel()
    p00 = i * nv + j
    p10 = ((i + 1) % nu) * nv + j
    p11 = ((i + 1) % nu) * nv + (j + 1) % nv
    p01 = i * nv + (j + 1) % nv
    tris = np.stack([p00, p10, p11, p00, p11, p01], axis=1).reshape(-1, 3)
    return TriMesh(xyz, tris, parametric=uv,
                   name=f"uv_torus({R:g},{r:g},{nu},{nv})", genus=1)


# ---------------------------------------------------------------------------
# OFF I/O

def _off_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_off(data) -> TriMesh:
    """Read an ASCII OFF surface (triangles only) and validate it.

    ``data`` may be bytes, str, a path-like or a binary/text file object.
    """
    if hasattr(data, "read"):
        data = data.read()
    elif not isinstance(data, (bytes, str)):
        with open(data, "rb") as fh:
            data = fh.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MeshError(f"OFF file is not ASCII: {exc}") from None
    lines = _off_lines(data)
    try:
        lineno, tok = next(lines)
    except StopIteration:
        raise MeshError("malformed header: empty file") from None
    if tok[0] != "OFF":
        raise MeshError(f"malformed header: expected 'OFF', found {tok[0]!r} (line {lineno})")
    counts = tok[1:]
    if not counts:
        try:
            lineno, counts = next(lines)
        except StopIteration:
            raise MeshError("malformed header: missing counts line") from None
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshError(f"malformed header: bad counts {' '.join(counts)!r} (line {lineno})") from None
    if nv <= 0 or nf <= 0:
        raise MeshError("malformed header: vertex and face counts must be positive")

    verts = []
    for _ in range(nv):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshError(f"truncated file: expected {nv} vertices") from None
        try:
            verts.append([float(x) for x in tok[:3]])
        except ValueError:
            raise MeshError(f"bad vertex coordinates on line {lineno}") from None
        if len(verts[-1]) != 3:
            raise MeshError(f"vertex on line {lineno} needs 3 coordinates")
    faces = []
    for _ in range(nf):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshError(f"truncated file: expected {nf} faces") from None
        try:
            k = int(tok[0])
            idx = [int(x) for x in tok[1:1 + k]]
        except ValueError:
            raise MeshError(f"bad face on line {lineno}") from None
        if k != 3:
            raise MeshError(f"non-triangle face with {k} vertices on line {lineno}")
        if len(idx) != 3:
            raise MeshError(f"face on line {lineno} lists fewer than 3 indices")
        for i in idx:
            if not 0 <= i < nv:
                raise MeshError(f"index out of range: {i} on line {lineno}")
        faces.append(idx)
    return _check(TriMesh(verts, faces, name="off"))


def write_off(mesh: TriMesh) -> str:
    out = io.StringIO()
    out.write("OFF\n")
    out.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_edges}\n")
    for x, y, z in mesh.vertices.tolist():
        out.write(f"{x!r} {y!r} {z!r}\n")
    for a, b, c in mesh.triangles.tolist():
        out.write(f"3 {a} {b} {c}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# fields and balls

def sample(e, mesh: TriMesh) -> ScalarField:
    """Evaluate an expression (text or parsed) at every vertex.

    ``x, y, z`` are always bound; ``u, v`` only on meshes carrying
    parametric coordinates.
    """
    text = e if isinstance(e, str) else exprlang.to_string(e)
    expr = exprlang.parse(e) if isinstance(e, str) else e
    names = ["x", "y", "z"] + (["u", "v"] if mesh.parametric is not None else [])
    missing = sorted(exprlang.free_vars(expr) - set(names))
    if missing:
        raise exprlang.UnboundVariableError(missing[0])
    cols = np.hstack([mesh.vertices, mesh.parametric]) if mesh.parametric is not None \
        else mesh.vertices
    values = np.empty(mesh.n_vertices)
    for i, row in enumerate(cols.tolist()):
        try:
            values[i] = exprlang.evaluate(expr, dict(zip(names, row)))
        except exprlang.DomainError as exc:
            err = exprlang.DomainError(f"{exc} at vertex {i}")
            err.vertex = i
            raise err from None
    values.setflags(write=False)
    return ScalarField(values, text)


def geodesic_distance(mesh: TriMesh, sources, limit: float = np.inf) -> np.ndarray:
    """Graph-geodesic (Dijkstra over edge lengths) distance to the nearest source."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        return np.full(mesh.n_vertices, np.inf)
    if sources.min() < 0 or sources.max() >= mesh.n_vertices:
        raise MeshError("seed vertex out of range")
    d = csgraph.dijkstra(mesh.edge_graph, directed=False, indices=sources,
                         limit=limit, min_only=True)
    return d


def geodesic_ball(mesh: TriMesh, seed, radius: float) -> np.ndarray:
    """Sorted indices of vertices within graph distance ``radius`` of ``seed``.

    ``seed`` may be a single vertex or a collection (union of balls).
    """
    if not radius >= 0:
        raise MeshError("radius must be non-negative")
    d = geodesic_distance(mesh, seed, limit=radius)
    return np.flatnonzero(d <= radius)
