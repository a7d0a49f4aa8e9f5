"""Weighted P1 pencil and its smallest eigenpair.

For drift strength ``s`` the discrete quotient is

    J(u) = u^T (A + C) u / u^T M u

with per-triangle stiffness weights ``exp(s (mean_T f - f_max))``, lumped mass
weights ``exp(s (f_i - f_max))`` and ``C = diag(c) M``. Subtracting ``f_max``
leaves the quotient unchanged and keeps every weight in ``(0, 1]``.

Solvers work on the symmetrized matrix ``B = M^-1/2 (A + C) M^-1/2`` and hand
back ``v = M^-1/2 y``. Far from the maxima of ``f`` the entries of ``y`` are
exponentially small, so ``v`` recovered by division is dominated by solver
noise there; a few steps of inverse iteration on ``A + C - sigma M`` with a
sparse LU factorization (componentwise accurate for this M-matrix) give back
an accurate, positive ``v`` everywhere.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .mesh import ScalarField, TriMesh

__all__ = [
    "WeightedOperator", "EigenResult", "PositivityReport", "SolverError",
    "assemble", "assemble_unweighted", "rayleigh_quotient", "smallest_eigenpair",
    "positivity_check", "relative_residual", "symmetrized", "energy",
    "export_matrix_market", "export_vector_csv",
    "DEFAULT_TOL", "DEFAULT_MAX_ITER", "EXPONENT_FLOOR", "METHODS",
]

log = logging.getLogger(__name__)

EXPONENT_FLOOR = -700.0
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
METHODS = ("lobpcg", "inverse_power")
FAULT_ENV = "DRIFT_SPECTRA_FAULT"
STALL_ITERATIONS = 200     # stop when the residual has not halved for this long
REFINE_MAX_STEPS = 8
WARM_START_MIX = 1e-2


class SolverError(RuntimeError):
    pass


@dataclass
class WeightedOperator:
    """Sparse pencil ``(A + C, M)`` for one drift strength."""
    s: float
    A: sparse.csr_matrix
    mass: np.ndarray       # diagonal of M
    reaction: np.ndarray   # c at the vertices; C = diag(reaction * mass)
    f_max: float
    mesh: TriMesh | None = None
    f: ScalarField | None = None
    c: ScalarField | None = None

    @property
    def n(self) -> int:
        return len(self.mass)

    @property
    def M(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass)

    @property
    def C(self) -> sparse.dia_matrix:
        return sparse.diags(self.reaction * self.mass)

    @property
    def K(self) -> sparse.csr_matrix:
        """``A + C`` in CSR form."""
        return (self.A + self.C).tocsr()

    @property
    def c_star(self) -> float:
        return float(self.reaction.min())

    @property
    def c_upper(self) -> float:
        return float(self.reaction.max())


@dataclass
class EigenResult:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool = True
    tol: float = DEFAULT_TOL
    message: str = ""

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "residual": self.residual,
                "iterations": self.iterations, "method": self.method,
                "converged": self.converged}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class PositivityReport:
    all_same_sign: bool
    worst_violation: float
    status: str            # "pass", "warn" or "fail"
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# assembly

def _values(field_or_array) -> np.ndarray:
    return np.asarray(getattr(field_or_array, "values", field_or_array), dtype=float)


def _stiffness(mesh: TriMesh, tri_weight: np.ndarray | None) -> sparse.csr_matrix:
    g = mesh.grads
    local = np.einsum("tad,tbd->tab", g, g) * mesh.areas[:, None, None]
    if tri_weight is not None:
        local = local * tri_weight[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    # exact symmetry regardless of summation order
    return ((A + A.T) * 0.5).tocsr()


def assemble(mesh: TriMesh, f, c, s: float) -> WeightedOperator:
    """Weighted stiffness, reaction and lumped mass for drift strength ``s``.

    Every weight exponent is formed as ``s * (f - f_max)`` before
    exponentiation and floored at -700, so ``f`` and ``f + const`` give the
    same matrices whenever the shift is exact in floating point.
    """
    fv, cv = _values(f), _values(c)
    if len(fv) != mesh.n_vertices or len(cv) != mesh.n_vertices:
        raise ValueError(f"field size mismatch: mesh has {mesh.n_vertices} vertices, "
                         f"got f={len(fv)}, c={len(cv)}")
    if not s >= 0:
        raise ValueError(f"drift strength must be non-negative, got s={s}")
    f_max = float(fv.max())
    d = fv - f_max
    tri_exp = np.maximum(s * (d[mesh.triangles].sum(axis=1) / 3.0), EXPONENT_FLOOR)
    vert_exp = np.maximum(s * d, EXPONENT_FLOOR)
    A = _stiffness(mesh, np.exp(tri_exp))
    if os.environ.get(FAULT_ENV) == "stiffness_sign":
        A = -A
    mass = mesh.lumped * np.exp(vert_exp)
    return WeightedOperator(float(s), A, mass, cv.copy(), f_max, mesh,
                            f if isinstance(f, ScalarField) else None,
                            c if isinstance(c, ScalarField) else None)


def assemble_unweighted(mesh: TriMesh, c) -> WeightedOperator:
    """Plain ``-Laplace + c`` pencil with all weights switched off."""
    cv = _values(c)
    if len(cv) != mesh.n_vertices:
        raise ValueError("field size mismatch")
    return WeightedOperator(0.0, _stiffness(mesh, None), mesh.lumped.copy(), cv.copy(),
                            0.0, mesh, None, c if isinstance(c, ScalarField) else None)


def rayleigh_quotient(op: WeightedOperator, u) -> float:
    u = np.asarray(u, dtype=float)
    den = float(u @ (op.mass * u))
    if den == 0.0 or not np.any(u):
        raise ValueError("Rayleigh quotient of the zero vector")
    num = float(u @ (op.A @ u)) + float(u @ (op.reaction * op.mass * u))
    return num / den


def energy(op: WeightedOperator, v) -> float:
    """Discrete weighted Dirichlet energy ``v^T A v``."""
    v = np.asarray(v, dtype=float)
    return float(v @ (op.A @ v))


# ---------------------------------------------------------------------------
# residuals and symmetrization

def symmetrized(op: WeightedOperator) -> tuple[sparse.csr_matrix, np.ndarray]:
    """``B = M^-1/2 (A + C) M^-1/2`` and ``sqrt(diag M)``."""
    sq = np.sqrt(op.mass)
    D = sparse.diags(1.0 / sq)
    B = (D @ op.K @ D).tocsr()
    B = ((B + B.T) * 0.5).tocsr()
    return B, sq


def _relres_sym(By, y, lam, diagB) -> float:
    yy = float(y @ y)
    scale = float((y * y) @ diagB) / yy
    r = By - lam * y
    return float(np.linalg.norm(r) / ((abs(scale) + abs(lam)) * np.sqrt(yy)))


def relative_residual(op: WeightedOperator, v, lam: float) -> float:
    """Scaled residual of ``(A + C) v = lam M v`` in the mass-symmetrized gauge.

    ``||M^-1/2 (K v - lam M v)|| / ((d + |lam|) ||M^1/2 v||)`` where ``d`` is
    the ``y``-weighted mean of ``diag(K) / diag(M)`` and ``y = M^1/2 v``.
    """
    v = np.asarray(v, dtype=float)
    K = op.K
    sq = np.sqrt(op.mass)
    y = sq * v
    By = (K @ v) / sq
    return _relres_sym(By, y, lam, K.diagonal() / op.mass)


# ---------------------------------------------------------------------------
# iterative eigensolvers on B

def _lobpcg(B, diagB, y, tol, max_iter):
    """Block-size-one LOBPCG with a Jacobi preconditioner."""
    y = y / np.linalg.norm(y)
    By = B @ y
    lam = float(y @ By)
    p = None
    inv_diag = 1.0 / diagB
    res = _relres_sym(By, y, lam, diagB)
    best, it_best = res, 0
    it = 0
    while res > tol and it < max_iter and it - it_best < STALL_ITERATIONS:
        it += 1
        r = By - lam * y
        w = r * inv_diag
        cols = [y, w] if p is None else [y, w, p]
        Q, R = np.linalg.qr(np.column_stack(cols))
        keep = np.abs(np.diag(R)) > 1e-13 * np.abs(R[0, 0])
        keep[0] = True
        Q = Q[:, keep]
        BQ = np.column_stack([B @ Q[:, k] for k in range(Q.shape[1])])
        G = Q.T @ BQ
        G = 0.5 * (G + G.T)
        evals, evecs = scipy.linalg.eigh(G)
        a = evecs[:, 0]
        y_new = Q @ a
        By = BQ @ a
        p = Q[:, 1:] @ a[1:] if Q.shape[1] > 1 else None
        nrm = np.linalg.norm(y_new)
        y = y_new / nrm
        By = By / nrm
        lam = float(y @ By)
        res = _relres_sym(By, y, lam, diagB)
        if res < 0.5 * best:
            best, it_best = res, it
    return y, lam, res, it


def _pcg(B, shift, b, inv_diag, rtol, max_iter):
    """Jacobi-preconditioned CG for ``(B - shift I) x = b``."""
    x = np.zeros_like(b)
    r = b.copy()
    z = r * inv_diag
    p = z.copy()
    rz = float(r @ z)
    bnorm = np.linalg.norm(b)
    for k in range(1, max_iter + 1):
        Ap = B @ p - shift * p
        pAp = float(p @ Ap)
        if not pAp > 0:
            raise SolverError(f"inner CG breakdown at iteration {k} (p^T A p = {pAp:.3e})")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, k
        z = r * inv_diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def _inverse_power(B, diagB, y, tol, max_iter, shift):
    y = y / np.linalg.norm(y)
    By = B @ y
    lam = float(y @ By)
    res = _relres_sym(By, y, lam, diagB)
    inv_diag = 1.0 / (diagB - shift)
    best, it_best = res, 0
    it = 0
    while res > tol and it < max_iter and it - it_best < STALL_ITERATIONS:
        it += 1
        z, k = _pcg(B, shift, y, inv_diag, max(0.1 * res, 1e-15), 20 * len(y))
        y = z / np.linalg.norm(z)
        By = B @ y
        lam = float(y @ By)
        res = _relres_sym(By, y, lam, diagB)
        if res < 0.5 * best:
            best, it_best = res, it
    return y, lam, res, it


def _refine(op: WeightedOperator, lam: float, steps: int = 3, tol: float = 0.0):
    """Inverse iteration on ``K - sigma M`` just below ``lam`` with a sparse LU.

    At least ``steps`` iterations, continuing (up to ``REFINE_MAX_STEPS``)
    while the residual is above ``tol``. Returns a vector in the
    unsymmetrized gauge, or None if the shifted matrix could not be factorized.
    """
    K = op.K
    sigma = lam - 1e-6 * (1.0 + abs(lam))
    S = (K - sparse.diags(sigma * op.mass)).tocsc()
    d = S.diagonal()
    if np.any(d <= 0):
        return None
    Dh = sparse.diags(1.0 / np.sqrt(d))
    Ss = (Dh @ S @ Dh).tocsc()
    try:
        lu = splinalg.splu(Ss, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
    except RuntimeError:
        return None
    dh = Dh.diagonal()
    v = np.ones(op.n)
    for k in range(REFINE_MAX_STEPS):
        v = dh * lu.solve(dh * (op.mass * v))
        nrm = np.sqrt(v @ (op.mass * v))
        if not np.isfinite(nrm) or nrm == 0:
            return None
        v = v / nrm
        if k + 1 >= steps and relative_residual(op, v, rayleigh_quotient(op, v)) <= tol:
            break
    return v


def _initial_vector(n: int, seed: int) -> np.ndarray:
    """Start vector in the symmetrized gauge: constant plus a small perturbation.

    Constant in ``y`` (not in ``v``) matters: ``y = M^1/2 1`` would put
    exponentially little weight on secondary wells of f, and an iteration
    started there can lock onto a higher eigenpair.
    """
    rng = np.random.default_rng(seed)
    y = 1.0 + 1e-3 * rng.standard_normal(n)
    return y / np.linalg.norm(y)


def _normalize(op: WeightedOperator, v: np.ndarray) -> np.ndarray:
    v = v / np.sqrt(v @ (op.mass * v))
    if float(op.mass @ v) < 0:
        v = -v
    return v


def smallest_eigenpair(op: WeightedOperator, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER, method: str = "lobpcg",
                       x0=None, seed: int = 42, refine: bool = True) -> EigenResult:
    """Smallest eigenvalue of ``(A + C) v = lam M v``.

    ``x0`` is a warm start in the unsymmetrized gauge (e.g. the previous
    eigenvector of a sweep); it is blended with a small multiple of the
    default start, which is constant in the symmetrized gauge with a 1e-3
    perturbation drawn from ``seed``. The returned vector satisfies
    ``v^T M v = 1`` with positive M-weighted mean, and ``lam`` is its
    Rayleigh quotient.
    """
    if not 0 < tol <= 1e-2:
        raise ValueError(f"tol must lie in (0, 1e-2], got {tol}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    B, sq = symmetrized(op)
    diagB = B.diagonal()
    y0 = _initial_vector(op.n, seed)
    if x0 is not None:
        warm = sq * np.asarray(x0, dtype=float)
        nrm = np.linalg.norm(warm)
        if np.isfinite(nrm) and nrm > 0:
            # keep a uniform component so a well the warm start missed stays visible
            y0 = warm / nrm + WARM_START_MIX * y0

    message = ""
    if method == "lobpcg":
        y, lam, res, it = _lobpcg(B, diagB, y0, tol, max_iter)
    else:
        span = op.c_upper - op.c_star
        shift = op.c_star - 0.1 * (span if span > 0 else max(1.0, abs(op.c_star)))
        try:
            y, lam, res, it = _inverse_power(B, diagB, y0, tol, max_iter, shift)
        except SolverError as exc:
            v = _normalize(op, y0 / sq)
            return EigenResult(rayleigh_quotient(op, v), v, float("inf"), 0, method,
                               converged=False, tol=tol, message=str(exc))
    v = _normalize(op, y / sq)
    lam = rayleigh_quotient(op, v)
    res = relative_residual(op, v, lam)

    # The iteration works on B, whose entries span many orders of magnitude at
    # large s; rounding in B @ y can stall it just above tol. A few steps of
    # direct inverse iteration just below lam finish the job and also pin down
    # the far-field entries of v.
    if refine and np.isfinite(lam):
        w = _refine(op, lam, tol=tol)
        if w is not None:
            w = _normalize(op, w)
            lam_w = rayleigh_quotient(op, w)
            res_w = relative_residual(op, w, lam_w)
            not_higher = lam_w <= lam + max(tol, 1e-12) * (1.0 + abs(lam))
            if not_higher and (res_w <= tol or res_w <= res):
                v, lam, res = w, lam_w, res_w
    converged = res <= tol
    if not converged:
        message = f"not converged after {it} iterations (residual {res:.3e})"
        log.warning(message)
    return EigenResult(float(lam), v, float(res), int(it), method,
                       converged=bool(converged), tol=tol, message=message)


# ---------------------------------------------------------------------------
# diagnostics and export

def positivity_check(res: EigenResult, obtuse: bool = False) -> PositivityReport:
    """Check that the eigenvector has one sign.

    A violation is a failure on meshes without obtuse triangles (where the
    stiffness is an M-matrix) and a warning otherwise.
    """
    v = np.asarray(res.vector, dtype=float)
    scale = float(np.abs(v).max())
    sgn = 1.0 if v.sum() >= 0 else -1.0
    worst = float(max(0.0, -(sgn * v).min()) / scale) if scale > 0 else 0.0
    ok = worst <= 1e-10
    notes = []
    if not ok and obtuse:
        notes.append("mesh has obtuse triangles: stiffness is not an M-matrix")
    status = "pass" if ok else ("warn" if obtuse else "fail")
    return PositivityReport(ok, worst, status, notes)


def export_matrix_market(op: WeightedOperator, prefix) -> list[str]:
    """Write ``A``, ``C`` and ``M`` as Matrix Market coordinate files."""
    paths = []
    for name, mat in (("A", op.A), ("C", op.C), ("M", op.M)):
        path = f"{prefix}_{name}.mtx"
        scipy.io.mmwrite(path, sparse.coo_matrix(mat), symmetry="symmetric",
                         precision=17)
        paths.append(path)
    return paths


def export_vector_csv(res: EigenResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("vertex_index,value\n")
        for i, x in enumerate(res.vector.tolist()):
            fh.write(f"{i},{x!r}\n")
