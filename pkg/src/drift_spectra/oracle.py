"""Dense reference solver for the drifted eigenproblem on the circle.

Everything here is written independently of :mod:`drift_spectra.spectral`:
its own periodic P1 assembly, its own residual, and two dense eigensolvers
that share nothing with the sparse iterations:

* cyclic Jacobi rotations (full spectrum), the default for ``n <= 256``;
* Sturm-count bisection on the periodic tridiagonal matrix followed by
  inverse iteration (smallest pair only), used for larger grids where the
  O(n^3) Jacobi sweeps become too slow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
import scipy.linalg

from . import exprlang
from .morse import MorseReport, classify_circle

__all__ = ["CircleProblem", "CirclePencil", "circle_assemble", "circle_solve",
           "circle_morse", "jacobi_eigh", "richardson_extrapolate", "Extrapolation",
           "OracleError", "MAX_N", "JACOBI_AUTO_MAX_N", "write_csv"]

MAX_N = 4096
JACOBI_AUTO_MAX_N = 256
_FLOOR = -700.0


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class CircleProblem:
    """``f`` and ``c`` as expressions in the angle ``u`` on ``n`` uniform nodes."""
    n: int
    f_expr: str
    c_expr: str
    s: float

    @property
    def h(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n


@dataclass
class CirclePencil:
    A: np.ndarray           # dense weighted stiffness
    mass: np.ndarray        # lumped weighted mass (diagonal)
    f: np.ndarray
    c: np.ndarray
    f_max: float
    s: float
    h: float

    @property
    def K(self) -> np.ndarray:
        return self.A + np.diag(self.c * self.mass)

    @property
    def n(self) -> int:
        return len(self.mass)


def _grid_values(expr: str, theta: np.ndarray) -> np.ndarray:
    e = exprlang.parse(expr)
    extra = exprlang.free_vars(e) - {"u"}
    if extra:
        raise exprlang.UnboundVariableError(sorted(extra)[0])
    return np.array([exprlang.evaluate(e, {"u": t}) for t in theta.tolist()])


def circle_assemble(p: CircleProblem, f_values=None, c_values=None) -> CirclePencil:
    """Periodic P1 pencil with edge-midpoint log-interpolated weights.

    ``A[j, j+1] = -exp(s ((f_j + f_{j+1}) / 2 - f_max)) / h`` and
    ``M[j, j] = h exp(s (f_j - f_max))``; indices wrap around.
    """
    if not 8 <= p.n <= MAX_N:
        raise OracleError(f"n must lie in [8, {MAX_N}], got {p.n}")
    if not p.s >= 0:
        raise OracleError("s must be non-negative")
    n, h = p.n, p.h
    f = _grid_values(p.f_expr, p.theta) if f_values is None else np.asarray(f_values, float)
    c = _grid_values(p.c_expr, p.theta) if c_values is None else np.asarray(c_values, float)
    f_max = float(f.max())
    g = f - f_max
    nxt = np.roll(np.arange(n), -1)
    w_edge = np.exp(np.maximum(p.s * 0.5 * (g + g[nxt]), _FLOOR)) / h
    A = np.zeros((n, n))
    j = np.arange(n)
    A[j, nxt] -= w_edge
    A[nxt, j] -= w_edge
    A[j, j] += w_edge
    A[nxt, nxt] += w_edge
    mass = h * np.exp(np.maximum(p.s * g, _FLOOR))
    return CirclePencil(A, mass, f, c, f_max, float(p.s), h)


def circle_morse(p: CircleProblem) -> MorseReport:
    theta = p.theta
    return classify_circle(_grid_values(p.f_expr, theta), _grid_values(p.c_expr, theta))


# ---------------------------------------------------------------------------
# cyclic Jacobi

@numba.njit(cache=True)
def _jacobi_inplace(a, v, max_sweeps):
    n = a.shape[0]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                if abs(apq) <= 1e-16 * math.sqrt(abs(app * aqq)):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                rotated = True
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        nrp = c * arp - s * arq
                        nrq = s * arp + c * arq
                        a[r, p] = nrp
                        a[p, r] = nrp
                        a[r, q] = nrq
                        a[q, r] = nrq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                # v holds eigenvectors as rows for contiguous access
                for r in range(n):
                    vpr = v[p, r]
                    vqr = v[q, r]
                    v[p, r] = c * vpr - s * vqr
                    v[q, r] = s * vpr + c * vqr
        if not rotated:
            return sweep
    return -1


def jacobi_eigh(a, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray, int]:
    """All eigenpairs of a dense symmetric matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues, the matching eigenvector columns and the
    number of sweeps used.
    """
    a = np.array(a, dtype=float, order="C")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    a = 0.5 * (a + a.T)
    v = np.eye(a.shape[0])
    sweeps = _jacobi_inplace(a, v, max_sweeps)
    if sweeps < 0:
        raise OracleError(f"Jacobi did not converge after {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v.T[:, order], sweeps


# ---------------------------------------------------------------------------
# Sturm bisection for the periodic tridiagonal matrix

def _count_below(a, b, gamma, sigma, tiny):
    """Number of eigenvalues below ``sigma`` via LDL^T inertia.

    The wrap-around entry ``gamma = B[0, n-1]`` only fills the last column.
    """
    n = len(a)
    count = 0
    d = a[0] - sigma
    if d == 0.0:
        d = -tiny
    if d < 0.0:
        count += 1
    e = gamma
    acc = e * e / d
    for i in range(1, n - 1):
        l = b[i - 1] / d
        d = a[i] - sigma - l * b[i - 1]
        if d == 0.0:
            d = -tiny
        if d < 0.0:
            count += 1
        e = (b[n - 2] if i == n - 2 else 0.0) - l * e
        acc += e * e / d
    dn = a[n - 1] - sigma - acc
    if not math.isfinite(dn):
        return None
    if dn <= 0.0:
        count += 1
    return count


def _bisection_smallest(B):
    n = B.shape[0]
    a = np.diag(B).tolist()
    b = np.diag(B, 1).tolist()
    gamma = float(B[0, n - 1])
    absrow = np.abs(B).sum(axis=1) - np.abs(np.diag(B))
    lo = float((np.diag(B) - absrow).min())
    hi = float((np.diag(B) + absrow).max())
    scale = max(abs(lo), abs(hi), 1.0)
    tiny = 1e-300
    steps = 0
    while hi - lo > 4e-16 * scale and steps < 200:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        k = _count_below(a, b, gamma, mid, tiny)
        if k is None:
            ev = scipy.linalg.eigvalsh(B - mid * np.eye(n))
            k = int(np.count_nonzero(ev < 0))
        if k >= 1:
            hi = mid
        else:
            lo = mid
        steps += 1
    lam = 0.5 * (lo + hi)
    # inverse iteration just below the bracket
    shift = lo - 1e-10 * scale
    lu = scipy.linalg.lu_factor(B - shift * np.eye(n))
    y = np.ones(n)
    for _ in range(4):
        y = scipy.linalg.lu_solve(lu, y)
        y /= np.linalg.norm(y)
    return lam, y, steps


# ---------------------------------------------------------------------------
# solve

def _residual(K, mass, v, lam):
    sq = np.sqrt(mass)
    y = sq * v
    r = (K @ v - lam * mass * v) / sq
    yy = float(y @ y)
    d = float((y * y) @ (np.diag(K) / mass)) / yy
    return float(np.linalg.norm(r) / ((abs(d) + abs(lam)) * math.sqrt(yy)))


@dataclass
class OracleResult:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool = True
    spectrum: np.ndarray | None = None
    energy: float = float("nan")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "residual": self.residual,
                "iterations": self.iterations, "method": self.method,
                "converged": self.converged}


def circle_solve(p: CircleProblem | CirclePencil, method: str = "auto") -> OracleResult:
    """Smallest eigenpair of the circle pencil by a dense method.

    ``method`` is ``"jacobi"``, ``"bisection"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_AUTO_MAX_N`` nodes). The eigenvector is returned in the
    unsymmetrized gauge with ``v^T M v = 1`` and positive weighted mean.
    """
    pencil = circle_assemble(p) if isinstance(p, CircleProblem) else p
    K = pencil.K
    sq = np.sqrt(pencil.mass)
    B = K / np.outer(sq, sq)
    B = 0.5 * (B + B.T)
    if method == "auto":
        method = "jacobi" if pencil.n <= JACOBI_AUTO_MAX_N else "bisection"
    spectrum = None
    if method == "jacobi":
        w, V, iters = jacobi_eigh(B)
        y = V[:, 0]
        spectrum = w
        tag = "dense_jacobi"
    elif method == "bisection":
        _, y, iters = _bisection_smallest(B)
        tag = "dense_bisection"
    else:
        raise ValueError(f"unknown oracle method {method!r}")
    y = y / np.linalg.norm(y)
    if float(sq @ y) < 0:
        y = -y
    lam = float(y @ B @ y)
    v = y / sq
    res = _residual(K, pencil.mass, v, lam)
    en = float(y @ (B @ y)) - float((y * y) @ pencil.c)
    return OracleResult(lam, v, res, int(iters), tag, True, spectrum, en)


def write_csv(results, path) -> None:
    """Write ``(s, OracleResult)`` pairs as ``s,lambda,residual`` rows."""
    with open(path, "w") as fh:
        fh.write("s,lambda,residual\n")
        for s, r in results:
            fh.write(f"{float(s)!r},{r.lam!r},{r.residual!r}\n")


# ---------------------------------------------------------------------------
# extrapolation in s^-1/2

class Extrapolation(NamedTuple):
    limit: float
    slope: float
    fit_residual: float


def richardson_extrapolate(samples) -> Extrapolation:
    """Least-squares fit ``lambda(s) ~ L + a s^-1/2``.

    This is an empirical model for the approach to the limit; no rate is
    implied by the theory.
    """
    samples = [(float(s), float(l)) for s, l in samples]
    if len(samples) < 3:
        raise ValueError("need at least 3 (s, lambda) samples")
    s = np.array([x[0] for x in samples])
    lam = np.array([x[1] for x in samples])
    if np.any(s <= 0):
        raise ValueError("extrapolation needs s > 0")
    if np.any(np.diff(s) <= 0):
        raise ValueError("s values must be strictly increasing")
    X = np.column_stack([np.ones_like(s), s ** -0.5])
    coef, _, rank, _ = np.linalg.lstsq(X, lam, rcond=None)
    if rank < 2:
        raise ValueError("rank-deficient extrapolation fit")
    fit = X @ coef
    return Extrapolation(float(coef[0]), float(coef[1]), float(np.linalg.norm(lam - fit)))
