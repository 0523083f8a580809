"""Bounded convex polytopes in H-representation ``{x : F x <= f}``."""
from __future__ import annotations

import itertools

import numpy as np

from . import conic
from .exceptions import DegenerateSet, DimensionMismatch, EmptySet, InvalidBounds, SolverError, UnboundedSet

VERTEX_TOL = 1e-9
# support LPs are solved tighter than the global default; the vertex oracle
# comparisons are made at 1e-8 relative
SUPPORT_TOL = 1e-11


class Polytope:
    """Compact convex polytope ``{x : normals @ x <= offsets}``.

    Boundedness and non-emptiness are verified on construction by
    evaluating the support function along every positive and negative
    coordinate axis.  Instances are immutable.

    Parameters
    ----------
    normals : (n_f, n) array_like
        Facet normals, one per row.  Rows must not vanish.
    offsets : (n_f,) array_like
        Facet offsets.
    """

    def __init__(self, normals, offsets, *, check=True):
        F = np.atleast_2d(np.array(normals, dtype=float))
        f = np.array(offsets, dtype=float).reshape(-1)
        if F.shape[0] != f.shape[0]:
            raise DimensionMismatch(f"{F.shape[0]} normals but {f.shape[0]} offsets")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(f))):
            raise ValueError("polytope data must be finite")
        if np.any(np.all(F == 0.0, axis=1)):
            raise ValueError("every facet normal needs a nonzero entry")
        F.setflags(write=False)
        f.setflags(write=False)
        self._F, self._f = F, f
        self._vertices = None
        self._bbox = None
        if check:
            self.bounding_box()

    @property
    def normals(self) -> np.ndarray:
        return self._F

    @property
    def offsets(self) -> np.ndarray:
        return self._f

    @property
    def dim(self) -> int:
        return self._F.shape[1]

    @property
    def n_facets(self) -> int:
        return self._F.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, n_facets={self.n_facets})"

    def __eq__(self, other):
        if not isinstance(other, Polytope):
            return NotImplemented
        return (self._F.shape == other._F.shape and np.array_equal(self._F, other._F)
                and np.array_equal(self._f, other._f))

    def __hash__(self):
        return hash((self._F.tobytes(), self._f.tobytes()))

    def __getstate__(self):
        return {"F": self._F, "f": self._f, "bbox": self._bbox, "vertices": self._vertices}

    def __setstate__(self, state):
        self._F, self._f = state["F"], state["f"]
        self._bbox, self._vertices = state["bbox"], state["vertices"]

    def support(self, v) -> float:
        """``max v @ z`` over the polytope."""
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != self.dim:
            raise DimensionMismatch(f"direction of length {v.shape[0]} for a {self.dim}-dimensional set")
        if not np.all(np.isfinite(v)):
            raise ValueError("direction must be finite")
        if not np.any(v):
            self._check_nonempty()
            return 0.0
        # solve along the unit direction so the tolerance is relative
        scale = np.abs(v).max()
        prog = conic.ConicProgram()
        z = prog.add_variables(self.dim, "z")
        prog.add_nonneg(self._f - self._F @ z)
        prog.minimize(-(v / scale) @ z)
        sol = conic.solve(prog, tol=SUPPORT_TOL)
        if sol.status is conic.Status.UNBOUNDED:
            raise UnboundedSet(f"set is unbounded along {v}")
        if sol.status is conic.Status.INFEASIBLE:
            raise EmptySet("polytope is empty")
        if not sol.optimal:
            raise SolverError(f"support LP failed with status {sol.status.value}")
        return -sol.objective * scale

    def _check_nonempty(self):
        prog = conic.ConicProgram()
        z = prog.add_variables(self.dim, "z")
        prog.add_nonneg(self._f - self._F @ z)
        if conic.solve(prog).status is conic.Status.INFEASIBLE:
            raise EmptySet("polytope is empty")

    def bounding_box(self):
        """Per-axis ``(lower, upper)`` bounds; raises if unbounded or empty."""
        if self._bbox is None:
            eye = np.eye(self.dim)
            upper = np.array([self.support(e) for e in eye])
            lower = np.array([-self.support(-e) for e in eye])
            upper.setflags(write=False)
            lower.setflags(write=False)
            self._bbox = (lower, upper)
        return self._bbox

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise DimensionMismatch(f"point of length {x.shape[0]} for a {self.dim}-dimensional set")
        if tol < 0:
            raise ValueError("tol must be non-negative")
        return bool(np.all(self._F @ x <= self._f + tol * (1.0 + np.abs(self._f))))

    def vertices(self) -> np.ndarray:
        """All vertices as rows of an ``(M, n)`` array.

        Every ``n``-subset of facets is solved as an active set; feasible
        solutions are kept and merged at ``1e-9`` scaled distance.
        """
        if self._vertices is None:
            self._vertices = _enumerate_vertices(self)
            self._vertices.setflags(write=False)
        return self._vertices

    def scaled(self, alpha: float) -> "Polytope":
        """``{x : F x <= alpha f}``."""
        return Polytope(self._F, alpha * self._f)


def _enumerate_vertices(P: Polytope, chunk: int = 20000) -> np.ndarray:
    lower, upper = P.bounding_box()
    n, F, f = P.dim, P.normals, P.offsets
    if np.any(upper - lower <= VERTEX_TOL * (1.0 + np.abs(upper) + np.abs(lower))):
        raise DegenerateSet("polytope is not full-dimensional")
    scale = max(1.0, float(np.abs(np.concatenate([lower, upper])).max()))
    feas_tol = VERTEX_TOL * (1.0 + np.abs(f))

    found = []
    combos = itertools.combinations(range(P.n_facets), n)
    while True:
        batch = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if batch.size == 0:
            break
        M = F[batch]
        rhs = f[batch]
        det = np.linalg.det(M)
        row_norms = np.prod(np.linalg.norm(M, axis=2), axis=1)
        ok = np.abs(det) > 1e-12 * row_norms
        if not np.any(ok):
            continue
        pts = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
        feasible = np.all(pts @ F.T <= f + feas_tol, axis=1)
        found.append(pts[feasible])
    pts = np.vstack(found) if found else np.zeros((0, n))
    if pts.shape[0] == 0:
        raise DegenerateSet("no vertices found")

    # merge duplicates (degenerate vertices are hit by several bases)
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    keep = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= VERTEX_TOL * scale for q in keep):
            keep.append(p)
    verts = np.array(keep) + 0.0  # drop negative zeros
    spread = verts - verts.mean(axis=0)
    if np.linalg.matrix_rank(spread, tol=VERTEX_TOL * scale) < n:
        raise DegenerateSet("polytope is not full-dimensional")
    return verts


def box(lower, upper) -> Polytope:
    """Axis-aligned box ``lower <= x <= upper``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise DimensionMismatch("lower and upper bounds differ in length")
    if not np.all(lower < upper):
        raise InvalidBounds(f"need lower < upper component-wise, got {lower} and {upper}")
    n = lower.size
    eye = np.eye(n)
    P = Polytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]), check=False)
    P._bbox = (lower.copy(), upper.copy())
    P._bbox[0].setflags(write=False)
    P._bbox[1].setflags(write=False)
    return P
