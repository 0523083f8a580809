"""Solver-agnostic conic programs.

A :class:`ConicProgram` collects affine expressions ``F x + g`` constrained to
lie in a cone (zero, non-negative orthant or second-order cone) and a linear
objective.  Backends translate that data to a concrete interior-point solver;
:class:`ClarabelBackend` is the default and :class:`CvxoptBackend` is kept as a
drop-in alternative so the rest of the package only ever talks to
:func:`solve`.

Quadratic costs are expressed through :func:`add_square_epigraph`, which keeps
every program in the SOCP class.
"""
from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .exceptions import DimensionMismatch, SolverError

ZERO, NONNEG, SOC = "zero", "nonneg", "soc"

DEFAULT_TOL = 1e-8
# the duality gap is closed further than feasibility: with a linear objective
# on a squared-norm epigraph the minimizer is only accurate to ~sqrt(gap)
GAP_FACTOR = 1e-2


def default_tol() -> float:
    """Solver tolerance, overridable through ``RMPC_SOLVER_TOL``."""
    value = os.environ.get("RMPC_SOLVER_TOL")
    return float(value) if value else DEFAULT_TOL


class Affine:
    """Vector-valued affine expression ``coef @ x + const``.

    ``coef`` may have fewer columns than the program has variables; missing
    trailing columns are zero.  This lets expressions created early keep
    working after auxiliary variables are appended.
    """

    __array_ufunc__ = None  # make ``ndarray @ Affine`` defer to __rmatmul__

    def __init__(self, coef, const=None):
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        self.coef = coef
        if const is None:
            const = np.zeros(coef.shape[0])
        self.const = np.asarray(const, dtype=float).reshape(-1)
        if self.const.shape[0] != coef.shape[0]:
            raise DimensionMismatch("coefficient rows and constant length differ")

    @classmethod
    def constant(cls, value) -> "Affine":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.zeros((value.size, 0)), value)

    def __len__(self):
        return self.coef.shape[0]

    @property
    def width(self) -> int:
        return self.coef.shape[1]

    def padded(self, n: int) -> np.ndarray:
        if self.width > n:
            raise DimensionMismatch("expression references unknown variables")
        if self.width == n:
            return self.coef
        out = np.zeros((len(self), n))
        out[:, : self.width] = self.coef
        return out

    def _lift(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        other = np.broadcast_to(np.asarray(other, dtype=float), (len(self),))
        return Affine.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        if len(other) != len(self):
            raise DimensionMismatch(f"cannot add expressions of length {len(self)} and {len(other)}")
        n = max(self.width, other.width)
        return Affine(self.padded(n) + other.padded(n), self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef, -self.const)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        scalar = np.asarray(scalar, dtype=float)
        if scalar.ndim == 0:
            return Affine(self.coef * scalar, self.const * scalar)
        # element-wise scaling of the rows
        return Affine(self.coef * scalar[:, None], self.const * scalar)

    __rmul__ = __mul__

    def __rmatmul__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[1] != len(self):
            raise DimensionMismatch(f"matrix with {matrix.shape[1]} columns applied to expression of length {len(self)}")
        return Affine(matrix @ self.coef, matrix @ self.const)

    def __getitem__(self, key):
        idx = np.arange(len(self))[key]
        idx = np.atleast_1d(idx)
        return Affine(self.coef[idx], self.const[idx])

    def sum(self) -> "Affine":
        return Affine(self.coef.sum(axis=0, keepdims=True), [self.const.sum()])

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.padded(x.shape[0]) @ x + self.const


def vstack(exprs) -> Affine:
    exprs = [e if isinstance(e, Affine) else Affine.constant(e) for e in exprs]
    n = max(e.width for e in exprs)
    return Affine(np.vstack([e.padded(n) for e in exprs]), np.concatenate([e.const for e in exprs]))


@dataclass
class ConicProgram:
    """Minimize ``objective`` subject to ``expr in cone`` for each block."""

    names: list = field(default_factory=list)
    blocks: list = field(default_factory=list)  # (cone, Affine)
    objective: Affine | None = None
    warm_start: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_variables(self, n: int, name: str) -> Affine:
        start = self.n_vars
        if n == 1:
            self.names.append(name)
        else:
            self.names.extend(f"{name}[{k}]" for k in range(n))
        coef = np.zeros((n, start + n))
        coef[:, start:] = np.eye(n)
        return Affine(coef)

    def add_constraint(self, expr: Affine, cone: str) -> None:
        if cone not in (ZERO, NONNEG, SOC):
            raise ValueError(f"unknown cone {cone!r}")
        if len(expr) == 0:
            return
        if cone == SOC and len(expr) < 2:
            raise DimensionMismatch("second-order cone needs at least 2 rows")
        expr.padded(self.n_vars)  # reject references to unknown variables early
        self.blocks.append((cone, expr))

    def add_nonneg(self, expr: Affine) -> None:
        self.add_constraint(expr, NONNEG)

    def add_zero(self, expr: Affine) -> None:
        self.add_constraint(expr, ZERO)

    def add_soc(self, expr: Affine) -> None:
        """Constrain ``expr[0] >= ||expr[1:]||_2``."""
        self.add_constraint(expr, SOC)

    def minimize(self, expr: Affine) -> None:
        if len(expr) != 1:
            raise DimensionMismatch("objective must be scalar")
        self.objective = expr

    def rows(self, cone: str | None = None) -> int:
        return sum(len(e) for c, e in self.blocks if cone is None or c == cone)

    def cone_blocks(self, cone: str) -> list:
        return [len(e) for c, e in self.blocks if c == cone]

    def assemble(self):
        """Return ``(c, c0, F, g, cones)`` with ``F x + g`` stacked over blocks."""
        n = self.n_vars
        if self.objective is None:
            c, c0 = np.zeros(n), 0.0
        else:
            c, c0 = self.objective.padded(n)[0], float(self.objective.const[0])
        if not np.all(np.isfinite(c)):
            raise ValueError("objective is not finite")
        if self.blocks:
            F = np.vstack([e.padded(n) for _, e in self.blocks])
            g = np.concatenate([e.const for _, e in self.blocks])
        else:
            F, g = np.zeros((0, n)), np.zeros(0)
        cones = [(cone, len(e)) for cone, e in self.blocks]
        return c, c0, F, g, cones

    def residual(self, x) -> float:
        """Largest cone violation of ``x``, measured relative to ``1 + |g|``."""
        _, _, F, g, cones = self.assemble()
        s = F @ x + g
        worst, row = 0.0, 0
        for cone, dim in cones:
            block, scale = s[row:row + dim], 1.0 + np.abs(g[row:row + dim]).max()
            if cone == ZERO:
                viol = np.abs(block).max()
            elif cone == NONNEG:
                viol = max(0.0, -block.min())
            else:
                viol = max(0.0, np.linalg.norm(block[1:]) - block[0])
            worst = max(worst, viol / scale)
            row += dim
        return worst

    def to_json(self) -> str:
        """Self-describing debug dump of the program data."""
        c, c0, F, g, cones = self.assemble()
        rows, start = [], 0
        for cone, dim in cones:
            rows.append({
                "cone": cone,
                "dim": dim,
                "coef": F[start:start + dim].tolist(),
                "const": g[start:start + dim].tolist(),
            })
            start += dim
        return json.dumps({
            "variables": self.names,
            "objective": {"coef": c.tolist(), "const": c0},
            "constraints": rows,
        }, indent=1)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class Solution:
    status: Status
    x: np.ndarray | None
    objective: float
    solve_time: float
    iterations: int = 0
    certificate: np.ndarray | None = None
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, expr: Affine) -> np.ndarray:
        if self.x is None:
            raise SolverError(f"no primal values (status {self.status.value})")
        return expr.value(self.x)


class ClarabelBackend:
    name = "clarabel"

    def solve(self, prog: ConicProgram, tol: float) -> Solution:
        import clarabel

        c, c0, F, g, cones = prog.assemble()
        n = prog.n_vars
        # clarabel form: A x + s = b, s in K  with  s = F x + g
        A = sparse.csc_matrix(-F)
        kinds = {
            ZERO: clarabel.ZeroConeT,
            NONNEG: clarabel.NonnegativeConeT,
            SOC: clarabel.SecondOrderConeT,
        }
        merged = []
        for cone, dim in cones:
            if merged and merged[-1][0] == cone and cone != SOC:
                merged[-1][1] += dim
            else:
                merged.append([cone, dim])
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = GAP_FACTOR * tol
        settings.tol_gap_rel = GAP_FACTOR * tol
        settings.tol_feas = tol
        settings.tol_infeas_abs = tol
        settings.tol_infeas_rel = tol
        P = sparse.csc_matrix((n, n))
        start = time.perf_counter()
        solver = clarabel.DefaultSolver(P, c, A, g, [kinds[k](d) for k, d in merged], settings)
        result = solver.solve()
        elapsed = time.perf_counter() - start

        status_name = str(result.status)
        x = np.asarray(result.x, dtype=float)
        if status_name in ("Solved", "AlmostSolved"):
            if status_name == "Solved" or prog.residual(x) <= 10 * tol:
                return Solution(Status.OPTIMAL, x, float(c @ x + c0), elapsed, result.iterations, backend=self.name)
            status = Status.NUMERICAL_FAILURE
        elif status_name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return Solution(Status.INFEASIBLE, None, np.inf, elapsed, result.iterations,
                            certificate=np.asarray(result.z), backend=self.name)
        elif status_name in ("DualInfeasible", "AlmostDualInfeasible"):
            return Solution(Status.UNBOUNDED, None, -np.inf, elapsed, result.iterations, backend=self.name)
        else:
            status = Status.NUMERICAL_FAILURE
        return Solution(status, None, np.nan, elapsed, result.iterations, backend=self.name)


class CvxoptBackend:
    name = "cvxopt"

    def solve(self, prog: ConicProgram, tol: float) -> Solution:
        import cvxopt
        from cvxopt import solvers

        c, c0, F, g, cones = prog.assemble()
        rows = np.cumsum([0] + [d for _, d in cones])
        blocks = {ZERO: [], NONNEG: [], SOC: []}
        for (cone, dim), r in zip(cones, rows[:-1]):
            blocks[cone].append(np.arange(r, r + dim))
        zero_idx = np.concatenate(blocks[ZERO]) if blocks[ZERO] else np.zeros(0, int)
        ineq_idx = np.concatenate(blocks[NONNEG] + blocks[SOC]) if blocks[NONNEG] or blocks[SOC] else np.zeros(0, int)
        dims = {"l": sum(len(b) for b in blocks[NONNEG]), "q": [len(b) for b in blocks[SOC]], "s": []}

        def mat(a):
            return cvxopt.matrix(np.ascontiguousarray(a, dtype=float))

        kwargs = {}
        if zero_idx.size:
            kwargs["A"] = mat(F[zero_idx])
            kwargs["b"] = mat(-g[zero_idx])
        options = {"show_progress": False, "abstol": max(GAP_FACTOR * tol, 1e-12),
                   "reltol": max(GAP_FACTOR * tol, 1e-12),
                   "feastol": max(tol, 1e-10), "maxiters": 200}
        start = time.perf_counter()
        try:
            res = solvers.conelp(mat(c), mat(-F[ineq_idx]), mat(g[ineq_idx]), dims, options=options, **kwargs)
        except (ValueError, ArithmeticError):
            elapsed = time.perf_counter() - start
            return Solution(Status.NUMERICAL_FAILURE, None, np.nan, elapsed, backend=self.name)
        elapsed = time.perf_counter() - start
        status = res["status"]
        if status == "optimal" or (status == "unknown" and res["x"] is not None
                                   and prog.residual(np.array(res["x"]).ravel()) <= 10 * tol):
            x = np.array(res["x"]).ravel()
            return Solution(Status.OPTIMAL, x, float(c @ x + c0), elapsed, res["iterations"], backend=self.name)
        if status == "primal infeasible":
            return Solution(Status.INFEASIBLE, None, np.inf, elapsed, res["iterations"], backend=self.name)
        if status == "dual infeasible":
            return Solution(Status.UNBOUNDED, None, -np.inf, elapsed, res["iterations"], backend=self.name)
        return Solution(Status.NUMERICAL_FAILURE, None, np.nan, elapsed, res["iterations"], backend=self.name)


BACKENDS = {"clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}
_default_backend = ClarabelBackend()


def solve(prog: ConicProgram, tol: float | None = None, backend=None) -> Solution:
    """Solve ``prog`` with ``backend`` (Clarabel unless given)."""
    if tol is None:
        tol = default_tol()
    if backend is None:
        backend = _default_backend
    elif isinstance(backend, str):
        backend = BACKENDS[backend]()
    return backend.solve(prog, tol)


def add_norm_epigraph(prog: ConicProgram, expr: Affine, norm, name: str = "s") -> Affine:
    """Append ``s >= ||expr||`` to ``prog`` and return ``s``.

    ``norm`` is a :class:`rmpc.uncertainty.NormKind` (or its ``"1"``, ``"2"``,
    ``"inf"`` value).  The 2-norm uses one second-order cone, the infinity
    norm ``2 * len(expr)`` linear rows and the 1-norm ``len(expr)`` auxiliary
    magnitudes with sign-split rows plus a summing row.
    """
    kind = getattr(norm, "value", norm)
    s = prog.add_variables(1, name)
    k = len(expr)
    if kind == "2":
        prog.add_soc(vstack([s, expr]))
    elif kind == "inf":
        ones = np.ones((k, 1))
        prog.add_nonneg(vstack([ones @ s - expr, ones @ s + expr]))
    elif kind == "1":
        a = prog.add_variables(k, f"{name}_abs")
        prog.add_nonneg(vstack([a - expr, a + expr]))
        prog.add_nonneg(s - a.sum())
    else:
        raise ValueError(f"unsupported norm {norm!r}")
    return s


def add_square_epigraph(prog: ConicProgram, expr: Affine, name: str = "tau") -> Affine:
    """Append ``tau >= ||expr||_2^2`` as a rotated cone and return ``tau``.

    Uses ``||(expr, (tau - 1)/2)||_2 <= (tau + 1)/2``.
    """
    tau = prog.add_variables(1, name)
    prog.add_soc(vstack([0.5 * tau + 0.5, expr, 0.5 * tau - 0.5]))
    return tau
