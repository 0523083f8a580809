"""Robust receding-horizon controller with precomputed tightening.

The online problem plans ``N`` inputs ``u_k .. u_{k+N-1}`` and requires, for
every facet ``j`` of the invariant set and every ``t = 1..N``::

    G_j x_bar[t] + sum_i sigma[j,t,i]
                 + sum_i sum_l kappa[j,t,i,l] * phi_l(x_bar[i], u[i])  <=  g_j

where ``x_bar`` is the nominal prediction.  Norms inside ``phi_l`` become
epigraph variables shared by every row that uses them; they may only
over-estimate, which is safe because ``kappa >= 0`` and ``phi`` is
non-decreasing.  The cost is the scaled quadratic
``sum_t |u_hat[t]|^2 + lam |x_hat[t+1]|^2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import conic
from .conic import Affine, ConicProgram, add_norm_epigraph, add_square_epigraph, vstack
from .dynamics import DiscreteLTI, ImpulseStacks, impulse_stacks
from .exceptions import DimensionMismatch, HorizonTooLarge, RecedingHorizonInfeasible, SolverError
from .polytope import Polytope
from .tightening import TighteningTable, build_table, table_key
from .uncertainty import UncertaintyModel

logger = logging.getLogger(__name__)


def _half_widths(P: Polytope) -> np.ndarray:
    lower, upper = P.bounding_box()
    return 0.5 * (upper - lower)


@dataclass(frozen=True)
class ControllerConfig:
    """Everything the online problem needs besides the offline tables.

    ``input_scale`` and ``state_scale`` default to the half-widths of the
    bounding boxes of ``U`` and ``I`` so scaled quantities reach +-1 on the
    boundary.
    """

    system: DiscreteLTI
    X: Polytope
    U: Polytope
    I: Polytope
    model: UncertaintyModel
    N: int
    lam: float = 0.0
    input_scale: np.ndarray | None = None
    state_scale: np.ndarray | None = None

    def __post_init__(self):
        sys = self.system
        if self.N < 1:
            raise ValueError(f"horizon must be at least 1, got {self.N}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.X.dim != sys.n or self.I.dim != sys.n or self.U.dim != sys.m:
            raise DimensionMismatch("constraint sets do not match the system dimensions")
        if self.model.d != sys.d:
            raise DimensionMismatch(f"uncertainty is {self.model.d}-dimensional, D has {sys.d} columns")
        for name, default in (("input_scale", self.U), ("state_scale", self.I)):
            value = getattr(self, name)
            value = _half_widths(default) if value is None else np.array(value, dtype=float).reshape(-1)
            expected = sys.m if name == "input_scale" else sys.n
            if value.shape != (expected,) or not np.all(value > 0):
                raise ValueError(f"{name} must hold {expected} positive entries")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.I is not self.X and not all(self.X.contains(v, 1e-9) for v in self.I.vertices()):
            raise ValueError("invariant set I must lie inside X")

    def with_invariant_set(self, I: Polytope) -> "ControllerConfig":
        return replace(self, I=I, state_scale=None)

    def with_model(self, model: UncertaintyModel) -> "ControllerConfig":
        return replace(self, model=model)


@dataclass
class Diagnostics:
    status: str
    objective: float
    solve_time: float
    inputs: np.ndarray | None = None
    margins: np.ndarray | None = None  # first-step slack per facet, physical units
    n_rows: int = 0


@dataclass
class _Problem:
    prog: ConicProgram
    u_hat: Affine
    m: int
    N: int
    input_scale: np.ndarray
    first_step_rows: Affine | None = None


def _build(cfg: ControllerConfig, stacks: ImpulseStacks, table: TighteningTable, x) -> _Problem:
    sys, N, m = cfg.system, cfg.N, cfg.system.m
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise DimensionMismatch(f"state of length {x.shape[0]}, expected {sys.n}")
    if stacks.N != N or table.N != N:
        raise ValueError(f"stacks/table horizon differs from the configured N={N}")
    table.check(table_key(cfg.I.normals, stacks, cfg.model))

    G, g = cfg.I.normals, cfg.I.offsets
    H, h = cfg.U.normals, cfg.U.offsets
    Su = cfg.input_scale
    prog = ConicProgram()
    u_hat = prog.add_variables(N * m, "u_hat")
    u = [Su * u_hat[i * m:(i + 1) * m] for i in range(N)]
    xbar = [Affine.constant(x)]
    for t in range(1, N + 1):
        xt = Affine.constant(stacks.powers[t] @ x)
        for i in range(t):
            xt = xt + stacks.BA[t][i] @ u[i]
        xbar.append(xt)

    h_scale = np.maximum(np.abs(h), np.abs(H) @ Su)
    for i in range(N):
        prog.add_nonneg((h - H @ u[i]) * (1.0 / h_scale))
    prog.meta["input_rows"] = N * len(h)

    # radius of every term at every stage, as an affine upper bound
    terms = cfg.model.terms
    used = table.kappa.max(axis=(0, 1)) > 0 if table.n_q else np.zeros((N, 0), bool)  # (i, l)
    phi = [[None] * len(terms) for _ in range(N)]
    for i in range(N):
        for l, term in enumerate(terms):
            expr = Affine.constant([term.c0])
            if not used[i, l]:
                phi[i][l] = expr
                continue
            if term.cx > 0:
                if i == 0:
                    expr = expr + term.cx * term.state_norm.of(term.Fx @ x)
                else:
                    c = max(term.state_norm.of(term.Fx @ cfg.state_scale), 1e-300)
                    s = add_norm_epigraph(prog, (term.Fx @ xbar[i]) * (1.0 / c), term.state_norm, f"sx[{i},{l}]")
                    expr = expr + (term.cx * c) * s
            if term.cu > 0:
                c = max(term.input_norm.of(term.Fu @ Su), 1e-300)
                s = add_norm_epigraph(prog, (term.Fu @ u[i]) * (1.0 / c), term.input_norm, f"su[{i},{l}]")
                expr = expr + (term.cu * c) * s
            phi[i][l] = expr

    g_scale = np.maximum(np.abs(g), np.abs(G) @ cfg.state_scale)
    first = None
    for t in range(1, N + 1):
        lhs = G @ xbar[t] + table.sigma[:, t - 1, :t].sum(axis=1)
        for i in range(t):
            for l in range(len(terms)):
                k = table.kappa[:, t - 1, i, l]
                if np.any(k):
                    lhs = lhs + k[:, None] @ phi[i][l]
        slack = g - lhs
        if t == 1:
            first = slack
        prog.add_nonneg(slack * (1.0 / g_scale))
    prog.meta["invariance_rows"] = N * len(g)

    z = [u_hat]
    if cfg.lam > 0:
        w = np.sqrt(cfg.lam) / cfg.state_scale
        z += [w * xbar[t] for t in range(1, N + 1)]
    tau = add_square_epigraph(prog, vstack(z))
    prog.minimize(tau)
    return _Problem(prog, u_hat, m, N, Su, first)


def build_problem(cfg: ControllerConfig, stacks: ImpulseStacks, table: TighteningTable, x) -> ConicProgram:
    """Assemble the online conic program at state ``x``."""
    return _build(cfg, stacks, table, x).prog


def _solve(cfg, stacks, table, x, tol=None):
    problem = _build(cfg, stacks, table, x)
    sol = conic.solve(problem.prog, tol=tol)
    return problem, sol


def step(cfg: ControllerConfig, stacks: ImpulseStacks, table: TighteningTable, x, tol=None):
    """First input of the optimal plan at ``x`` plus diagnostics."""
    problem, sol = _solve(cfg, stacks, table, x, tol)
    if sol.status is conic.Status.INFEASIBLE:
        raise RecedingHorizonInfeasible(f"no admissible input sequence at x = {np.asarray(x).tolist()}", state=x)
    if not sol.optimal:
        raise SolverError(f"online problem returned {sol.status.value}")
    u_hat = sol.value(problem.u_hat).reshape(cfg.N, cfg.system.m)
    inputs = u_hat * cfg.input_scale
    diag = Diagnostics(
        status=sol.status.value,
        objective=sol.objective,
        solve_time=sol.solve_time,
        inputs=inputs,
        margins=sol.value(problem.first_step_rows),
        n_rows=problem.prog.rows(),
    )
    return inputs[0], diag


@dataclass
class Certificate:
    passed: bool
    mode: str  # "CorollaryCheck" when I == X, else "TheoremCheck"
    per_vertex: list = field(default_factory=list)  # (vertex, status, objective)
    alpha: float = 1.0

    @property
    def n_vertices(self) -> int:
        return len(self.per_vertex)

    @property
    def n_optimal(self) -> int:
        return sum(status == conic.Status.OPTIMAL.value for _, status, _ in self.per_vertex)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "mode": self.mode,
            "alpha": self.alpha,
            "vertices_total": self.n_vertices,
            "vertices_optimal": self.n_optimal,
            "per_vertex": [
                {"vertex": np.asarray(v).tolist(), "status": s,
                 "objective": None if not np.isfinite(o) else float(o)}
                for v, s, o in self.per_vertex
            ],
        }


def certify_vertices(cfg: ControllerConfig, stacks: ImpulseStacks, table: TighteningTable,
                     tol=None, stop_early: bool = False) -> Certificate:
    """Solve the online problem at every vertex of ``cfg.I``.

    Passing means every vertex is feasible, which makes the problem
    recursively feasible on ``I``; with ``I == X`` this is the cheap check
    that ``X`` itself is robust controlled invariant.
    """
    mode = "CorollaryCheck" if cfg.I == cfg.X else "TheoremCheck"
    per_vertex = []
    for v in cfg.I.vertices():
        _, sol = _solve(cfg, stacks, table, v, tol)
        per_vertex.append((np.array(v), sol.status.value, sol.objective))
        if stop_early and not sol.optimal:
            break
    passed = len(per_vertex) == len(cfg.I.vertices()) and all(
        s == conic.Status.OPTIMAL.value for _, s, _ in per_vertex)
    return Certificate(passed, mode, per_vertex)


class RobustMPC:
    """A controller ready for online use: config, stacks, table, certificate."""

    def __init__(self, cfg: ControllerConfig, stacks: ImpulseStacks | None = None,
                 table: TighteningTable | None = None, certificate: Certificate | None = None,
                 name: str = "rmpc", tol: float | None = None):
        self.cfg = cfg
        self.stacks = stacks if stacks is not None else impulse_stacks(cfg.system, cfg.N)
        self.table = table if table is not None else build_table(cfg.I, self.stacks, cfg.model)
        self.certificate = certificate
        self.name = name
        self.tol = tol

    @property
    def I(self) -> Polytope:
        return self.cfg.I

    def build_problem(self, x) -> ConicProgram:
        return build_problem(self.cfg, self.stacks, self.table, x)

    def step(self, x):
        return step(self.cfg, self.stacks, self.table, x, self.tol)

    def certify(self, stop_early: bool = False) -> Certificate:
        cert = certify_vertices(self.cfg, self.stacks, self.table, self.tol, stop_early)
        self.certificate = cert
        return cert


def _load_or_build_table(cfg, stacks, cache_dir):
    key = table_key(cfg.I.normals, stacks, cfg.model)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"table-{key[:16]}.json"
        if path.exists():
            table = TighteningTable.load(path)
            if table.key == key:
                return table
    table = build_table(cfg.I, stacks, cfg.model)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.save(path)
    return table


def offline_init(cfg: ControllerConfig, cache_dir=None, name: str = "rmpc",
                 alpha_resolution: float = 1e-3, tol=None) -> RobustMPC:
    """Offline stage: certify ``I = X`` or shrink ``X`` until certified.

    The fallback bisects the largest ``alpha`` in ``(0, 1]`` such that
    ``{x : G x <= alpha g}`` passes vertex certification.  This is an inner
    approximation, not the maximal invariant set.

    Raises
    ------
    HorizonTooLarge
        If no shrink factor down to ``alpha_resolution`` certifies.
    """
    cfg = cfg.with_invariant_set(cfg.X) if cfg.I != cfg.X else cfg
    stacks = impulse_stacks(cfg.system, cfg.N)
    table = _load_or_build_table(cfg, stacks, cache_dir)
    ctrl = RobustMPC(cfg, stacks, table, name=name, tol=tol)
    cert = ctrl.certify(stop_early=True)
    if cert.passed:
        return ctrl
    logger.info("X is not certified with N=%d, shrinking", cfg.N)

    def attempt(alpha):
        c = RobustMPC(cfg.with_invariant_set(cfg.X.scaled(alpha)), stacks, table, name=name, tol=tol)
        cert = c.certify(stop_early=True)
        cert.alpha = alpha
        return c, cert

    lo, hi, best = 0.0, 1.0, None
    while hi - lo > alpha_resolution:
        mid = 0.5 * (lo + hi)
        c, cert = attempt(mid)
        if cert.passed:
            lo, best = mid, c
        else:
            hi = mid
    if best is None:
        raise HorizonTooLarge(f"N is too large: no shrunk invariant set certified for N={cfg.N}")
    # re-run the full certificate on the selected set
    best.certify()
    best.certificate.alpha = lo
    return best
