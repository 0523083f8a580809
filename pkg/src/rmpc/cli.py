"""Command-line entry point: ``rmpc {certify,simulate,montecarlo}``.

Configuration is strict JSON (SI units, radians).  Every output carries the
hash of the validated configuration and the seed list.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .controller import ControllerConfig, RobustMPC, certify_vertices, offline_init
from .dynamics import DiscreteLTI, impulse_stacks
from .exceptions import HorizonTooLarge, RMPCError
from .polytope import Polytope, box
from .satellite import VARIANTS, SatelliteParams, build_satellite
from .sim import RUN_COLUMNS, Experiment, monte_carlo, run_closed_loop
from .tightening import build_table
from .uncertainty import DependencyTerm, UncertaintyModel, conservative_model, zero_model

logger = logging.getLogger("rmpc")

EXIT_OK, EXIT_NOT_CERTIFIED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

Variant = Literal["nominal", "conservative", "dependent"]
Norm = Literal["1", "2", "inf"]
_DEFAULTS = SatelliteParams()


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SatelliteSection(_Strict):
    mu: float = Field(_DEFAULTS.mu, gt=0)
    a: float = Field(_DEFAULTS.a, gt=0)
    Ts: float = Field(_DEFAULTS.Ts, gt=0)
    pos_bound: float = Field(_DEFAULTS.pos_bound, gt=0)
    vel_bound: float = Field(_DEFAULTS.vel_bound, gt=0)
    u_bound: float = Field(_DEFAULTS.u_bound, gt=0)
    w_max: float = Field(_DEFAULTS.w_max, ge=0)
    sigma_fix: float = Field(_DEFAULTS.sigma_fix, ge=0)
    sigma_rcs: float = Field(_DEFAULTS.sigma_rcs, ge=0)
    p_max: float = Field(_DEFAULTS.p_max, ge=0)
    v_max: float = Field(_DEFAULTS.v_max, ge=0)
    sigma_pos: float = Field(_DEFAULTS.sigma_pos, ge=0)
    sigma_vel: float = Field(_DEFAULTS.sigma_vel, ge=0)
    N: int = Field(_DEFAULTS.N, ge=1)
    lam: float = Field(_DEFAULTS.lam, ge=0)

    def params(self) -> SatelliteParams:
        return SatelliteParams(**self.model_dump())


class PolytopeSpec(_Strict):
    """Either ``lower``/``upper`` (a box) or ``normals``/``offsets``."""

    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None
    normals: Optional[list[list[float]]] = None
    offsets: Optional[list[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        is_box = self.lower is not None or self.upper is not None
        is_h = self.normals is not None or self.offsets is not None
        if is_box == is_h:
            raise ValueError("give either lower/upper or normals/offsets")
        if is_box and (self.lower is None or self.upper is None or len(self.lower) != len(self.upper)):
            raise ValueError("lower and upper must both be given with equal length")
        if is_h and (self.normals is None or self.offsets is None or len(self.normals) != len(self.offsets)):
            raise ValueError("normals and offsets must both be given with one offset per row")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower) if self.lower is not None else len(self.normals[0])

    def build(self) -> Polytope:
        if self.lower is not None:
            return box(self.lower, self.upper)
        return Polytope(self.normals, self.offsets)


class TermSpec(_Strict):
    L: list[list[float]]
    ball_norm: Norm = "2"
    c0: float = Field(0.0, ge=0)
    Fx: Optional[list[list[float]]] = None
    state_norm: Norm = "2"
    cx: float = Field(0.0, ge=0)
    Fu: Optional[list[list[float]]] = None
    input_norm: Norm = "2"
    cu: float = Field(0.0, ge=0)


class MatricesSection(_Strict):
    A: list[list[float]]
    B: list[list[float]]
    D: list[list[float]]
    X: PolytopeSpec
    U: PolytopeSpec
    W: list[list[float]]
    Wpoly: PolytopeSpec
    terms: list[TermSpec] = []
    N: int = Field(4, ge=1)
    lam: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _dimensions(self):
        problems = []
        n = len(self.A)
        if any(len(row) != n for row in self.A):
            problems.append("A must be square")
        m = len(self.B[0]) if self.B else 0
        d = len(self.D[0]) if self.D else 0
        for name, mat, cols in (("B", self.B, m), ("D", self.D, d)):
            if len(mat) != n or any(len(row) != cols for row in mat):
                problems.append(f"{name} must have {n} rows of equal length")
        if self.X.dim != n:
            problems.append(f"X has dimension {self.X.dim}, expected {n}")
        if self.U.dim != m:
            problems.append(f"U has dimension {self.U.dim}, expected {m}")
        if len(self.W) != d:
            problems.append(f"W must have {d} rows")
        elif self.W and any(len(row) != self.Wpoly.dim for row in self.W):
            problems.append(f"W must have {self.Wpoly.dim} columns to match Wpoly")
        for k, t in enumerate(self.terms):
            if len(t.L) != d:
                problems.append(f"terms.{k}.L must have {d} rows")
            if t.Fx is not None and any(len(row) != n for row in t.Fx):
                problems.append(f"terms.{k}.Fx must have {n} columns")
            if t.Fu is not None and any(len(row) != m for row in t.Fu):
                problems.append(f"terms.{k}.Fu must have {m} columns")
            if t.cx > 0 and t.Fx is None:
                problems.append(f"terms.{k}: cx > 0 needs Fx")
            if t.cu > 0 and t.Fu is None:
                problems.append(f"terms.{k}: cu > 0 needs Fu")
        if problems:
            raise ValueError("; ".join(problems))
        return self


class RunConfig(_Strict):
    problem: Literal["satellite", "matrices"] = "satellite"
    satellite: SatelliteSection = SatelliteSection()
    matrices: Optional[MatricesSection] = None
    variant: Variant = "dependent"
    horizon: Optional[int] = Field(None, ge=1, le=64)
    horizons: dict[Variant, int] = {}
    controllers: list[Variant] = list(VARIANTS)
    seeds: Optional[list[int]] = None
    runs: int = Field(50, ge=1)
    steps: int = Field(223, ge=1)
    strategy: Literal["uniform", "extreme"] = "uniform"
    starts: Literal["origin", "vertex"] = "origin"
    transient_cut: int = Field(56, ge=0)
    workers: int = Field(1, ge=1)
    out: str = "out"

    @model_validator(mode="after")
    def _consistent(self):
        problems = []
        if self.problem == "matrices" and self.matrices is None:
            problems.append("problem 'matrices' needs a matrices section")
        if self.problem == "satellite" and self.matrices is not None:
            problems.append("matrices section given but problem is 'satellite'")
        for v, N in self.horizons.items():
            if not 1 <= N <= 64:
                problems.append(f"horizons.{v} must be in 1..64")
        if self.seeds is not None and len(set(self.seeds)) != len(self.seeds):
            problems.append("seeds must be distinct")
        if not self.controllers or len(set(self.controllers)) != len(self.controllers):
            problems.append("controllers must be a non-empty list without repeats")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds is not None else list(range(self.runs))

    def horizon_for(self, variant: str) -> int:
        if variant in self.horizons:
            return self.horizons[variant]
        if self.horizon is not None:
            return self.horizon
        return self.satellite.N if self.problem == "satellite" else self.matrices.N

    def digest(self) -> str:
        canonical = self.model_dump(mode="json", exclude={"out", "workers"})
        return hashlib.sha256(json.dumps(canonical, sort_keys=True).encode()).hexdigest()


class ConfigError(RMPCError):
    """Unreadable or invalid configuration; ``errors`` lists every problem."""

    def __init__(self, kind: str, errors: list):
        self.kind = kind
        self.errors = errors
        super().__init__(f"{kind}: " + "; ".join(f"{e['loc']}: {e['msg']}" for e in errors))


def _errors(exc: ValidationError) -> list:
    return [{"loc": ".".join(str(p) for p in e["loc"]) or "<root>", "msg": e["msg"]} for e in exc.errors()]


def parse_config_text(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("ParseError", [{"loc": f"line {exc.lineno} column {exc.colno}", "msg": exc.msg}]) from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("ValidationError", _errors(exc)) from None


def parse_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("ParseError", [{"loc": str(path), "msg": exc.strerror or str(exc)}]) from None
    return parse_config_text(text)


def emit(cfg: RunConfig) -> str:
    return cfg.model_dump_json(indent=2)


def _override(cfg: RunConfig, **changes) -> RunConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    data = cfg.model_dump(mode="json")
    data.update(changes)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("ValidationError", _errors(exc)) from None


def _read_seed_list(value: str) -> list[int]:
    path = Path(value)
    text = path.read_text() if path.is_file() else value
    tokens = [t for t in text.replace("\n", ",").split(",") if t.strip() and not t.strip().startswith("#")]
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ConfigError("ValidationError", [{"loc": "seeds", "msg": f"not a list of integers: {value!r}"}]) from None


class _Problem:
    """Plant, true uncertainty and controller configurations for a RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        if cfg.problem == "satellite":
            sat = build_satellite(cfg.satellite.params())
            self.plant, self.X, self.U, self.model = sat.plant, sat.X, sat.U, sat.model
            self.Ts, self.lam, self.fuel_scale = sat.params.Ts, sat.params.lam, 1e3  # m/s -> mm/s
        else:
            mx = cfg.matrices
            self.plant = DiscreteLTI(np.array(mx.A), np.array(mx.B), np.array(mx.D))
            self.X, self.U = mx.X.build(), mx.U.build()
            terms = [DependencyTerm(**t.model_dump()) for t in mx.terms]
            self.model = UncertaintyModel(np.array(mx.W), mx.Wpoly.build(), tuple(terms))
            self.Ts, self.lam, self.fuel_scale = 1.0, mx.lam, 1.0

    def controller_config(self, variant: str) -> ControllerConfig:
        if variant == "dependent":
            model = self.model
        elif variant == "conservative":
            model = conservative_model(self.model, self.X, self.U)
        else:
            model = zero_model(self.model)
        return ControllerConfig(self.plant, self.X, self.U, self.X, model, self.cfg.horizon_for(variant), self.lam)


def _header(cfg: RunConfig, **extra) -> dict:
    head = {"rmpc_version": __version__, "config_hash": cfg.digest(), "seeds": ",".join(map(str, cfg.seed_list()))}
    head.update(extra)
    return head


def cmd_certify(cfg: RunConfig, out: Path) -> int:
    problem = _Problem(cfg)
    ccfg = problem.controller_config(cfg.variant)
    stacks = impulse_stacks(ccfg.system, ccfg.N)
    cert = certify_vertices(ccfg, stacks, build_table(ccfg.I, stacks, ccfg.model))
    data = _header(cfg, variant=cfg.variant, horizon=ccfg.N)
    data["certificate"] = cert.to_dict()
    path = out / f"certificate-{cfg.variant}-N{ccfg.N}.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    print(json.dumps({"passed": cert.passed, "vertices_optimal": cert.n_optimal,
                      "vertices_total": cert.n_vertices, "output": str(path)}))
    return EXIT_OK if cert.passed else EXIT_NOT_CERTIFIED


def _controller(problem: _Problem, variant: str, cache: Path) -> RobustMPC:
    try:
        return offline_init(problem.controller_config(variant), cache_dir=cache, name=variant)
    except HorizonTooLarge as exc:
        raise HorizonTooLarge(f"{variant}: {exc}; lower it with horizons.{variant} in the config") from None


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    problem = _Problem(cfg)
    ctrl = _controller(problem, cfg.variant, out / "cache")
    seed = cfg.seed_list()[0]
    if cfg.starts == "origin":
        x0 = np.zeros(problem.plant.n)
    else:
        V = ctrl.I.vertices()
        x0 = V[np.random.default_rng([seed, 7]).integers(len(V))]
    trace = run_closed_loop(problem.plant, ctrl, x0, cfg.steps, problem.model, cfg.strategy, seed, problem.Ts)
    path = out / f"trace-{cfg.variant}-seed{seed}.csv"
    trace.write_csv(path, _header(cfg, variant=cfg.variant, seed=seed, alpha=ctrl.certificate.alpha))
    print(json.dumps({"violations": trace.violations, "steps": trace.steps, "output": str(path)}))
    return EXIT_OK


def cmd_montecarlo(cfg: RunConfig, out: Path) -> int:
    if cfg.transient_cut + 2 > cfg.steps:
        raise ConfigError("ValidationError", [{"loc": "transient_cut", "msg": (
            f"leaves fewer than two points for the fuel fit with steps = {cfg.steps}")}])
    problem = _Problem(cfg)
    controllers = {v: _controller(problem, v, out / "cache") for v in cfg.controllers}
    exp = Experiment(problem.plant, problem.model, controllers, cfg.seed_list(), cfg.steps, problem.Ts,
                     cfg.strategy, cfg.starts, cfg.transient_cut, problem.fuel_scale, cfg.workers)
    stats = monte_carlo(exp)
    header = _header(cfg)
    stats.write_runs_csv(out / "runs.csv", header)
    extra = dict(header, horizons={v: c.cfg.N for v, c in controllers.items()},
                 alphas={v: c.certificate.alpha for v, c in controllers.items()},
                 fuel_units="mm/s/year" if cfg.problem == "satellite" else "input units/year")
    stats.write_json(out / "stats.json", extra)
    print(json.dumps({"result_hash": stats.result_hash(), "output": str(out)}))
    return EXIT_OK


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "montecarlo": cmd_montecarlo}

EPILOG = f"""\
outputs (all carry '# config_hash' and '# seeds' header lines or JSON keys):
  certify     certificate-<variant>-N<N>.json; exit 0 iff every vertex is Optimal, 1 otherwise
  simulate    trace-<variant>-seed<seed>.csv, columns: step, x0..x(n-1), u0..u(m-1), solve_ms
  montecarlo  runs.csv, columns: {', '.join(RUN_COLUMNS)}
              stats.json (schema_version, result_hash, per-controller summaries, Welch tests)

exit codes: 0 ok, 1 certification failed, 2 bad configuration, 3 runtime failure.
Errors are printed to stderr as JSON. RMPC_SOLVER_TOL sets the conic solver tolerance.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmpc", description=__doc__.splitlines()[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON run configuration (default: satellite defaults)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed-list", help="comma-separated seeds or a file of them")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--runs", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(kind: str, message: str, details=None, code: int = EXIT_RUNTIME) -> int:
    print(json.dumps({"error": kind, "message": message, "details": details or []}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        seeds = _read_seed_list(args.seed_list) if args.seed_list else None
        cfg = _override(cfg, out=args.out, variant=args.variant, runs=args.runs, steps=args.steps, seeds=seeds)
    except ConfigError as exc:
        return _fail(exc.kind, str(exc), exc.errors, EXIT_CONFIG)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(exc.kind, str(exc), exc.errors, EXIT_CONFIG)
    except RMPCError as exc:
        return _fail(type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail("IOError", str(exc))


if __name__ == "__main__":
    sys.exit(main())
