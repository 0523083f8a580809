"""Closed-loop simulation and Monte Carlo experiments."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import DiscreteLTI
from .exceptions import InsufficientData, RecedingHorizonInfeasible, RMPCError
from .uncertainty import UncertaintyModel, sample

logger = logging.getLogger(__name__)

JULIAN_YEAR = 31_557_600.0  # s
STATS_SCHEMA_VERSION = 1
INSIDE_TOL = 1e-7


@dataclass
class Trace:
    states: np.ndarray        # (steps + 1, n)
    inputs: np.ndarray        # (steps, m)
    disturbances: np.ndarray  # (steps, d)
    solve_times: np.ndarray   # (steps,) seconds
    feasible_flags: np.ndarray
    inside: np.ndarray        # (steps + 1,) state in the invariant set
    seed: int
    Ts: float = 1.0

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def violations(self) -> int:
        """Number of recorded states outside the invariant set."""
        return int(np.count_nonzero(~self.inside))

    def replay(self, plant: DiscreteLTI) -> np.ndarray:
        x = [self.states[0]]
        for u, p in zip(self.inputs, self.disturbances):
            x.append(plant.step(x[-1], u, p))
        return np.array(x)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.states, self.inputs, self.disturbances, self.feasible_flags, self.inside):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def write_csv(self, path, header: dict | None = None) -> None:
        """``step, x0..x{n-1}, u0..u{m-1}, solve_ms`` with ``#`` comment header."""
        n, m = self.states.shape[1], self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}: {value}\n")
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["solve_ms"])
            for k in range(self.steps + 1):
                if k < self.steps:
                    u, ms = self.inputs[k], self.solve_times[k] * 1e3
                else:
                    u, ms = np.full(m, np.nan), np.nan
                writer.writerow([k] + [repr(float(v)) for v in self.states[k]]
                                + [repr(float(v)) for v in u] + [repr(float(ms))])


def run_closed_loop(plant: DiscreteLTI, controller, x0, steps: int, model: UncertaintyModel,
                    strategy: str = "uniform", seed: int = 0, Ts: float = 1.0) -> Trace:
    """Simulate ``steps`` closed-loop transitions of ``plant``.

    Each step asks ``controller.step(x)`` for an input, draws a disturbance
    from ``model`` at the current state and input, and propagates the plant.

    Raises
    ------
    RecedingHorizonInfeasible
        With the partial trace attached as ``exc.trace``.
    """
    rng = np.random.default_rng(seed)
    I = controller.I
    n, m, d = plant.n, plant.m, plant.d
    states = np.zeros((steps + 1, n))
    inputs = np.zeros((steps, m))
    dist = np.zeros((steps, d))
    times = np.zeros(steps)
    feasible = np.zeros(steps, dtype=bool)
    inside = np.zeros(steps + 1, dtype=bool)
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x
    inside[0] = I.contains(x, INSIDE_TOL)

    def partial(k):
        return Trace(states[:k + 1].copy(), inputs[:k].copy(), dist[:k].copy(), times[:k].copy(),
                     feasible[:k].copy(), inside[:k + 1].copy(), seed, Ts)

    for k in range(steps):
        try:
            u, diag = controller.step(x)
        except RecedingHorizonInfeasible as exc:
            exc.trace = partial(k)
            raise
        p = sample(model, x, u, rng, strategy)
        x = plant.step(x, u, p)
        inputs[k], dist[k], times[k], feasible[k] = u, p, diag.solve_time, True
        states[k + 1] = x
        inside[k + 1] = I.contains(x, INSIDE_TOL)
    return Trace(states, inputs, dist, times, feasible, inside, seed, Ts)


def fuel_rate(trace: Trace, transient_cut: int = 0) -> float:
    """Slope of cumulative ``sum |u|_2`` against time, per Julian year.

    Units are those of the inputs per year.  Only the points after
    ``transient_cut`` steps enter the least-squares fit.
    """
    mags = np.linalg.norm(trace.inputs, axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(mags)])
    time = np.arange(cumulative.size) * trace.Ts
    t, c = time[transient_cut:], cumulative[transient_cut:]
    if t.size < 2:
        raise InsufficientData(f"need at least two points after a cut of {transient_cut}, trace has {trace.steps} steps")
    slope = np.polyfit(t, c, 1)[0]
    return float(slope * JULIAN_YEAR)


@dataclass
class RunResult:
    run_id: int
    seed: int
    controller: str
    fuel_rate: float
    violations: int
    mean_solve_ms: float
    median_solve_ms: float
    failed: bool = False
    error: str = ""
    digest: str = ""
    solve_ms: np.ndarray | None = None

    def row(self) -> list:
        return [self.run_id, self.seed, self.controller, repr(self.fuel_rate), self.violations,
                repr(self.mean_solve_ms)]


RUN_COLUMNS = ["run_id", "seed", "controller", "fuel_rate", "violations", "mean_solve_ms"]


@dataclass
class Experiment:
    """Controllers x runs on a shared plant and uncertainty model.

    ``starts`` is ``"origin"`` or ``"vertex"`` (a seeded random vertex of the
    first controller's invariant set, shared across controllers).
    ``fuel_scale`` converts input units to the reported fuel units.
    """

    plant: DiscreteLTI
    model: UncertaintyModel
    controllers: dict
    seeds: list
    steps: int
    Ts: float
    strategy: str = "uniform"
    starts: str = "origin"
    transient_cut: int = 0
    fuel_scale: float = 1.0
    workers: int = 1


@dataclass
class MonteCarloStats:
    run_count: int
    results: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)

    def fuel_rates(self, controller: str) -> np.ndarray:
        return np.array([r.fuel_rate for r in self.results if r.controller == controller and not r.failed])

    def violations(self, controller: str) -> int:
        return sum(r.violations for r in self.results if r.controller == controller)

    def solve_ms(self, controller: str) -> np.ndarray:
        chunks = [r.solve_ms for r in self.results if r.controller == controller and r.solve_ms is not None]
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def result_hash(self) -> str:
        """Hash of the deterministic content (timings excluded)."""
        h = hashlib.sha256()
        for r in self.results:
            h.update(f"{r.run_id}|{r.seed}|{r.controller}|{r.fuel_rate!r}|{r.violations}|{r.failed}|{r.digest}".encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "schema_version": STATS_SCHEMA_VERSION,
            "run_count": self.run_count,
            "result_hash": self.result_hash(),
            "controllers": self.summary,
            "comparisons": self.comparisons,
        }

    def write_runs_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}: {value}\n")
            writer = csv.writer(fh)
            writer.writerow(RUN_COLUMNS)
            for r in self.results:
                writer.writerow(r.row())

    def write_json(self, path, extra: dict | None = None) -> None:
        data = self.to_dict()
        data.update(extra or {})
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)


def _start_state(exp: Experiment, seed: int) -> np.ndarray:
    if exp.starts == "origin":
        return np.zeros(exp.plant.n)
    if exp.starts == "vertex":
        first = next(iter(exp.controllers.values()))
        V = first.I.vertices()
        return V[np.random.default_rng([seed, 7]).integers(len(V))].copy()
    raise ValueError(f"unknown start mode {exp.starts!r}")


def _one_run(exp: Experiment, run_id: int, seed: int, name: str) -> RunResult:
    ctrl = exp.controllers[name]
    x0 = _start_state(exp, seed)
    try:
        trace = run_closed_loop(exp.plant, ctrl, x0, exp.steps, exp.model, exp.strategy, seed, exp.Ts)
        failed, error = False, ""
    except RMPCError as exc:
        trace = getattr(exc, "trace", None)
        failed, error = True, f"{type(exc).__name__}: {exc}"
        logger.warning("run %d (%s, seed %d) failed: %s", run_id, name, seed, error)
    if trace is None or trace.steps == 0:
        return RunResult(run_id, seed, name, np.nan, 1 if failed else 0, np.nan, np.nan, failed, error)
    violations = trace.violations + (1 if failed else 0)
    try:
        fuel = fuel_rate(trace, exp.transient_cut) * exp.fuel_scale
    except InsufficientData:
        fuel = np.nan
    ms = trace.solve_times * 1e3
    return RunResult(run_id, seed, name, fuel, violations, float(ms.mean()), float(np.median(ms)),
                     failed, error, trace.digest(), ms)


def _run_job(args):
    return _one_run(*args)


def welch(a, b) -> dict:
    """Welch's unequal-variance t-test of ``mean(a) - mean(b)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    res = stats.ttest_ind(a, b, equal_var=False)
    ci = res.confidence_interval(0.95)
    return {"mean_difference": float(a.mean() - b.mean()), "t": float(res.statistic),
            "p_value": float(res.pvalue), "ci95": [float(ci.low), float(ci.high)],
            "significant_95": bool(res.pvalue < 0.05)}


def monte_carlo(exp: Experiment) -> MonteCarloStats:
    """Run every controller on every seed; runs are independent given the seed."""
    jobs = [(exp, run_id, seed, name)
            for run_id, seed in enumerate(exp.seeds) for name in exp.controllers]
    if exp.workers > 1:
        with ProcessPoolExecutor(exp.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    out = MonteCarloStats(len(exp.seeds), results)
    for name in exp.controllers:
        fuel = out.fuel_rates(name)
        ms = out.solve_ms(name)
        out.summary[name] = {
            "runs": sum(r.controller == name for r in results),
            "failed_runs": sum(r.controller == name and r.failed for r in results),
            "violations": out.violations(name),
            "runs_with_violations": sum(r.controller == name and r.violations > 0 for r in results),
            "fuel_mean": float(fuel.mean()) if fuel.size else None,
            "fuel_std": float(fuel.std(ddof=1)) if fuel.size > 1 else None,
            "solve_ms_mean": float(ms.mean()) if ms.size else None,
            "solve_ms_median": float(np.median(ms)) if ms.size else None,
            "solve_ms_p95": float(np.percentile(ms, 95)) if ms.size else None,
        }
    names = list(exp.controllers)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            fa, fb = out.fuel_rates(a), out.fuel_rates(b)
            if fa.size > 1 and fb.size > 1:
                out.comparisons[f"{a}-{b}"] = welch(fa, fb)
    return out
