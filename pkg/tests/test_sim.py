import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmpc.controller import offline_init
from rmpc.exceptions import InsufficientData, RecedingHorizonInfeasible
from rmpc.satellite import build_satellite
from rmpc.sim import JULIAN_YEAR, Experiment, Trace, fuel_rate, monte_carlo, run_closed_loop, welch
from rmpc.uncertainty import zero_model


def make_trace(inputs, Ts=100.0):
    inputs = np.asarray(inputs, float)
    steps, m = inputs.shape
    z = np.zeros(steps)
    return Trace(np.zeros((steps + 1, 6)), inputs, np.zeros((steps, 21)), z, np.ones(steps, bool),
                 np.ones(steps + 1, bool), 0, Ts)


class FailingAfter:
    """Wraps a controller and declares infeasibility from step ``k`` on."""

    def __init__(self, ctrl, k):
        self.ctrl, self.k, self.calls = ctrl, k, 0

    @property
    def I(self):
        return self.ctrl.I

    def step(self, x):
        self.calls += 1
        if self.calls > self.k:
            raise RecedingHorizonInfeasible("forced", state=x)
        return self.ctrl.step(x)


# --- fuel rate ---------------------------------------------------------------

def test_fuel_constant_magnitude():
    c = 1.5e-3
    u = np.tile([c * 0.6, 0.0, c * 0.8], (200, 1))
    assert fuel_rate(make_trace(u)) == pytest.approx(c * 315576, rel=1e-12)


def test_fuel_zero():
    assert fuel_rate(make_trace(np.zeros((50, 3)))) == 0.0


def test_fuel_transient_removed():
    # 30 large steps, then a steady magnitude of 1e-4 per step
    mags = np.concatenate([np.full(30, 5e-2), np.full(170, 1e-4)])
    u = np.column_stack([mags, np.zeros(200), np.zeros(200)])
    rate = fuel_rate(make_trace(u), transient_cut=30)
    assert rate == pytest.approx(1e-4 / 100.0 * JULIAN_YEAR, rel=1e-9)
    assert fuel_rate(make_trace(u)) > 10 * rate


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-6, 1e-2), Ts=st.floats(1.0, 500.0), n=st.integers(3, 100))
def test_fuel_linear_in_magnitude(c, Ts, n):
    u = np.tile([c, 0.0, 0.0], (n, 1))
    assert fuel_rate(make_trace(u, Ts)) == pytest.approx(c / Ts * JULIAN_YEAR, rel=1e-9)


def test_fuel_insufficient_data():
    with pytest.raises(InsufficientData):
        fuel_rate(make_trace(np.zeros((5, 3))), transient_cut=5)
    with pytest.raises(InsufficientData):
        fuel_rate(make_trace(np.zeros((5, 3))), transient_cut=10)


# --- closed loop -------------------------------------------------------------

def test_zero_uncertainty_equilibrium(sat, nominal_ctrl):
    trace = run_closed_loop(sat.plant, nominal_ctrl, np.zeros(6), 20, zero_model(sat.model), seed=1)
    assert not np.any(trace.disturbances)
    # the interior point solver returns zero up to round-off (~1e-20 m/s)
    np.testing.assert_allclose(trace.inputs, 0.0, atol=1e-15)
    np.testing.assert_allclose(trace.states, 0.0, atol=1e-15)


def test_vertex_start_extreme_no_violations(sat, dependent_ctrl):
    V = dependent_ctrl.I.vertices()
    trace = run_closed_loop(sat.plant, dependent_ctrl, V[17], 223, sat.model, "extreme", seed=4)
    assert trace.steps == 223 and trace.states.shape == (224, 6)
    assert trace.violations == 0 and trace.inside.all()
    assert trace.feasible_flags.all() and np.all(trace.solve_times > 0)


def test_same_seed_bit_identical(sat, dependent_ctrl):
    x0 = dependent_ctrl.I.vertices()[3]
    a = run_closed_loop(sat.plant, dependent_ctrl, x0, 30, sat.model, "uniform", seed=8)
    b = run_closed_loop(sat.plant, dependent_ctrl, x0, 30, sat.model, "uniform", seed=8)
    c = run_closed_loop(sat.plant, dependent_ctrl, x0, 30, sat.model, "uniform", seed=9)
    for name in ("states", "inputs", "disturbances"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.digest() == b.digest() != c.digest()


def test_replay_reproduces_states(sat, dependent_ctrl):
    x0 = dependent_ctrl.I.vertices()[40]
    trace = run_closed_loop(sat.plant, dependent_ctrl, x0, 60, sat.model, "extreme", seed=2)
    np.testing.assert_allclose(trace.replay(sat.plant), trace.states, rtol=0, atol=1e-12)


def test_start_outside_recorded(sat, dependent_ctrl):
    x0 = 1.001 * dependent_ctrl.I.vertices()[0]
    try:
        trace = run_closed_loop(sat.plant, dependent_ctrl, x0, 3, sat.model, seed=0)
    except RecedingHorizonInfeasible as exc:
        trace = exc.trace
    assert not trace.inside[0] and trace.violations >= 1


def test_infeasibility_attaches_partial_trace(sat, dependent_ctrl):
    ctrl = FailingAfter(dependent_ctrl, 7)
    with pytest.raises(RecedingHorizonInfeasible) as info:
        run_closed_loop(sat.plant, ctrl, np.zeros(6), 20, sat.model, seed=0)
    trace = info.value.trace
    assert trace.steps == 7 and trace.states.shape == (8, 6)
    np.testing.assert_allclose(trace.replay(sat.plant), trace.states, atol=1e-12)


def test_trace_csv(sat, dependent_ctrl, tmp_path):
    trace = run_closed_loop(sat.plant, dependent_ctrl, np.zeros(6), 5, sat.model, seed=0)
    path = tmp_path / "trace.csv"
    trace.write_csv(path, {"config_hash": "abc", "seed": 0})
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# config_hash: abc", "# seed: 0"]
    rows = list(csv.reader(lines[2:]))
    assert rows[0] == ["step", "x0", "x1", "x2", "x3", "x4", "x5", "u0", "u1", "u2", "solve_ms"]
    assert len(rows) == 1 + 6
    np.testing.assert_array_equal(np.array(rows[1:], float)[:, 1:7], trace.states)


# --- Monte Carlo ---------------------------------------------------------------

@pytest.fixture(scope="module")
def small_experiment():
    sat = build_satellite()
    ctrls = {
        "nominal": offline_init(sat.config("nominal"), name="nominal"),
        "dependent": offline_init(sat.config("dependent"), name="dependent"),
    }
    return Experiment(sat.plant, sat.model, ctrls, seeds=[3, 4, 5], steps=40, Ts=100.0,
                      strategy="extreme", starts="vertex", transient_cut=10, fuel_scale=1e3)


def test_monte_carlo_deterministic(small_experiment):
    a = monte_carlo(small_experiment)
    b = monte_carlo(small_experiment)
    assert a.result_hash() == b.result_hash()
    assert a.run_count == 3 and len(a.results) == 6
    for name in ("nominal", "dependent"):
        np.testing.assert_array_equal(a.fuel_rates(name), b.fuel_rates(name))
        assert a.summary[name]["runs"] == 3
        assert a.summary[name]["violations"] >= 0
    assert a.violations("dependent") == 0
    assert "nominal-dependent" in a.comparisons


def test_monte_carlo_shared_starts(small_experiment):
    from rmpc.sim import _start_state
    V = small_experiment.controllers["nominal"].I.vertices()
    starts = [_start_state(small_experiment, seed) for seed in small_experiment.seeds]
    for x0 in starts:
        assert any(np.array_equal(x0, v) for v in V)
    assert len({x0.tobytes() for x0 in starts}) > 1
    np.testing.assert_array_equal(starts[0], _start_state(small_experiment, small_experiment.seeds[0]))


def test_monte_carlo_worker_pool_matches_serial(small_experiment):
    from dataclasses import replace
    serial = monte_carlo(replace(small_experiment, seeds=[3, 4]))
    pooled = monte_carlo(replace(small_experiment, seeds=[3, 4], workers=2))
    assert serial.result_hash() == pooled.result_hash()


def test_monte_carlo_records_failures(small_experiment):
    from dataclasses import replace
    ctrls = dict(small_experiment.controllers)
    ctrls["broken"] = FailingAfter(ctrls["dependent"], 0)
    exp = replace(small_experiment, controllers=ctrls, seeds=[3])
    stats = monte_carlo(exp)
    broken = [r for r in stats.results if r.controller == "broken"]
    assert len(broken) == 1 and broken[0].failed and broken[0].violations >= 1
    assert "RecedingHorizonInfeasible" in broken[0].error
    assert stats.summary["broken"]["failed_runs"] == 1
    assert not any(r.failed for r in stats.results if r.controller != "broken")


def test_monte_carlo_outputs(small_experiment, tmp_path):
    stats = monte_carlo(small_experiment)
    stats.write_runs_csv(tmp_path / "runs.csv", {"config_hash": "h"})
    stats.write_json(tmp_path / "stats.json", {"config_hash": "h"})
    lines = (tmp_path / "runs.csv").read_text().splitlines()
    assert lines[0] == "# config_hash: h"
    assert lines[1] == "run_id,seed,controller,fuel_rate,violations,mean_solve_ms"
    assert len(lines) == 2 + 6
    data = json.loads((tmp_path / "stats.json").read_text())
    assert data["schema_version"] == 1 and data["config_hash"] == "h"
    assert data["result_hash"] == stats.result_hash()


def test_welch_matches_formula(rng):
    a, b = rng.normal(1.0, 1.0, 40), rng.normal(0.0, 2.0, 25)
    res = welch(a, b)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / np.sqrt(va + vb)
    assert res["t"] == pytest.approx(t, rel=1e-12)
    assert res["ci95"][0] < res["mean_difference"] < res["ci95"][1]
    same = welch(a, a + 1e-12)
    assert not same["significant_95"]
