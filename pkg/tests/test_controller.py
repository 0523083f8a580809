import json

import cvxpy as cp
import numpy as np
import pytest

from rmpc import conic
from rmpc.controller import ControllerConfig, RobustMPC, build_problem, certify_vertices, offline_init
from rmpc.dynamics import DiscreteLTI, impulse_stacks
from rmpc.exceptions import HorizonTooLarge, RecedingHorizonInfeasible, TableMismatch
from rmpc.polytope import box
from rmpc.satellite import SatelliteParams, build_satellite
from rmpc.sim import run_closed_loop
from rmpc.tightening import build_table
from rmpc.uncertainty import dependent_coefficient, sample, zero_model


def nominal_mpc_oracle(cfg, x0):
    """Plain nominal MPC written directly in cvxpy: state recursion, G x <= g, H u <= h."""
    sys, N = cfg.system, cfg.N
    Su, Sx = cfg.input_scale, cfg.state_scale
    u = cp.Variable((N, sys.m))
    cons, cost, x = [], 0, x0
    for t in range(N):
        cons.append(cfg.U.normals @ u[t] <= cfg.U.offsets)
        x = sys.A @ x + sys.B @ u[t]
        cons.append(cfg.I.normals @ x <= cfg.I.offsets)
        cost = cost + cp.sum_squares(cp.multiply(1 / Su, u[t])) + cfg.lam * cp.sum_squares(cp.multiply(1 / Sx, x))
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return u.value, prob.value


def worst_successor_margin(cfg, x, u):
    """min_j (g_j - max_{p in P(x,u)} G_j (A x + B u + D p)) from the support function directly."""
    sys, model, I = cfg.system, cfg.model, cfg.I
    radii = model.radii(x, u)
    margins = []
    for Gj, gj in zip(I.normals, I.offsets):
        v = sys.D.T @ Gj
        worst = Gj @ (sys.A @ x + sys.B @ u)
        if np.any(model.W):
            worst += model.Wpoly.support(model.W.T @ v)
        for term, r in zip(model.terms, radii):
            worst += r * dependent_coefficient(v, term.L, term.ball_norm)
        margins.append(gj - worst)
    return np.array(margins)


@pytest.fixture(scope="module")
def small_box_sat():
    return build_satellite(SatelliteParams(pos_bound=0.05))


def certify(problem, variant, N):
    cfg = problem.config(variant, N)
    stacks = impulse_stacks(cfg.system, N)
    return certify_vertices(cfg, stacks, build_table(cfg.I, stacks, cfg.model))


# --- problem structure ---------------------------------------------------

def test_row_counts_satellite(dependent_ctrl):
    prog = dependent_ctrl.build_problem(np.zeros(6))
    assert prog.meta["invariance_rows"] == 4 * 12
    assert prog.meta["input_rows"] == 4 * 2 * 3


@pytest.mark.parametrize("N", [2, 4, 8])
def test_invariance_rows_linear_in_N(sat, N):
    cfg = sat.config("dependent", N)
    ctrl = RobustMPC(cfg)
    assert ctrl.build_problem(np.zeros(6)).meta["invariance_rows"] == 12 * N


def test_zero_state_zero_input(dependent_ctrl):
    prog = dependent_ctrl.build_problem(np.zeros(6))
    # at x = 0 the all-zero point (inputs, epigraphs, cost) is feasible
    assert prog.residual(np.zeros(prog.n_vars)) == 0.0
    u, diag = dependent_ctrl.step(np.zeros(6))
    assert diag.status == "Optimal"
    np.testing.assert_allclose(u, 0.0, atol=1e-9)
    assert diag.objective == pytest.approx(0.0, abs=1e-8)


def test_vertices_optimal_and_far_state_infeasible(dependent_ctrl):
    V = dependent_ctrl.I.vertices()
    for v in V[::9]:
        _, diag = dependent_ctrl.step(v)
        assert diag.status == "Optimal"
        assert np.all(diag.margins >= -1e-9)
    with pytest.raises(RecedingHorizonInfeasible) as info:
        dependent_ctrl.step(10 * V[0])
    np.testing.assert_array_equal(info.value.state, 10 * V[0])


def test_table_mismatch(sat, dependent_ctrl):
    other = sat.config("nominal")
    with pytest.raises(TableMismatch):
        build_problem(other, dependent_ctrl.stacks, dependent_ctrl.table, np.zeros(6))


def test_config_validation(sat):
    cfg = sat.config("dependent")
    with pytest.raises(ValueError):
        ControllerConfig(cfg.system, cfg.X, cfg.U, cfg.I, cfg.model, N=0)
    with pytest.raises(ValueError):
        ControllerConfig(cfg.system, cfg.X, cfg.U, cfg.I, cfg.model, N=4, lam=-1.0)
    with pytest.raises(ValueError):
        ControllerConfig(cfg.system, cfg.X, cfg.U, cfg.I, cfg.model, N=4, input_scale=[1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        cfg.with_invariant_set(cfg.X.scaled(1.5))
    np.testing.assert_allclose(cfg.input_scale, 2e-3)
    np.testing.assert_allclose(cfg.state_scale, [0.1] * 3 + [1e-3] * 3)


# --- certification --------------------------------------------------------

def test_certificate_default_passes(dependent_ctrl):
    cert = dependent_ctrl.certificate
    assert cert.passed and cert.mode == "CorollaryCheck" and cert.alpha == 1.0
    assert cert.n_vertices == 64 and cert.n_optimal == 64
    assert dependent_ctrl.I == dependent_ctrl.cfg.X
    data = json.loads(json.dumps(cert.to_dict()))
    assert data["vertices_optimal"] == 64 and len(data["per_vertex"]) == 64


def test_conservative_small_box(small_box_sat):
    assert not certify(small_box_sat, "conservative", 4).passed
    assert not certify(small_box_sat, "conservative", 3).passed
    assert certify(small_box_sat, "conservative", 2).passed


@pytest.mark.xfail(strict=True, reason="fails by 0.4 mm at 8 of 64 vertices; see the decisions ledger")
def test_dependent_small_box_n4(small_box_sat):
    assert certify(small_box_sat, "dependent", 4).passed


def test_certificate_passed_iff_all_optimal(small_box_sat):
    cert = certify(small_box_sat, "conservative", 3)
    statuses = [s for _, s, _ in cert.per_vertex]
    assert cert.passed == all(s == "Optimal" for s in statuses)
    assert any(s == "Infeasible" for s in statuses)


# --- offline initialization ----------------------------------------------

def test_offline_zero_model_trivial(sat):
    cfg = sat.config("dependent").with_model(zero_model(sat.model))
    ctrl = offline_init(cfg)
    assert ctrl.certificate.passed and ctrl.certificate.alpha == 1.0
    assert not np.any(ctrl.table.sigma) and not np.any(ctrl.table.kappa)


def test_offline_caches_table(sat, tmp_path):
    cfg = sat.config("dependent", 2)
    first = offline_init(cfg, cache_dir=tmp_path)
    files = list(tmp_path.glob("table-*.json"))
    assert len(files) == 1
    second = offline_init(cfg, cache_dir=tmp_path)
    np.testing.assert_array_equal(first.table.kappa, second.table.kappa)
    assert second.certificate.passed


def test_offline_shrinks_unstable_scalar():
    # x+ = 2x + u + p, |u| <= 1, |p| <= 0.1: [-a, a] is invariant iff 2a - 1 + 0.1 <= a, so a* = 0.9
    from rmpc.uncertainty import UncertaintyModel
    sys = DiscreteLTI(2 * np.eye(1), np.eye(1), np.eye(1))
    model = UncertaintyModel(np.eye(1), box([-0.1], [0.1]), ())
    X, U = box([-1.0], [1.0]), box([-1.0], [1.0])
    ctrl = offline_init(ControllerConfig(sys, X, U, X, model, N=2))
    cert = ctrl.certificate
    assert cert.passed and cert.mode == "TheoremCheck"
    assert 0.9 - 1e-3 <= cert.alpha <= 0.9
    np.testing.assert_allclose(ctrl.I.offsets, [cert.alpha, cert.alpha])
    bigger = ctrl.cfg.with_invariant_set(X.scaled(0.9 + 1e-3))
    assert not certify_vertices(bigger, ctrl.stacks, ctrl.table).passed


def test_offline_horizon_too_large():
    problem = build_satellite(SatelliteParams(w_max=50e-6))
    with pytest.raises(HorizonTooLarge):
        offline_init(problem.config("dependent", 4))


# --- properties -----------------------------------------------------------

def test_one_step_invariance_from_vertices(dependent_ctrl):
    cfg = dependent_ctrl.cfg
    I = dependent_ctrl.I
    rng = np.random.default_rng(3)
    for v in I.vertices():
        u, _ = dependent_ctrl.step(v)
        # exact worst case over P(x, u)
        assert worst_successor_margin(cfg, v, u).min() >= -1e-9
        for _ in range(50):
            p = sample(cfg.model, v, u, rng, "extreme")
            assert I.contains(cfg.system.step(v, u, p), 1e-7)


@pytest.mark.parametrize("strategy", ["uniform", "extreme"])
def test_recursive_feasibility(sat, dependent_ctrl, strategy):
    V = dependent_ctrl.I.vertices()
    rng = np.random.default_rng(11)
    for seed in range(3):
        x0 = rng.dirichlet(np.ones(len(V))) @ V if seed else V[rng.integers(len(V))]
        trace = run_closed_loop(sat.plant, dependent_ctrl, x0, 50, sat.model, strategy, seed)
        assert trace.violations == 0 and trace.feasible_flags.all()


def test_nominal_equivalence(sat, nominal_ctrl):
    cfg = nominal_ctrl.cfg
    lower, upper = cfg.I.bounding_box()
    rng = np.random.default_rng(5)
    for _ in range(15):
        x = rng.uniform(lower, upper)
        u, diag = nominal_ctrl.step(x)
        u_ref, f_ref = nominal_mpc_oracle(cfg, x)
        np.testing.assert_allclose(u, u_ref[0], atol=1e-6)
        assert diag.objective == pytest.approx(f_ref, rel=1e-6, abs=1e-8)


def test_zero_model_matches_nominal_program(sat, nominal_ctrl):
    # an explicitly zero dependent model yields the same optimum as the nominal variant
    cfg = sat.config("dependent").with_model(zero_model(sat.model))
    ctrl = RobustMPC(cfg)
    x = np.array([0.03, -0.05, 0.02, 2e-4, 5e-4, -1e-4])
    _, d1 = ctrl.step(x)
    _, d2 = nominal_ctrl.step(x)
    assert d1.objective == pytest.approx(d2.objective, abs=1e-8)


def test_conservatism_monotone(sat):
    dep = offline_init(sat.config("dependent", 3))
    con = offline_init(sat.config("conservative", 3))
    assert dep.I == con.I
    lower, upper = dep.I.bounding_box()
    rng = np.random.default_rng(9)
    for _ in range(30):
        x = rng.uniform(lower, upper)
        _, dd = dep.step(x)
        try:
            _, dc = con.step(x)
        except RecedingHorizonInfeasible:
            continue
        assert dc.objective >= dd.objective - 1e-7 * (1 + abs(dd.objective))


def test_solver_backends_agree(dependent_ctrl):
    x = dependent_ctrl.I.vertices()[5]
    prog = dependent_ctrl.build_problem(x)
    a = conic.solve(prog, backend="clarabel")
    b = conic.solve(prog, backend="cvxopt")
    assert a.objective == pytest.approx(b.objective, rel=1e-6, abs=1e-8)
    np.testing.assert_allclose(a.x[:12], b.x[:12], atol=1e-5)


def test_scalar_system_tightening_active():
    # x+ = x + u + p with |p| <= 0.5: the only admissible u keeps x + u within [-0.5, 0.5]
    from rmpc.uncertainty import UncertaintyModel
    sys = DiscreteLTI(np.eye(1), np.eye(1), np.eye(1))
    model = UncertaintyModel(np.eye(1), box([-0.5], [0.5]), ())
    X, U = box([-1.0], [1.0]), box([-2.0], [2.0])
    ctrl = offline_init(ControllerConfig(sys, X, U, X, model, N=1))
    u, diag = ctrl.step(np.array([1.0]))
    assert u[0] == pytest.approx(-0.5, abs=1e-6)
    assert diag.margins[0] == pytest.approx(0.0, abs=1e-6)
