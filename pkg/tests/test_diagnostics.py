import math

import numpy as np
import pytest

from ipmocp import (ContinuationConfig, InteriorityError, MeshSolution, PRIMAL, StageDiagnostics,
                    boundedness_trail, cost, default_guess, penalized_cost,
                    reconstruct_multipliers, run_primal, stationarity_residual)
from ipmocp.diagnostics import (calibrate_mixed_margin, mixed_margin_holds, solution_multipliers,
                                trajectory_distance)
from ipmocp.problems import scalar_lq_problem

ULP = np.finfo(float).eps


def resting(problem, n=11):
    """x = (1, 0, 0), p = 0, u = 0 on a uniform mesh."""
    return default_guess(problem, PRIMAL, n)


def test_constant_constraint_gives_constant_multiplier(robbins):
    theta, eta = reconstruct_multipliers(robbins, resting(robbins), 0.1)
    np.testing.assert_array_equal(theta, 0.1)
    np.testing.assert_array_equal(eta, 0.1)


def test_barrier_identity_on_solution(robbins, primal_run):
    sol, eps = primal_run.solution, primal_run.eps
    theta, eta = reconstruct_multipliers(robbins, sol, eps)
    g = -sol.y[:1]
    u = sol.z[:1]
    c = np.vstack([u - 1, -u - 1])
    assert np.max(np.abs(theta * g + eps)) <= 4 * ULP * eps
    assert np.max(np.abs(eta * c + eps)) <= 4 * ULP * eps


def test_reconstruction_rejects_boundary_point(robbins):
    sol = resting(robbins)
    sol.y[0, 4] = 0.0
    with pytest.raises(InteriorityError) as info:
        reconstruct_multipliers(robbins, sol, 0.1)
    assert info.value.node == 4 and info.value.kind == "g"


def test_primal_dual_multipliers_are_carried(robbins, primal_dual_run):
    sol = primal_dual_run.solution
    theta, eta = solution_multipliers(robbins, sol, primal_dual_run.eps)
    assert theta is not None
    np.testing.assert_array_equal(theta, sol.z[1:2])
    np.testing.assert_array_equal(eta, sol.z[2:])


def test_cost_of_resting_trajectory(robbins):
    # x1 = 1 on [0, 6], no barrier term at g = -1 and c = -1
    sol = resting(robbins)
    assert cost(robbins, sol) == pytest.approx(6.0, rel=1e-15)
    assert penalized_cost(robbins, sol, 0.3) == pytest.approx(6.0, rel=1e-15)


def test_penalized_cost_off_interior_is_infinite(robbins):
    sol = resting(robbins)
    sol.z[0] = 1.0
    assert penalized_cost(robbins, sol, 0.1) == math.inf


def test_complementarity_integral_at_small_eps(robbins, matched_solutions):
    primal, _ = matched_solutions
    theta, eta = reconstruct_multipliers(robbins, primal, 1e-8)
    plain = stationarity_residual(robbins, primal, theta, eta, eps=0.0)
    # the integral itself is -eps T
    assert plain.complementarity_g[0] == pytest.approx(6e-8, rel=1e-10)
    assert plain.complementarity_g[0] <= 1e-7
    shifted = stationarity_residual(robbins, primal, theta, eta, eps=1e-8)
    assert shifted.complementarity_g[0] <= 1e-20


def test_lq_stationarity_is_pontryagin_defect():
    pr = scalar_lq_problem()
    r = run_primal(pr, ContinuationConfig(eps0=0.1, alpha=0.5, tol=0.02, mesh_points=21))
    rep = stationarity_residual(pr, r.solution, np.zeros((0, r.solution.n_nodes)),
                                np.zeros((0, r.solution.n_nodes)))
    tol = r.config.stage_tol(r.eps)
    assert rep.max <= tol
    assert rep.complementarity_g.size == 0


def test_multiplier_signs_on_robbins_stages(primal_run):
    for d in primal_run.completed:
        assert d.stationarity["sign"] == 0.0
        assert d.interior


def test_stage_records_are_finite(primal_run, primal_dual_run):
    for d in primal_run.completed + primal_dual_run.completed:
        numbers = [d.cost, d.penalized_cost, d.p_sup, d.p_jump, *d.g_margin, *d.c_margin,
                   *d.l1_theta, *d.l1_eta, *d.complementarity_theta, *d.complementarity_eta]
        assert all(np.isfinite(v) for v in numbers)
        assert all(v >= 0 for v in [d.p_sup, *d.l1_theta, *d.l1_eta, *d.complementarity_theta])
        assert d.mesh_size > 0 and d.newton_iterations > 0 and d.wall_time > 0


def test_state_margin_shrinks_but_stays_positive(primal_run):
    margins = np.array([d.g_margin[0] for d in primal_run.completed])
    assert np.all(margins > 0)
    q = margins.size // 4
    assert margins[-q:].max() < margins[:q].min()


def test_stationarity_reaches_solver_floor(primal_run):
    last = primal_run.completed[-1]
    tol = primal_run.config.stage_tol(last.eps)
    assert last.stationarity["hamiltonian"] <= 10 * tol
    assert last.stationarity["boundary"] <= tol


def _stage(k, l1, p=1.0):
    return StageDiagnostics(stage=k, eps=0.1 * 0.5 ** k, l1_theta=[l1], l1_eta=[], p_sup=p)


def test_divergent_trail_is_flagged():
    stages = [_stage(k, 1.0 + k ** 2) for k in range(12)]
    report = boundedness_trail(stages)
    assert not report.bounded
    assert not report["l1_theta[0]"].bounded
    assert report["p_sup"].bounded
    assert report["l1_theta[0]"].sup == 122.0


def test_bounded_trail_passes():
    stages = [_stage(k, 2.0 - 1 / (k + 1)) for k in range(12)]
    assert boundedness_trail(stages).bounded


def test_trail_needs_three_stages():
    with pytest.raises(ValueError):
        boundedness_trail([_stage(0, 1.0), _stage(1, 1.0)])


def test_rescue_and_failed_stages_are_ignored():
    stages = [_stage(k, 1.0) for k in range(6)]
    stages.insert(3, StageDiagnostics(stage=3, eps=1.0, status="failed"))
    extra = _stage(3, 1e6)
    extra.intermediate = True
    stages.insert(3, extra)
    assert boundedness_trail(stages).bounded


def test_unconstrained_trail_is_trivially_bounded():
    r = run_primal(scalar_lq_problem(), ContinuationConfig(eps0=0.1, alpha=0.5, tol=0.01, mesh_points=21))
    report = boundedness_trail(r)
    assert report.bounded
    assert [t.name for t in report.trails] == ["p_sup"]
    assert all(d.l1_theta == [] and d.l1_eta == [] for d in r.completed)


def test_mixed_margin_calibration():
    stages = [StageDiagnostics(stage=1, eps=0.08, c_margin=[0.2, 0.1]),
              StageDiagnostics(stage=2, eps=0.064, c_margin=[0.2, 0.09])]
    k_c = calibrate_mixed_margin(stages)
    assert k_c == pytest.approx(0.8)
    assert mixed_margin_holds(stages[1], k_c)
    assert not mixed_margin_holds(StageDiagnostics(stage=3, eps=0.064, c_margin=[0.07]), k_c)


def test_trajectory_distance():
    t = np.linspace(0, 1, 5)
    a = MeshSolution(t, np.vstack([t, t]), np.zeros((0, 5)), yp=np.ones((2, 5)))
    b = MeshSolution(np.linspace(0, 1, 3), np.vstack([np.linspace(0, 1, 3) + 0.5, np.zeros(3)]),
                     np.zeros((0, 3)), yp=np.vstack([np.ones(3), np.zeros(3)]))
    assert trajectory_distance(a, a) == 0.0
    assert trajectory_distance(a, b, slice(0, 1)) == pytest.approx(0.5)
    assert trajectory_distance(a, b) == trajectory_distance(b, a) == pytest.approx(1.0)


def test_diagnostics_serialize(primal_run):
    d = primal_run.completed[-1].to_dict()
    assert d["stage"] == 73 and d["status"] == "converged"
    assert set(d["stationarity"]) >= {"adjoint", "hamiltonian", "boundary", "sign"}
