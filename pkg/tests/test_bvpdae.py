import io
import math
import time

import numpy as np
import pytest

from ipmocp import (BudgetError, BvpDaeSystem, ConfigurationError, InteriorityError, MeshSolution,
                    SingularJacobianError, SolverOptions, interpolate_onto, newton_step,
                    refine_mesh, solve)
from ipmocp.bvpdae import estimate_residuals

from oracles import constant_guess, exp_dae, growth_rate, harmonic, harmonic_guess


def bratu(lam=1.0):
    return BvpDaeSystem(
        2, 0, 0,
        rhs=lambda t, y, z, q: np.vstack([y[1], -lam * np.exp(y[0])]),
        alg=None,
        bc=lambda ya, yb, q: np.array([ya[0], yb[0]]),
    )


def layer(eps=1e-2):
    """eps y'' + y' = 0, y(0) = 1, y(1) = 0; boundary layer at t = 0."""
    return BvpDaeSystem(
        2, 0, 0,
        rhs=lambda t, y, z, q: np.vstack([y[1], -y[1] / eps]),
        alg=None,
        bc=lambda ya, yb, q: np.array([ya[0] - 1.0, yb[0]]),
    )


def layer_exact(t, eps=1e-2):
    return (np.exp(-t / eps) - np.exp(-1 / eps)) / (1 - np.exp(-1 / eps))


def test_oracle_suite_runtime():
    start = time.perf_counter()
    test_harmonic_oracle()
    test_exponential_dae_oracle()
    test_unknown_parameter_oracle()
    test_order_of_accuracy()
    assert time.perf_counter() - start < 5.0


def test_harmonic_oracle():
    sol = solve(harmonic(), harmonic_guess(11), tol=1e-8)
    tt = np.linspace(0, np.pi / 2, 1001)
    assert np.max(np.abs(sol.y_at(tt)[0] - np.sin(tt))) <= 1e-6
    assert sol.status == "converged" and sol.residual_norm <= 1e-8


def test_exponential_dae_oracle():
    sol = solve(exp_dae(), constant_guess(np.linspace(0, 1, 11), 1, 1, value=1.0), tol=1e-8)
    assert abs(sol.y[0, -1] - math.e) <= 1e-6
    np.testing.assert_allclose(sol.z, sol.y, atol=1e-8)


def test_unknown_parameter_oracle():
    guess = constant_guess(np.linspace(0, 1, 11), 1, nq=1, value=1.0)
    sol = solve(growth_rate(), guess, tol=1e-8)
    assert abs(sol.q[0] - 2.0) <= 1e-6


def _fixed_mesh_error(n):
    sol = solve(harmonic(), harmonic_guess(n), tol=1e-14, adapt=False)
    return np.max(np.abs(sol.y[0] - np.sin(sol.t)))


def test_order_of_accuracy():
    sizes = np.array([5, 9, 17, 33])
    errors = np.array([_fixed_mesh_error(n) for n in sizes])
    slope = -np.polyfit(np.log(sizes - 1), np.log(errors), 1)[0]
    assert slope >= 3.7


def test_finite_difference_jacobians_match_analytic():
    sys_fd = BvpDaeSystem(1, 1, 0, exp_dae().rhs, exp_dae().alg, exp_dae().bc)
    guess = constant_guess(np.linspace(0, 1, 11), 1, 1, value=1.0)
    a = solve(exp_dae(), guess, tol=1e-8)
    b = solve(sys_fd, guess, tol=1e-8)
    np.testing.assert_allclose(a.y, b.y, atol=1e-9)


def test_linear_problem_converges_in_one_full_step():
    guess = constant_guess(np.linspace(0, 1, 11), 1, 1, value=1.0)
    new, info = newton_step(exp_dae(), guess)
    assert info.damping == 1.0
    _, info2 = newton_step(exp_dae(), new)
    assert info2.residual < 1e-12


def test_quadratic_convergence():
    it = constant_guess(np.linspace(0, 1, 41), 2)
    residuals = []
    for _ in range(8):
        it, info = newton_step(bratu(), it)
        residuals.append(info.residual)
        if info.trial_residual < 1e-13:
            break
    r = np.array(residuals)
    ratios = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 1) if r[k] < 0.1 and r[k + 1] > 1e-14]
    assert ratios, r
    assert max(ratios) < 10.0
    assert info.damping == 1.0


def test_fraction_to_boundary_rule():
    system = BvpDaeSystem(
        1, 0, 0,
        rhs=lambda t, y, z, q: np.zeros_like(y),
        alg=None,
        bc=lambda ya, yb, q: np.array([ya[0] + 1.0]),
        guard=lambda t, y, z: y.copy(),
    )
    guess = constant_guess(np.linspace(0, 1, 6), 1, value=1.0)
    new, info = newton_step(system, guess)
    assert info.boundary_limited and info.damping < 1
    assert new.y.min() >= (1 - 0.99) * guess.y.min()


def test_guard_rejects_infeasible_guess():
    system = BvpDaeSystem(1, 0, 0, rhs=lambda t, y, z, q: np.zeros_like(y), alg=None,
                          bc=lambda ya, yb, q: ya - 1.0, guard=lambda t, y, z: y.copy())
    with pytest.raises(InteriorityError):
        solve(system, constant_guess(np.linspace(0, 1, 6), 1, value=-1.0))


def test_boundary_layer_refinement():
    t0 = np.linspace(0, 1, 11)
    guess = MeshSolution(t0, np.vstack([1 - t0, -np.ones_like(t0)]), np.zeros((0, 11)))
    sol = solve(layer(), guess, tol=1e-6)
    tt = np.linspace(0, 1, 4001)
    assert np.max(np.abs(sol.y_at(tt)[0] - layer_exact(tt))) <= 1e-5
    h = np.diff(sol.t)
    assert h[sol.t[:-1] < 0.05].max() < h[sol.t[:-1] > 0.5].min()


def test_budget_error_carries_residual():
    t0 = np.linspace(0, 1, 11)
    guess = MeshSolution(t0, np.vstack([1 - t0, -np.ones_like(t0)]), np.zeros((0, 11)))
    with pytest.raises(BudgetError) as info:
        solve(layer(1e-3), guess, tol=1e-8, max_nodes=40)
    assert info.value.residual > 1e-8
    assert info.value.best is not None


def test_smooth_problem_mesh_unchanged():
    sol = solve(harmonic(), harmonic_guess(21), tol=1e-3)
    assert refine_mesh(harmonic(), sol, 1e-3) is sol
    assert sol.n_nodes == 21


def test_refinement_lowers_residual():
    # the transferred iterate keeps the old function; one fixed-mesh solve
    # on the refined mesh brings the residual down
    system = bratu()
    coarse = solve(system, constant_guess(np.linspace(0, 1, 11), 2), tol=1e-12, adapt=False)
    before = estimate_residuals(system, coarse).max()
    refined = refine_mesh(system, coarse, before / 1000)
    assert refined.n_nodes > coarse.n_nodes
    resolved = solve(system, refined, tol=1e-12, adapt=False)
    assert estimate_residuals(system, resolved).max() < before


def test_converged_solution_meets_residuals():
    tol = 1e-8
    sol = solve(exp_dae(), constant_guess(np.linspace(0, 1, 11), 1, 1, value=1.0), tol=tol)
    assert np.max(np.abs(exp_dae().eval_alg(sol.t, sol.y, sol.z, sol.q))) <= tol
    assert np.max(np.abs(exp_dae().bc(sol.y[:, 0], sol.y[:, -1], sol.q))) <= tol


def test_solver_is_deterministic():
    a = solve(bratu(), constant_guess(np.linspace(0, 1, 11), 2), tol=1e-9)
    b = solve(bratu(), constant_guess(np.linspace(0, 1, 11), 2), tol=1e-9)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)


def test_singular_jacobian_reported():
    system = BvpDaeSystem(1, 0, 0, rhs=lambda t, y, z, q: np.zeros_like(y), alg=None,
                          bc=lambda ya, yb, q: np.zeros(1))
    with pytest.raises(SingularJacobianError):
        solve(system, constant_guess(np.linspace(0, 1, 6), 1))


@pytest.mark.parametrize("guess, match", [
    (constant_guess(np.linspace(0, 1, 4), 2), "at least"),
    (constant_guess(np.linspace(0, 1, 11), 3), "dimensions"),
    (constant_guess(np.linspace(0, 1, 11), 2, nq=1), "parameters"),
])
def test_bad_guess(guess, match):
    with pytest.raises(ConfigurationError, match=match):
        solve(bratu(), guess)


def test_trace_stream():
    out = io.StringIO()
    solve(bratu(), constant_guess(np.linspace(0, 1, 11), 2), SolverOptions(tol=1e-6, trace=out))
    lines = out.getvalue().splitlines()
    assert lines[0].startswith("newton it=1")
    assert any(line.startswith("mesh nodes=") for line in lines)


def test_interpolation_identity_and_constants():
    sol = solve(bratu(), constant_guess(np.linspace(0, 1, 11), 2), tol=1e-8)
    same = interpolate_onto(sol, sol.t)
    np.testing.assert_array_equal(same.y, sol.y)
    const = constant_guess(np.linspace(0, 2, 7), 2, 1, value=3.25)
    moved = interpolate_onto(const, np.linspace(0, 2, 23))
    assert np.all(moved.y == 3.25) and np.all(moved.z == 3.25)


def test_refine_then_coarsen_reproduces_nodes():
    sol = solve(bratu(), constant_guess(np.linspace(0, 1, 11), 2), tol=1e-8)
    fine = interpolate_onto(sol, np.union1d(sol.t, 0.5 * (sol.t[:-1] + sol.t[1:])))
    back = interpolate_onto(fine, sol.t)
    np.testing.assert_allclose(back.y, sol.y, rtol=0, atol=0)


def test_interpolant_fourth_order():
    errors, sizes = [], [5, 9, 17, 33]
    for n in sizes:
        t = np.linspace(0, np.pi, n)
        sol = MeshSolution(t, np.sin(t)[None], np.zeros((0, n)), yp=np.cos(t)[None])
        tm = 0.5 * (t[:-1] + t[1:])
        errors.append(np.max(np.abs(sol.y_at(tm)[0] - np.sin(tm))))
    slope = -np.polyfit(np.log(np.array(sizes) - 1), np.log(errors), 1)[0]
    assert slope >= 3.7


def test_interpolation_outside_interval_rejected():
    with pytest.raises(ConfigurationError):
        interpolate_onto(harmonic_guess(5), np.linspace(0, 3, 5))


def test_mesh_solution_validation():
    with pytest.raises(ConfigurationError):
        MeshSolution(np.array([0.0, 1.0, 0.5]), np.zeros((1, 3)), np.zeros((0, 3)))
