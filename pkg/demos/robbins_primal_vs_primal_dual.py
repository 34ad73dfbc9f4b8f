"""Solve the Robbins problem with both continuation schemes and compare.

    python3 demos/robbins_primal_vs_primal_dual.py
"""
import numpy as np

from ipmocp import ContinuationConfig, cost, robbins_problem, run_primal, run_primal_dual
from ipmocp.diagnostics import trajectory_distance

problem = robbins_problem()
runs = {
    "primal": run_primal(problem, ContinuationConfig(eps0=0.1, alpha=0.8, tol=1e-8)),
    "primal-dual": run_primal_dual(problem, ContinuationConfig(eps0=0.1, alpha=0.5, tol=1e-9)),
}

for name, r in runs.items():
    sol = r.solution
    print(f"{name:12s} {r.status} after {r.k} stages in {r.wall_time:5.1f} s, "
          f"eps {r.eps:.2e}, J = {cost(problem, sol):.8f}, {sol.n_nodes} nodes, "
          f"{r.newton_iterations} Newton iterations")

# final eps differs between the runs, so the gap includes the eps-dependence
a, b = runs["primal"].solution, runs["primal-dual"].solution
print(f"state gap between final trajectories: {trajectory_distance(a, b, slice(0, 3)):.2e}")

# the control chatters between its bounds as x1 touches zero
sol = runs["primal-dual"].solution
u = sol.z[0]
switch = np.flatnonzero(np.diff(np.sign(u[np.abs(u) >= 0.5])))
times = sol.t[np.abs(u) >= 0.5][switch]
print("control switches near t =", np.array2string(times, precision=3))
