"""An unconstrained LQ problem has no barrier terms, so one stage solves it.

Compares the collocation solution with a Riccati sweep done by ``solve_ivp``.

    python3 demos/lq_riccati_check.py
"""
import numpy as np
from scipy.integrate import solve_ivp

from ipmocp import ContinuationConfig, lq_problem, run_primal

A = np.array([[0.0, 1.0], [-2.0, -0.3]])
B = np.array([[0.0], [1.0]])
Q, R, S = np.diag([2.0, 0.5]), np.array([[0.7]]), np.diag([1.0, 0.2])
x0, T = np.array([1.0, -0.5]), 2.0

r = run_primal(lq_problem(A, B, Q, R, S, x0, horizon=T),
               ContinuationConfig(eps0=0.1, alpha=0.5, tol=0.05, mesh_points=21))
sol = r.solution

Rinv = np.linalg.inv(R)
back = solve_ivp(lambda s, v: (v.reshape(2, 2) @ A + A.T @ v.reshape(2, 2)
                               - v.reshape(2, 2) @ B @ Rinv @ B.T @ v.reshape(2, 2) + Q).ravel(),
                 (0, T), S.ravel(), rtol=1e-12, atol=1e-13, dense_output=True)
P = [back.sol(T - t).reshape(2, 2) for t in sol.t]
p_ref = np.stack([Pk @ sol.y[:2, k] for k, Pk in enumerate(P)], axis=1)

print(f"{r.status}: {r.k} stage(s), {sol.n_nodes} nodes")
print(f"max |p - P x| = {np.max(np.abs(sol.y[2:] - p_ref)):.2e}")
