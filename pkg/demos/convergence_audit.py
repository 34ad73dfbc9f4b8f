"""Per-stage diagnostics of a primal-dual Robbins run.

Prints the trail of cost, state step, multiplier norms and adjoint bound,
then the boundedness verdicts.

    python3 demos/convergence_audit.py
"""
from ipmocp import ContinuationConfig, boundedness_trail, robbins_problem, run_primal_dual

r = run_primal_dual(robbins_problem(), ContinuationConfig(eps0=0.1, alpha=0.5, tol=1e-9))

print(f"{'k':>3} {'eps':>9} {'J':>12} {'|dx|':>9} {'|theta|_1':>10} {'sup|p|':>8} {'nodes':>6} {'newton':>6}")
for d in r.completed:
    print(f"{d.stage:3d} {d.eps:9.2e} {d.cost:12.8f} {d.x_drift:9.2e} {d.l1_theta[0]:10.4f} "
          f"{d.p_sup:8.4f} {d.mesh_size:6d} {d.newton_iterations:6d}")

print()
for trail in boundedness_trail(r).trails:
    verdict = "bounded" if trail.bounded else "GROWING"
    print(f"{trail.name:12s} first quarter max {trail.first_quarter_max:8.4f}, "
          f"last quarter max {trail.last_quarter_max:8.4f}: {verdict}")
