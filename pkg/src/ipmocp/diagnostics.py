"""Post-processing audits of barrier solutions and continuation runs.

Everything here is read-only over solutions.  Integrals of multipliers and
complementarity products use the composite trapezoid rule on the solver
mesh; costs use Simpson's rule with the interpolant's midpoint values,
matching the accuracy of the collocation scheme.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .barrier import HamiltonianTerms, _weighted_gradients
from .bvpdae import MeshSolution
from .errors import InteriorityError
from .problem import OcpProblem


def _terms(problem: OcpProblem, y, u):
    n = problem.n_x
    return HamiltonianTerms(problem, y[:n], u, y[n:])


def _node_terms(problem, solution):
    return _terms(problem, solution.y, solution.z[:problem.n_u])


def _mid_terms(problem, solution):
    t = solution.t
    ym = solution.y_at(0.5 * (t[:-1] + t[1:]))
    zm = solution.z_mid if solution.z_mid is not None else 0.5 * (solution.z[:, :-1] + solution.z[:, 1:])
    return _terms(problem, ym, zm[:problem.n_u])


def _simpson(t, node_vals, mid_vals):
    h = np.diff(t)
    return float(np.sum(h / 6 * (node_vals[:-1] + 4 * mid_vals + node_vals[1:])))


def _trapezoid(t, vals):
    return trapezoid(vals, t, axis=-1)


def running_cost_values(problem: OcpProblem, terms: HamiltonianTerms):
    out = np.asarray(problem.l1(terms.x), dtype=float) + np.einsum("jm,jm->m", terms.l2, terms.u)
    if problem.control_weight is not None:
        out = out + 0.5 * np.einsum("jm,jk,km->m", terms.u, problem.control_weight, terms.u)
    return out


def cost(problem: OcpProblem, solution: MeshSolution) -> float:
    """``phi(x(T)) + int l(x, u) dt``."""
    node = running_cost_values(problem, _node_terms(problem, solution))
    mid = running_cost_values(problem, _mid_terms(problem, solution))
    xT = solution.y[:problem.n_x, -1:]
    return float(np.asarray(problem.phi(xT))[0]) + _simpson(solution.t, node, mid)


def _penalty(terms):
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(terms.g < 0, -np.log(-terms.g), np.inf)
        c = np.where(terms.c < 0, -np.log(-terms.c), np.inf)
    return g.sum(axis=0) + c.sum(axis=0)


def penalized_cost(problem: OcpProblem, solution: MeshSolution, eps: float) -> float:
    """Cost plus ``eps`` times the integrated log barriers; ``inf`` off the interior."""
    node, mid = _node_terms(problem, solution), _mid_terms(problem, solution)
    barrier = _simpson(solution.t, _penalty(node), _penalty(mid))
    return cost(problem, solution) + eps * barrier


def reconstruct_multipliers(problem: OcpProblem, solution: MeshSolution, eps: float):
    """Node values ``theta = -eps/g`` and ``eta = -eps/c``.

    Raises :class:`InteriorityError` at the first node where a constraint is
    not strictly negative.
    """
    T = _node_terms(problem, solution)
    for kind, vals in (("g", T.g), ("c", T.c)):
        bad = np.argwhere(~(vals < 0))
        if bad.size:
            i, j = bad[0]
            raise InteriorityError(
                f"{kind}[{i}] = {vals[i, j]:.3g} at node {j} (t = {solution.t[j]:.6g}) is not interior",
                kind=kind, index=int(i), node=int(j))
    return -eps / T.g, -eps / T.c


def solution_multipliers(problem: OcpProblem, solution: MeshSolution, eps: float):
    """Multipliers carried by a primal-dual solution, or reconstructed from a primal one."""
    nu, ng = problem.n_u, problem.n_g
    if solution.z.shape[0] == nu + ng + problem.n_c:
        return solution.z[nu:nu + ng], solution.z[nu + ng:]
    return reconstruct_multipliers(problem, solution, eps)


@dataclass
class StationarityReport:
    """Max-norm defects of the unpenalized first-order system."""

    adjoint: float
    hamiltonian: float
    boundary: float
    complementarity_g: np.ndarray
    complementarity_c: np.ndarray
    sign: float

    @property
    def max(self) -> float:
        parts = [self.adjoint, self.hamiltonian, self.boundary, self.sign]
        parts += list(self.complementarity_g) + list(self.complementarity_c)
        return float(max(parts))

    def to_dict(self):
        return {"adjoint": self.adjoint, "hamiltonian": self.hamiltonian, "boundary": self.boundary,
                "complementarity_g": [float(v) for v in self.complementarity_g],
                "complementarity_c": [float(v) for v in self.complementarity_c],
                "sign": self.sign}


def stationarity_residual(problem: OcpProblem, solution: MeshSolution, theta, eta,
                          lam=None, eps: float = 0.0) -> StationarityReport:
    """Defects of the stationarity system with measure densities ``theta``.

    The adjoint defect uses the node derivatives of the collocation
    polynomial.  Complementarity is reported as ``|int g theta dt + eps T|``
    so that it vanishes exactly for barrier multipliers at ``eps``; pass
    ``eps=0`` for the plain defect.  ``sign`` is the largest negative part of
    any multiplier.
    """
    n, nu = problem.n_x, problem.n_u
    m = solution.n_nodes
    theta = np.asarray(theta, dtype=float).reshape(problem.n_g, m)
    eta = np.asarray(eta, dtype=float).reshape(problem.n_c, m)
    T = _node_terms(problem, solution)
    Lx, Lu = _weighted_gradients(T, theta, eta)
    yp = solution.yp if solution.yp is not None else solution.y_at(solution.t, derivative=True)
    adjoint = float(np.max(np.abs(yp[n:] + Lx))) if solution.n_nodes else 0.0
    hamiltonian = float(np.max(np.abs(Lu))) if nu else 0.0

    x0, xT = solution.y[:n, 0], solution.y[:n, -1]
    p0, pT = solution.y[n:, 0], solution.y[n:, -1]
    dphi = np.asarray(problem.dphi(xT[:, None]), dtype=float)[:, 0]
    if problem.fixed_initial_state:
        parts = [x0 - problem.initial_state, pT - dphi]
    else:
        lam = np.zeros(problem.n_h) if lam is None else np.asarray(lam, dtype=float)
        H0, HT = problem.boundary_jac(x0, xT)
        parts = [problem.boundary(x0, xT), p0 + H0.T @ lam, pT - dphi - HT.T @ lam]
    boundary = float(np.max(np.abs(np.concatenate(parts))))

    horizon = solution.t[-1] - solution.t[0]
    comp_g = np.abs(_trapezoid(solution.t, T.g * theta) + eps * horizon)
    comp_c = np.abs(_trapezoid(solution.t, T.c * eta) + eps * horizon)
    negs = [-theta.min() if theta.size else 0.0, -eta.min() if eta.size else 0.0, 0.0]
    return StationarityReport(adjoint, hamiltonian, boundary, np.atleast_1d(comp_g),
                              np.atleast_1d(comp_c), float(max(negs)))


def trajectory_distance(a: MeshSolution, b: MeshSolution, rows=None) -> float:
    """Sup-distance of two interpolated trajectories over the union of their meshes."""
    t = np.union1d(a.t, b.t)
    ya, yb = a.y_at(t), b.y_at(t)
    if rows is not None:
        ya, yb = ya[rows], yb[rows]
    return float(np.max(np.abs(ya - yb)))


@dataclass
class StageDiagnostics:
    """Audit record of one continuation stage."""

    stage: int
    eps: float
    status: str = "converged"
    cost: float = np.nan
    penalized_cost: float = np.nan
    g_margin: list = field(default_factory=list)
    c_margin: list = field(default_factory=list)
    l1_theta: list = field(default_factory=list)
    l1_eta: list = field(default_factory=list)
    p_sup: float = np.nan
    complementarity_theta: list = field(default_factory=list)
    complementarity_eta: list = field(default_factory=list)
    stationarity: Optional[dict] = None
    interior: bool = True
    p_jump: float = np.nan
    p_jump_time: float = np.nan
    x_drift: float = np.nan
    newton_iterations: int = 0
    mesh_size: int = 0
    wall_time: float = 0.0
    intermediate: bool = False
    error: Optional[str] = None

    def to_dict(self):
        return asdict(self)


def stage_diagnostics(problem: OcpProblem, solution: MeshSolution, eps: float, stage: int,
                      previous: Optional[MeshSolution] = None, **extra) -> StageDiagnostics:
    """Collect the per-stage audit quantities for a solution at ``eps``."""
    n = problem.n_x
    T = _node_terms(problem, solution)
    t = solution.t
    d = StageDiagnostics(stage=stage, eps=eps, mesh_size=solution.n_nodes,
                         newton_iterations=solution.newton_iterations, **extra)
    d.g_margin = [float(v) for v in np.min(-T.g, axis=1)] if problem.n_g else []
    d.c_margin = [float(v) for v in np.min(-T.c, axis=1)] if problem.n_c else []
    d.interior = bool(np.all(T.g < 0) and np.all(T.c < 0))

    theta = eta = None
    if d.interior or solution.z.shape[0] > problem.n_u:
        theta, eta = solution_multipliers(problem, solution, eps)
    if d.interior:
        # barrier multipliers from the trajectory itself
        d.l1_theta = [float(v) for v in _trapezoid(t, np.abs(eps / T.g))]
        d.l1_eta = [float(v) for v in _trapezoid(t, np.abs(eps / T.c))]
    elif theta is not None:
        d.l1_theta = [float(v) for v in _trapezoid(t, np.abs(theta))]
        d.l1_eta = [float(v) for v in _trapezoid(t, np.abs(eta))]
    if theta is not None:
        d.complementarity_theta = [float(v) for v in np.max(np.abs(theta * T.g + eps), axis=1)] \
            if problem.n_g else []
        d.complementarity_eta = [float(v) for v in np.max(np.abs(eta * T.c + eps), axis=1)] \
            if problem.n_c else []
        d.stationarity = stationarity_residual(problem, solution, theta, eta, solution.q, eps).to_dict()

    p = solution.y[n:]
    d.p_sup = float(np.max(np.abs(p)))
    rate = np.max(np.abs(np.diff(p, axis=1)), axis=0) / np.diff(t)
    k = int(np.argmax(rate))
    d.p_jump, d.p_jump_time = float(rate[k]), float(0.5 * (t[k] + t[k + 1]))
    d.cost = cost(problem, solution)
    d.penalized_cost = penalized_cost(problem, solution, eps) if d.interior else float("inf")
    if previous is not None:
        d.x_drift = trajectory_distance(solution, previous, slice(0, n))
    return d


def calibrate_mixed_margin(stages: Sequence[StageDiagnostics]) -> float:
    """``K_c = eps_1 / min(-c)`` at the first completed stage."""
    for d in stages:
        if d.status == "converged" and d.c_margin:
            return d.eps / min(d.c_margin)
    return float("nan")


def mixed_margin_holds(d: StageDiagnostics, k_c: float) -> bool:
    """``min(-c) >= eps / K_c`` for every mixed constraint."""
    return bool(d.c_margin) and min(d.c_margin) >= d.eps / k_c


@dataclass
class Trail:
    name: str
    values: np.ndarray
    first_quarter_max: float
    last_quarter_max: float

    @property
    def sup(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0

    @property
    def bounded(self) -> bool:
        return bool(self.last_quarter_max <= 2 * self.first_quarter_max)


@dataclass
class BoundednessReport:
    trails: list

    @property
    def bounded(self) -> bool:
        return all(tr.bounded for tr in self.trails)

    def __getitem__(self, name):
        for tr in self.trails:
            if tr.name == name:
                return tr
        raise KeyError(name)


def _trail(name, values):
    values = np.asarray(values, dtype=float)
    q = max(1, values.size // 4)
    return Trail(name, values, float(values[:q].max()), float(values[-q:].max()))


def boundedness_trail(stages) -> BoundednessReport:
    """Flag trails whose last-quarter maximum exceeds twice the first-quarter maximum.

    Accepts a run (anything with a ``stages`` attribute) or a sequence of
    :class:`StageDiagnostics`; intermediate rescue stages are skipped.
    """
    stages = [d for d in getattr(stages, "stages", stages)
              if d.status == "converged" and not d.intermediate]
    if len(stages) < 3:
        raise ValueError(f"boundedness trail needs at least 3 completed stages, got {len(stages)}")
    trails = []
    for i in range(len(stages[0].l1_theta)):
        trails.append(_trail(f"l1_theta[{i}]", [d.l1_theta[i] for d in stages]))
    for i in range(len(stages[0].l1_eta)):
        trails.append(_trail(f"l1_eta[{i}]", [d.l1_eta[i] for d in stages]))
    trails.append(_trail("p_sup", [d.p_sup for d in stages]))
    return BoundednessReport(trails)
