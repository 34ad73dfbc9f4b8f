"""Barrier-parameter continuation: solve at eps_0, alpha eps_0, ... until eps <= tol.

Each stage is warm-started from the previous stage's solution on its own
(refined) mesh.  A failed stage is retried once through the intermediate
value ``sqrt(alpha) eps_k`` before the run is declared failed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from .assembly import PRIMAL, PRIMAL_DUAL, assemble, default_guess
from .bvpdae import MeshSolution, SolverOptions, solve
from .diagnostics import StageDiagnostics, stage_diagnostics
from .errors import ConfigurationError, IpmOcpError
from .problem import OcpProblem


@dataclass(frozen=True)
class ContinuationConfig:
    """Schedule and solver settings of a continuation run.

    The BVP tolerance of a stage at ``eps`` is
    ``max(min(1e-8, 1e-2 eps), stage_tol_floor)``.  ``tol >= eps0`` is
    accepted and yields a run with no stages.
    """

    eps0: float = 0.1
    alpha: float = 0.8
    tol: float = 1e-8
    stage_tol_floor: float = 1e-6
    max_nodes: int = 10_000
    mesh_points: int = 61
    max_stages: int = 10_000
    retry: bool = True
    keep_solutions: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not (math.isfinite(self.eps0) and self.eps0 > 0):
            raise ConfigurationError(f"eps0 must be positive, got {self.eps0}")
        if not (math.isfinite(self.tol) and self.tol > 0):
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in the open interval (0, 1), got {self.alpha}")
        if self.stage_tol_floor < 0:
            raise ConfigurationError("stage_tol_floor must be non-negative")
        if self.mesh_points < 5:
            raise ConfigurationError("mesh_points must be at least 5")
        if self.max_nodes < self.mesh_points:
            raise ConfigurationError("max_nodes must be at least mesh_points")

    def stage_tol(self, eps: float) -> float:
        return max(min(1e-8, 1e-2 * eps), self.stage_tol_floor)

    def schedule(self) -> list[float]:
        """The values ``eps_1, eps_2, ...`` the run will solve at."""
        out, eps = [], self.eps0
        while eps > self.tol and len(out) < self.max_stages:
            eps = self.alpha * eps
            out.append(eps)
        return out

    @property
    def degenerate(self) -> bool:
        return self.tol >= self.eps0


@dataclass
class StageFailure:
    stage: int
    eps: float
    error: IpmOcpError

    def __str__(self):
        return f"stage {self.stage} (eps = {self.eps:.6g}): {type(self.error).__name__}: {self.error}"


@dataclass
class ContinuationRun:
    """State and history of a continuation run.

    ``solution`` is the last successfully solved stage (or the initial
    guess).  ``stages`` holds one record per attempted solve, including
    rescue stages (``intermediate=True``) and the failing stage.
    """

    problem: OcpProblem
    mode: str
    config: ContinuationConfig
    solution: MeshSolution
    k: int = 0
    eps: float = math.nan
    stages: list = field(default_factory=list)
    status: str = "running"
    failure: Optional[StageFailure] = None
    solutions: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def completed(self) -> list:
        """Diagnostics of the scheduled stages that converged."""
        return [d for d in self.stages if d.status == "converged" and not d.intermediate]

    @property
    def newton_iterations(self) -> int:
        return sum(d.newton_iterations for d in self.stages)


def solve_stage(problem: OcpProblem, mode: str, eps: float, guess: MeshSolution,
                options: Optional[SolverOptions] = None) -> MeshSolution:
    """Solve the barrier stationarity system at ``eps`` from ``guess``."""
    return solve(assemble(problem, eps, mode), guess, options)


def _attempt(run, eps, stage, intermediate, opts):
    cfg = run.config
    t0 = time.perf_counter()
    stage_opts = replace(opts, tol=cfg.stage_tol(eps), max_nodes=cfg.max_nodes)
    try:
        sol = solve_stage(run.problem, run.mode, eps, run.solution, stage_opts)
    except IpmOcpError as exc:
        d = StageDiagnostics(stage=stage, eps=eps, status="failed", intermediate=intermediate,
                             wall_time=time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
        best = getattr(exc, "best", None)
        if best is not None:
            d.mesh_size = best.n_nodes
        run.stages.append(d)
        return exc
    d = stage_diagnostics(run.problem, sol, eps, stage, previous=run.solution,
                          intermediate=intermediate, wall_time=time.perf_counter() - t0)
    run.stages.append(d)
    run.solution = sol
    if cfg.keep_solutions:
        run.solutions.append((eps, sol))
    return None


def _run(problem: OcpProblem, mode: str, config: ContinuationConfig,
         guess: Optional[MeshSolution] = None) -> ContinuationRun:
    config = config or ContinuationConfig()
    if guess is None:
        guess = default_guess(problem, mode, config.mesh_points)
    run = ContinuationRun(problem, mode, config, guess, eps=config.eps0)
    if config.degenerate:
        run.status = "degenerate"
        return run
    opts = config.solver
    start = time.perf_counter()
    while run.eps > config.tol and run.k < config.max_stages:
        target = config.alpha * run.eps
        exc = _attempt(run, target, run.k + 1, False, opts)
        if exc is not None and config.retry and run.k > 0:
            # rescue: reach the target through a milder step
            mid = math.sqrt(config.alpha) * run.eps
            exc = _attempt(run, mid, run.k + 1, True, opts) or _attempt(run, target, run.k + 1, False, opts)
        if exc is not None:
            run.status = "failed"
            run.failure = StageFailure(run.k + 1, target, exc)
            break
        run.k += 1
        run.eps = target
    else:
        run.status = "converged" if run.eps <= config.tol else "failed"
        if run.status == "failed":
            run.failure = StageFailure(run.k, run.eps,
                                       IpmOcpError(f"stage limit {config.max_stages} reached"))
    run.wall_time = time.perf_counter() - start
    return run


def run_primal(problem: OcpProblem, config: Optional[ContinuationConfig] = None,
               guess: Optional[MeshSolution] = None) -> ContinuationRun:
    """Continuation on the penalized (primal) stationarity system."""
    return _run(problem, PRIMAL, config, guess)


def run_primal_dual(problem: OcpProblem, config: Optional[ContinuationConfig] = None,
                    guess: Optional[MeshSolution] = None) -> ContinuationRun:
    """Continuation on the smoothed primal-dual system; the guess need not be interior."""
    return _run(problem, PRIMAL_DUAL, config, guess)


def run(problem: OcpProblem, mode: str, config: Optional[ContinuationConfig] = None,
        guess: Optional[MeshSolution] = None) -> ContinuationRun:
    if mode not in (PRIMAL, PRIMAL_DUAL):
        raise ConfigurationError(f"unknown algorithm {mode!r}; expected 'primal' or 'primal-dual'")
    return _run(problem, mode, config, guess)
