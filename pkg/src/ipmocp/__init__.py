"""Interior point continuation for control-affine optimal control problems."""
from .assembly import (PRIMAL, PRIMAL_DUAL, assemble, assemble_primal, assemble_primal_dual,
                       default_guess, primal_to_primal_dual, smoothing_residual)
from .barrier import (BarrierContext, log_barrier, log_barrier_deriv, log_barrier_deriv2,
                      penalized_hamiltonian, penalized_hamiltonian_grad_u,
                      penalized_hamiltonian_grad_x, penalized_hamiltonian_hess_uu, pre_hamiltonian)
from .bvpdae import (BvpDaeSystem, MeshSolution, SolverOptions, interpolate_onto, newton_step,
                     refine_mesh, solve)
from .continuation import (ContinuationConfig, ContinuationRun, run_primal, run_primal_dual,
                           solve_stage)
from .diagnostics import (StageDiagnostics, boundedness_trail, cost, penalized_cost,
                          reconstruct_multipliers, stationarity_residual)
from .errors import (BudgetError, ConfigurationError, DomainError, EvaluationError,
                     InteriorityError, IpmOcpError, LineSearchError, NonConvergenceError,
                     SingularJacobianError, SolverError)
from .problem import OcpProblem, validate_derivatives
from .problems import lq_problem, robbins_problem

__version__ = "0.1.0"
