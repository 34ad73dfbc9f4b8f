import numpy as np
import pytest

from ipmocp import (PRIMAL, PRIMAL_DUAL, ContinuationConfig, SolverOptions, robbins_problem,
                    run_primal, run_primal_dual, solve_stage)

MATCHED_EPS = 1e-8

# one "AC<n> PASS|FAIL ..." line per acceptance criterion, printed after the run;
# a criterion checked by several tests passes only if every part does
ACCEPTANCE_PARTS = {}


def record(criterion, ok, detail):
    ACCEPTANCE_PARTS.setdefault(criterion, []).append((bool(ok), detail))
    return ok


def acceptance_line(criterion):
    parts = ACCEPTANCE_PARTS[criterion]
    verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
    return f"{criterion} {verdict}  " + "; ".join(d for _, d in parts)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_PARTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_PARTS, key=lambda k: int(k[2:])):
        terminalreporter.write_line(acceptance_line(key))


@pytest.fixture(scope="session")
def robbins():
    return robbins_problem()


@pytest.fixture(scope="session")
def primal_run(robbins):
    return run_primal(robbins, ContinuationConfig(eps0=0.1, alpha=0.8, tol=1e-8, keep_solutions=True))


@pytest.fixture(scope="session")
def primal_dual_run(robbins):
    return run_primal_dual(robbins, ContinuationConfig(eps0=0.1, alpha=0.5, tol=1e-9, keep_solutions=True))


@pytest.fixture(scope="session")
def matched_solutions(robbins, primal_run, primal_dual_run):
    """Primal and primal-dual solutions at the common value ``MATCHED_EPS``.

    Each is warm-started from its run's last stage above ``MATCHED_EPS``.
    """
    def last_above(r):
        return [s for e, s in r.solutions if e > MATCHED_EPS][-1]

    opts = SolverOptions(tol=primal_run.config.stage_tol(MATCHED_EPS))
    return (solve_stage(robbins, PRIMAL, MATCHED_EPS, last_above(primal_run), opts),
            solve_stage(robbins, PRIMAL_DUAL, MATCHED_EPS, last_above(primal_dual_run), opts))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
