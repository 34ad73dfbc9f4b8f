"""Command-line front end.

Exit codes: 0 converged, 1 usage or configuration error, 2 solver failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import PRIMAL, PRIMAL_DUAL
from .bvpdae import SolverOptions
from .continuation import ContinuationConfig, ContinuationRun, run
from .diagnostics import boundedness_trail, solution_multipliers
from .errors import ConfigurationError, IpmOcpError
from .problems import PROBLEMS

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Settings of one CLI run; loadable from a JSON file."""

    problem: str = "robbins"
    algorithm: str = PRIMAL
    eps0: float = 0.1
    alpha: float = 0.8
    tol: float = 1e-8
    mesh_points: int = 61
    node_budget: int = 10_000
    stage_tol_floor: float = 1e-6
    output_dir: str = "."
    trajectory: str = "trajectory.csv"
    summary: str = "summary.json"

    def validate(self):
        if self.problem not in PROBLEMS:
            raise UsageError(f"unknown problem {self.problem!r}; choose from {', '.join(sorted(PROBLEMS))}")
        if self.algorithm not in (PRIMAL, PRIMAL_DUAL):
            raise UsageError(f"unknown algorithm {self.algorithm!r}; choose 'primal' or 'primal-dual'")
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must lie in the open interval (0, 1), got {self.alpha}")
        if not self.eps0 > 0 or not math.isfinite(self.eps0):
            raise UsageError(f"eps0 must be positive, got {self.eps0}")
        if not self.tol > 0 or not math.isfinite(self.tol):
            raise UsageError(f"tol must be positive, got {self.tol}")
        if self.tol >= self.eps0:
            raise UsageError(f"tol ({self.tol}) must be below eps0 ({self.eps0}); no stage would run")
        if self.mesh_points < 5:
            raise UsageError(f"mesh_points must be at least 5, got {self.mesh_points}")
        if self.node_budget < self.mesh_points:
            raise UsageError("node_budget must be at least mesh_points")

    def continuation(self) -> ContinuationConfig:
        return ContinuationConfig(eps0=self.eps0, alpha=self.alpha, tol=self.tol,
                                  stage_tol_floor=self.stage_tol_floor, max_nodes=self.node_budget,
                                  mesh_points=self.mesh_points)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, value):
    kind = _FIELD_TYPES[name]
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config field {name!r}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"config field {name!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise UsageError(f"config field {name!r}: expected a string, got {value!r}")
    return value


def load_config(path) -> dict:
    """Read a JSON run configuration; errors name the line or the field."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    out = {}
    for key, value in data.items():
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}: unknown config field {key!r}")
        out[key] = _coerce(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ipmocp", description="Interior point continuation for control-affine optimal control.")
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--problem", help=f"built-in problem ({', '.join(sorted(PROBLEMS))})")
    p.add_argument("--algorithm", choices=[PRIMAL, PRIMAL_DUAL])
    p.add_argument("--eps0", type=float, help="initial barrier parameter")
    p.add_argument("--alpha", type=float, help="barrier decay rate in (0, 1)")
    p.add_argument("--tol", type=float, help="stop once the barrier parameter is at most this")
    p.add_argument("--mesh-points", type=int, dest="mesh_points", help="initial uniform mesh size")
    p.add_argument("--node-budget", type=int, dest="node_budget", help="maximum mesh nodes")
    p.add_argument("--stage-tol-floor", type=float, dest="stage_tol_floor",
                   help="lower bound on the per-stage BVP tolerance")
    p.add_argument("--output-dir", dest="output_dir", help="directory for the trajectory and summary")
    p.add_argument("--trace", action="store_true", help="print Newton and mesh trace to stderr")
    return p


def resolve_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def trajectory_table(run: ContinuationRun):
    """Header and node rows ``t, x, p, u, theta, eta`` of the final solution."""
    pr, sol = run.problem, run.solution
    n = pr.n_x
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
              + [f"u{i + 1}" for i in range(pr.n_u)] + [f"theta{i + 1}" for i in range(pr.n_g)]
              + [f"eta{i + 1}" for i in range(pr.n_c)])
    theta, eta = solution_multipliers(pr, sol, run.eps)
    cols = np.vstack([sol.t[None], sol.y, sol.z[:pr.n_u],
                      np.reshape(theta, (pr.n_g, sol.n_nodes)), np.reshape(eta, (pr.n_c, sol.n_nodes))])
    return header, cols.T


def write_trajectory(path, run: ContinuationRun):
    header, rows = trajectory_table(run)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`: ``(header, array)``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_summary(cfg: RunConfig, run: ContinuationRun) -> dict:
    done = run.completed
    last = done[-1] if done else None
    out = {
        "problem": cfg.problem, "algorithm": cfg.algorithm,
        "eps0": cfg.eps0, "alpha": cfg.alpha, "tol": cfg.tol,
        "mesh_points": cfg.mesh_points, "node_budget": cfg.node_budget,
        "status": run.status, "stages": run.k, "final_eps": run.eps,
        "final_cost": last.cost if last else None,
        "final_penalized_cost": last.penalized_cost if last else None,
        "mesh_size": run.solution.n_nodes,
        "newton_iterations": run.newton_iterations,
        "wall_time": run.wall_time,
        "failure": str(run.failure) if run.failure else None,
    }
    if len(done) >= 3:
        rep = boundedness_trail(run)
        out["boundedness"] = {tr.name: {"sup": tr.sup, "first_quarter_max": tr.first_quarter_max,
                                        "last_quarter_max": tr.last_quarter_max, "bounded": tr.bounded}
                              for tr in rep.trails}
    out["diagnostics"] = [d.to_dict() for d in run.stages]
    return _clean(out)


def run_cli(argv=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"ipmocp: usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ipmocp: I/O error: {exc}", file=stderr)
        return EXIT_IO

    cont = cfg.continuation()
    if args.trace:
        cont = replace(cont, solver=SolverOptions(trace=stderr))
    try:
        result = run(PROBLEMS[cfg.problem](), cfg.algorithm, cont)
    except ConfigurationError as exc:
        print(f"ipmocp: usage error: {exc}", file=stderr)
        return EXIT_USAGE

    try:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if result.converged:
            write_trajectory(out / cfg.trajectory, result)
        with open(out / cfg.summary, "w") as fh:
            json.dump(run_summary(cfg, result), fh, indent=2)
            fh.write("\n")
    except (OSError, IpmOcpError) as exc:
        print(f"ipmocp: I/O error: {exc}", file=stderr)
        return EXIT_IO

    if not result.converged:
        print(f"ipmocp: solver failure at {result.failure}", file=stderr)
        return EXIT_SOLVER
    print(f"converged: {result.k} stages, eps = {result.eps:.3g}, cost = {result.completed[-1].cost:.10g}, "
          f"{result.wall_time:.2f} s")
    return EXIT_OK


def main(argv: Optional[list] = None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
