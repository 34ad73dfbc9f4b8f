"""Control-affine optimal control problems with state and mixed constraints.

The problem class is::

    min  phi(x(T)) + int_0^T l1(x) + l2(x).u dt
    s.t. x' = f1(x) + f2(x).u
         h(x(0), x(T)) = 0
         g(x) <= 0                  (pure state constraints)
         c(x, u) = a(x).u + b(x) <= 0  (mixed constraints)

Every callback is vectorized over points: states are passed as arrays of
shape ``(n_x, m)`` and the trailing axis of every output indexes the same
``m`` points, as in :func:`scipy.integrate.solve_bvp`.

====== =================== =====================================
name   value shape         first derivative shape
====== =================== =====================================
f1     (n_x, m)            (n_x, n_x, m)
f2     (n_x, n_u, m)       (n_x, n_u, n_x, m)
l1     (m,)                (n_x, m)
l2     (n_u, m)            (n_u, n_x, m)
phi    (m,)                (n_x, m)
g      (n_g, m)            (n_g, n_x, m)
a      (n_c, n_u, m)       (n_c, n_u, n_x, m)
b      (n_c, m)            (n_c, n_x, m)
====== =================== =====================================

Second derivatives append one more ``n_x`` axis before ``m``.  Missing
derivatives are replaced by central finite differences of the next lower
order callback.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, EvaluationError

Array = np.ndarray

FD_STEP = np.sqrt(np.finfo(float).eps)
DERIVATIVE_RTOL = 1e-5

_VALUE_NAMES = ("f1", "f2", "l1", "l2", "phi", "g", "a", "b")
_SECOND_NAMES = ("f1", "f2", "l1", "l2", "phi", "g", "a", "b")


def central_difference(fun, x):
    """Jacobian of a vectorized callback by central differences.

    ``fun`` maps ``(n, m)`` to an array with trailing axis ``m``; the
    result has an extra ``n`` axis inserted before ``m``.  The step for
    component ``k`` is ``sqrt(eps) * max(1, |x_k|)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = []
    for k in range(n):
        step = FD_STEP * np.maximum(1.0, np.abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += step
        xm[k] -= step
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * step))
    return np.stack(cols, axis=-2)


def _zeros_like_points(shape):
    def fun(x):
        return np.zeros(shape + (np.shape(x)[1],))

    return fun


@dataclass(frozen=True)
class OcpProblem:
    """A control-affine optimal control problem.

    Boundary conditions are given either as a general map ``h`` (with
    ``n_h`` rows and Jacobian ``dh`` returning the pair of blocks with
    respect to ``x(0)`` and ``x(T)``) or, more commonly, as a fixed
    ``initial_state`` with a free terminal state.  In the latter case
    the boundary multiplier is eliminated during assembly.

    ``control_weight`` adds ``u.R.u / 2`` to the running cost.  It is not
    part of the control-affine class; it exists so that linear-quadratic
    test problems can be posed and must stay ``None`` for constrained
    problems.
    """

    n_x: int
    n_u: int
    horizon: float
    f1: Callable
    f2: Callable
    l1: Callable
    l2: Callable
    phi: Optional[Callable] = None
    n_g: int = 0
    g: Optional[Callable] = None
    n_c: int = 0
    a: Optional[Callable] = None
    b: Optional[Callable] = None
    initial_state: Optional[Array] = None
    h: Optional[Callable] = None
    dh: Optional[Callable] = None
    n_h: int = 0
    df1: Optional[Callable] = None
    df2: Optional[Callable] = None
    dl1: Optional[Callable] = None
    dl2: Optional[Callable] = None
    dphi: Optional[Callable] = None
    dg: Optional[Callable] = None
    da: Optional[Callable] = None
    db: Optional[Callable] = None
    d2f1: Optional[Callable] = None
    d2f2: Optional[Callable] = None
    d2l1: Optional[Callable] = None
    d2l2: Optional[Callable] = None
    d2phi: Optional[Callable] = None
    d2g: Optional[Callable] = None
    d2a: Optional[Callable] = None
    d2b: Optional[Callable] = None
    control_weight: Optional[Array] = None
    state_box: tuple = (-10.0, 10.0)
    name: str = ""
    analytic: frozenset = field(default=frozenset(), init=False, repr=False)

    def __post_init__(self):
        if self.n_x <= 0 or self.n_u <= 0:
            raise ConfigurationError("n_x and n_u must be positive")
        if self.n_g < 0 or self.n_c < 0:
            raise ConfigurationError("n_g and n_c must be non-negative")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be strictly positive, got {self.horizon}")
        if self.n_g and self.g is None:
            raise ConfigurationError("n_g > 0 requires a state constraint callback g")
        if self.n_c and (self.a is None or self.b is None):
            raise ConfigurationError("n_c > 0 requires mixed constraint callbacks a and b")
        if (self.initial_state is None) == (self.h is None):
            raise ConfigurationError("give exactly one of initial_state or h")
        set_ = object.__setattr__
        if self.initial_state is not None:
            x0 = np.asarray(self.initial_state, dtype=float)
            if x0.shape != (self.n_x,):
                raise ConfigurationError(f"initial_state must have shape ({self.n_x},), got {x0.shape}")
            set_(self, "initial_state", x0)
            set_(self, "n_h", self.n_x)
        elif self.n_h <= 0:
            raise ConfigurationError("a general boundary map h needs n_h > 0")
        if self.control_weight is not None:
            R = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
            if R.shape != (self.n_u, self.n_u):
                raise ConfigurationError("control_weight must be n_u x n_u")
            if self.n_c:
                raise ConfigurationError("control_weight is only allowed without mixed constraints")
            set_(self, "control_weight", R)

        n, nu, ng, nc = self.n_x, self.n_u, self.n_g, self.n_c
        if self.phi is None:
            set_(self, "phi", _zeros_like_points(()))
            set_(self, "dphi", _zeros_like_points((n,)))
            set_(self, "d2phi", _zeros_like_points((n, n)))
        if self.g is None:
            set_(self, "g", _zeros_like_points((0,)))
            set_(self, "dg", _zeros_like_points((0, n)))
            set_(self, "d2g", _zeros_like_points((0, n, n)))
        if self.a is None:
            set_(self, "a", _zeros_like_points((0, nu)))
            set_(self, "b", _zeros_like_points((0,)))
            set_(self, "da", _zeros_like_points((0, nu, n)))
            set_(self, "db", _zeros_like_points((0, n)))
            set_(self, "d2a", _zeros_like_points((0, nu, n, n)))
            set_(self, "d2b", _zeros_like_points((0, n, n)))

        analytic = set()
        for name in _VALUE_NAMES:
            if getattr(self, "d" + name) is not None:
                analytic.add("d" + name)
            else:
                set_(self, "d" + name, _fd_wrapper(getattr(self, name)))
            if getattr(self, "d2" + name) is not None:
                analytic.add("d2" + name)
            else:
                set_(self, "d2" + name, _fd_wrapper(getattr(self, "d" + name)))
        if self.h is not None and self.dh is None:
            set_(self, "dh", _boundary_fd(self.h, n))
        set_(self, "analytic", frozenset(analytic))

    @property
    def fixed_initial_state(self):
        return self.initial_state is not None

    def boundary(self, x0, xT):
        """Boundary residual ``h(x(0), x(T))``."""
        if self.fixed_initial_state:
            return np.asarray(x0, dtype=float) - self.initial_state
        return np.asarray(self.h(x0, xT), dtype=float)

    def boundary_jac(self, x0, xT):
        if self.fixed_initial_state:
            return np.eye(self.n_x), np.zeros((self.n_x, self.n_x))
        H0, HT = self.dh(x0, xT)
        return np.asarray(H0, dtype=float), np.asarray(HT, dtype=float)


def _fd_wrapper(fun):
    def jac(x):
        return central_difference(fun, x)

    jac.finite_difference = True
    return jac


def _boundary_fd(h, n):
    def dh(x0, xT):
        x0 = np.asarray(x0, dtype=float)
        xT = np.asarray(xT, dtype=float)
        z = np.concatenate([x0, xT])[:, None]
        J = central_difference(lambda v: np.asarray(h(v[:n, 0], v[n:, 0]))[:, None], z)[..., 0]
        return J[:, :n], J[:, n:]

    return dh


def _as_points(v, rows):
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    if single:
        v = v[:, None]
    if v.shape[0] != rows:
        raise ConfigurationError(f"expected leading dimension {rows}, got {v.shape[0]}")
    return v, single


def _checked(problem, name, *args):
    out = np.asarray(getattr(problem, name)(*args), dtype=float)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(name)
    return out


def _check_shape(name, out, expected):
    if out.shape != expected:
        raise ConfigurationError(f"callback {name!r} returned shape {out.shape}, expected {expected}")


def eval_dynamics(problem: OcpProblem, x, u):
    """``f1(x) + f2(x).u`` at one point or a batch of points."""
    x, single = _as_points(x, problem.n_x)
    u, _ = _as_points(u, problem.n_u)
    m = x.shape[1]
    f1 = _checked(problem, "f1", x)
    f2 = _checked(problem, "f2", x)
    _check_shape("f1", f1, (problem.n_x, m))
    _check_shape("f2", f2, (problem.n_x, problem.n_u, m))
    out = f1 + np.einsum("ijm,jm->im", f2, u)
    return out[:, 0] if single else out


def eval_mixed(problem: OcpProblem, x, u):
    """Mixed constraint values ``a(x).u + b(x)``."""
    x, single = _as_points(x, problem.n_x)
    u, _ = _as_points(u, problem.n_u)
    m = x.shape[1]
    a = _checked(problem, "a", x)
    b = _checked(problem, "b", x)
    _check_shape("a", a, (problem.n_c, problem.n_u, m))
    _check_shape("b", b, (problem.n_c, m))
    out = np.einsum("ijm,jm->im", a, u) + b
    return out[:, 0] if single else out


def eval_state_constraints(problem: OcpProblem, x):
    x, single = _as_points(x, problem.n_x)
    out = _checked(problem, "g", x)
    _check_shape("g", out, (problem.n_g, x.shape[1]))
    return out[:, 0] if single else out


def running_cost(problem: OcpProblem, x, u):
    """``l1(x) + l2(x).u`` (plus the optional quadratic control term)."""
    x, single = _as_points(x, problem.n_x)
    u, _ = _as_points(u, problem.n_u)
    out = _checked(problem, "l1", x) + np.einsum("jm,jm->m", _checked(problem, "l2", x), u)
    if problem.control_weight is not None:
        out = out + 0.5 * np.einsum("jm,jk,km->m", u, problem.control_weight, u)
    return out[0] if single else out


@dataclass
class DerivativeCheck:
    name: str
    max_rel_error: float
    flagged: list


@dataclass
class ValidationReport:
    checks: dict
    rtol: float = DERIVATIVE_RTOL

    @property
    def ok(self):
        return not any(c.flagged for c in self.checks.values())

    @property
    def flagged(self):
        return {k: c.flagged for k, c in self.checks.items() if c.flagged}

    def __str__(self):
        lines = []
        for name, c in self.checks.items():
            mark = "FLAG" if c.flagged else "ok"
            lines.append(f"{name:6s} {c.max_rel_error:10.3e} {mark}")
        return "\n".join(lines)


def sample_points(problem: OcpProblem, n=20, seed=0):
    """Random ``(x, u)`` pairs drawn from the declared state box."""
    rng = np.random.default_rng(seed)
    lo, hi = problem.state_box
    xs = rng.uniform(lo, hi, size=(n, problem.n_x))
    us = rng.uniform(-1.0, 1.0, size=(n, problem.n_u))
    return list(zip(xs, us))


def validate_derivatives(problem: OcpProblem, points=None, rtol=DERIVATIVE_RTOL):
    """Compare every analytic derivative against central differences.

    The relative error of an entry is ``|analytic - fd| / max(1, |fd|)``.
    Entries above ``rtol`` are listed as ``(point, index)`` tuples.
    Finite-difference fallbacks are not checked against themselves.
    """
    if points is None:
        points = sample_points(problem)
    if len(points) == 0:
        raise ConfigurationError("at least one sample point is required")
    X = np.stack([np.asarray(p[0], dtype=float) for p in points], axis=1)
    checks = {}
    for name in _VALUE_NAMES:
        for order, lower in (("d", name), ("d2", "d" + name)):
            dname = order + name
            if dname not in problem.analytic:
                continue
            analytic = np.asarray(getattr(problem, dname)(X), dtype=float)
            fd = central_difference(getattr(problem, lower), X)
            err = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
            bad = np.argwhere(err > rtol)
            flagged = [(int(ix[-1]), tuple(int(i) for i in ix[:-1])) for ix in bad]
            checks[dname] = DerivativeCheck(dname, float(err.max(initial=0.0)), flagged)
    return ValidationReport(checks, rtol)
