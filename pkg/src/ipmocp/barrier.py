"""Log barrier, pre-Hamiltonian and penalized pre-Hamiltonian.

All functions accept a single point (1-D arrays) or a batch of points
(2-D arrays with points along the last axis).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, InteriorityError
from .problem import OcpProblem, _as_points


def log_barrier(w):
    """``-log(-w)`` for ``w < 0`` and ``+inf`` otherwise."""
    w = np.asarray(w, dtype=float)
    out = np.full(w.shape, np.inf)
    neg = w < 0
    out[neg] = -np.log(-w[neg])
    return out[()] if out.ndim == 0 else out


def log_barrier_deriv(w):
    """``-1/w``; raises :class:`DomainError` unless ``w < 0``."""
    w = np.asarray(w, dtype=float)
    if not np.all(w < 0):
        raise DomainError("barrier derivative requires w < 0")
    out = -1.0 / w
    return out[()] if out.ndim == 0 else out


def log_barrier_deriv2(w):
    """``1/w**2`` for ``w < 0``."""
    w = np.asarray(w, dtype=float)
    if not np.all(w < 0):
        raise DomainError("barrier second derivative requires w < 0")
    out = 1.0 / (w * w)
    return out[()] if out.ndim == 0 else out


class HamiltonianTerms:
    """Batched evaluation of H and the constraint data at points ``(x, u, p)``.

    Arrays carry the point index on the last axis.  Second derivatives are
    computed lazily since only the Jacobian assembly needs them.
    """

    def __init__(self, problem: OcpProblem, x, u, p):
        self.problem = problem
        self.x, self.u, self.p = x, u, p
        pr = problem
        self.f1 = np.asarray(pr.f1(x), dtype=float)
        self.f2 = np.asarray(pr.f2(x), dtype=float)
        self.df1 = np.asarray(pr.df1(x), dtype=float)
        self.df2 = np.asarray(pr.df2(x), dtype=float)
        self.l2 = np.asarray(pr.l2(x), dtype=float)
        self.dl1 = np.asarray(pr.dl1(x), dtype=float)
        self.dl2 = np.asarray(pr.dl2(x), dtype=float)
        self.g = np.asarray(pr.g(x), dtype=float)
        self.dg = np.asarray(pr.dg(x), dtype=float)
        self.a = np.asarray(pr.a(x), dtype=float)
        self.da = np.asarray(pr.da(x), dtype=float)
        self.c = np.einsum("ijm,jm->im", self.a, u) + np.asarray(pr.b(x), dtype=float)
        self.dc_x = np.einsum("ijkm,jm->ikm", self.da, u) + np.asarray(pr.db(x), dtype=float)

    @property
    def f(self):
        return self.f1 + np.einsum("ijm,jm->im", self.f2, self.u)

    @property
    def f_x(self):
        return self.df1 + np.einsum("ijkm,jm->ikm", self.df2, self.u)

    def value(self):
        pr = self.problem
        out = np.asarray(pr.l1(self.x), dtype=float) + np.einsum("jm,jm->m", self.l2, self.u)
        out = out + np.einsum("im,im->m", self.p, self.f)
        if pr.control_weight is not None:
            out = out + 0.5 * np.einsum("jm,jk,km->m", self.u, pr.control_weight, self.u)
        return out

    def H_x(self):
        return (self.dl1 + np.einsum("jkm,jm->km", self.dl2, self.u)
                + np.einsum("im,ikm->km", self.p, self.f_x))

    def H_u(self):
        out = self.l2 + np.einsum("im,ijm->jm", self.p, self.f2)
        if self.problem.control_weight is not None:
            out = out + self.problem.control_weight @ self.u
        return out

    def H_xx(self):
        pr, u, p = self.problem, self.u, self.p
        d2f = np.asarray(pr.d2f1(self.x)) + np.einsum("ijklm,jm->iklm", np.asarray(pr.d2f2(self.x)), u)
        return (np.asarray(pr.d2l1(self.x)) + np.einsum("jklm,jm->klm", np.asarray(pr.d2l2(self.x)), u)
                + np.einsum("im,iklm->klm", p, d2f))

    def H_ux(self):
        """``d(H_u)/dx`` with shape ``(n_u, n_x, m)``."""
        return self.dl2 + np.einsum("im,ijkm->jkm", self.p, self.df2)

    def H_uu(self):
        m = self.x.shape[1]
        R = self.problem.control_weight
        if R is None:
            return np.zeros((self.problem.n_u, self.problem.n_u, m))
        return np.repeat(R[:, :, None], m, axis=2)

    def g_xx(self):
        return np.asarray(self.problem.d2g(self.x), dtype=float)

    def c_xx(self):
        pr = self.problem
        return (np.einsum("ijklm,jm->iklm", np.asarray(pr.d2a(self.x)), self.u)
                + np.asarray(pr.d2b(self.x)))


def _weighted_gradients(terms, w_g, w_c):
    """Gradients of ``H + w_g.g + w_c.c`` for multiplier weights ``w``."""
    Lx = (terms.H_x() + np.einsum("im,ikm->km", w_g, terms.dg)
          + np.einsum("im,ikm->km", w_c, terms.dc_x))
    Lu = terms.H_u() + np.einsum("im,ijm->jm", w_c, terms.a)
    return Lx, Lu


def pre_hamiltonian(problem: OcpProblem, x, u, p):
    """``l(x, u) + p.f(x, u)``."""
    x, single = _as_points(x, problem.n_x)
    u, _ = _as_points(u, problem.n_u)
    p, _ = _as_points(p, problem.n_x)
    out = HamiltonianTerms(problem, x, u, p).value()
    return out[0] if single else out


@dataclass
class BarrierContext:
    """Penalized pre-Hamiltonian data at strictly interior point(s).

    Construction evaluates and caches the problem callbacks; it raises
    :class:`InteriorityError` naming the first violated constraint when
    ``g(x) < 0`` or ``c(x, u) < 0`` fails.
    """

    problem: OcpProblem
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    eps: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise ConfigurationError(f"barrier parameter must be non-negative, got {self.eps}")
        pr = self.problem
        self.x, self.single = _as_points(self.x, pr.n_x)
        self.u, _ = _as_points(self.u, pr.n_u)
        self.p, _ = _as_points(self.p, pr.n_x)
        self.terms = HamiltonianTerms(pr, self.x, self.u, self.p)
        for kind, vals in (("g", self.terms.g), ("c", self.terms.c)):
            bad = np.argwhere(~(vals < 0))
            if bad.size:
                i, j = bad[0]
                raise InteriorityError(
                    f"constraint {kind}[{i}] = {vals[i, j]:.3g} is not strictly negative at point {j}",
                    kind=kind, index=int(i), node=int(j))
        self.w_g = -self.eps / self.terms.g
        self.w_c = -self.eps / self.terms.c

    def _out(self, v):
        return v[..., 0] if self.single else v


def penalized_hamiltonian(ctx: BarrierContext):
    t = ctx.terms
    pen = -np.log(-t.g).sum(axis=0) - np.log(-t.c).sum(axis=0)
    return ctx._out(t.value() + ctx.eps * pen)


def penalized_hamiltonian_grad_x(ctx: BarrierContext):
    return ctx._out(_weighted_gradients(ctx.terms, ctx.w_g, ctx.w_c)[0])


def penalized_hamiltonian_grad_u(ctx: BarrierContext):
    return ctx._out(_weighted_gradients(ctx.terms, ctx.w_g, ctx.w_c)[1])


def penalized_hamiltonian_hess_uu(ctx: BarrierContext):
    """``H_uu + sum_i eps psi''(c_i) a_i a_i^T``; H_uu vanishes for affine H."""
    t = ctx.terms
    curv = ctx.eps / t.c ** 2
    out = t.H_uu() + np.einsum("ijm,im,ikm->jkm", t.a, curv, t.a)
    return ctx._out(out)
