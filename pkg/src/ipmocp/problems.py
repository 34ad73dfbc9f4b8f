"""Built-in example problems."""
from __future__ import annotations

import numpy as np

from .problem import OcpProblem


def _const(value):
    value = np.asarray(value, dtype=float)

    def fun(x):
        return np.repeat(value[..., None], np.shape(x)[-1], axis=-1)

    return fun


def _zero(*shape):
    return _const(np.zeros(shape))


def robbins_problem(horizon=6.0, x0=(1.0, 0.0, 0.0)) -> OcpProblem:
    """Robbins' third-order state-constrained problem.

    Minimize the integral of ``x`` subject to ``x''' = u``, ``x >= 0`` and
    ``|u| <= 1`` from rest at ``x = 1``.  The chain is written first order
    as ``(x, x', x'')`` and the control bounds as the mixed constraints
    ``u - 1 <= 0`` and ``-u - 1 <= 0``.
    """

    def f1(x):
        return np.vstack([x[1], x[2], np.zeros_like(x[0])])

    df1 = np.zeros((3, 3))
    df1[0, 1] = df1[1, 2] = 1.0

    def l1(x):
        return x[0].copy()

    def g(x):
        return -x[:1].copy()

    return OcpProblem(
        n_x=3, n_u=1, horizon=horizon,
        f1=f1, df1=_const(df1), d2f1=_zero(3, 3, 3),
        f2=_const([[0.0], [0.0], [1.0]]), df2=_zero(3, 1, 3), d2f2=_zero(3, 1, 3, 3),
        l1=l1, dl1=_const([1.0, 0.0, 0.0]), d2l1=_zero(3, 3),
        l2=_zero(1), dl2=_zero(1, 3), d2l2=_zero(1, 3, 3),
        n_g=1, g=g, dg=_const([[-1.0, 0.0, 0.0]]), d2g=_zero(1, 3, 3),
        n_c=2, a=_const([[1.0], [-1.0]]), da=_zero(2, 1, 3), d2a=_zero(2, 1, 3, 3),
        b=_const([-1.0, -1.0]), db=_zero(2, 3), d2b=_zero(2, 3, 3),
        initial_state=np.asarray(x0, dtype=float),
        name="robbins",
    )


def lq_problem(A, B, Q, R, S=None, x0=None, horizon=1.0) -> OcpProblem:
    """Unconstrained linear-quadratic problem.

    ``x' = A x + B u`` with cost ``x(T).S.x(T)/2 + int x.Q.x/2 + u.R.u/2``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    n, nu = B.shape
    S = np.zeros((n, n)) if S is None else np.asarray(S, dtype=float)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    return OcpProblem(
        n_x=n, n_u=nu, horizon=horizon,
        f1=lambda x: A @ x, df1=_const(A), d2f1=_zero(n, n, n),
        f2=_const(B), df2=_zero(n, nu, n), d2f2=_zero(n, nu, n, n),
        l1=lambda x: 0.5 * np.einsum("im,ij,jm->m", x, Q, x), dl1=lambda x: Q @ x, d2l1=_const(Q),
        l2=_zero(nu), dl2=_zero(nu, n), d2l2=_zero(nu, n, n),
        phi=lambda x: 0.5 * np.einsum("im,ij,jm->m", x, S, x), dphi=lambda x: S @ x, d2phi=_const(S),
        control_weight=R, initial_state=x0, name="lq",
    )


def scalar_lq_problem() -> OcpProblem:
    """``x' = u``, ``x(0) = 1`` on ``[0, 1]`` with cost ``int (x^2 + u^2)/2``."""
    return lq_problem([[0.0]], [[1.0]], [[1.0]], [[1.0]], horizon=1.0)


PROBLEMS = {"robbins": robbins_problem, "lq": scalar_lq_problem}
