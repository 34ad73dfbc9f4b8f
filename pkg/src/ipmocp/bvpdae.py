"""Collocation solver for two-point boundary value problems in index-1 DAEs.

The system is::

    y' = rhs(t, y, z, q)        differential unknowns y
    0  = alg(t, y, z, q)        algebraic unknowns z
    0  = bc(y(0), y(T), q)      n_diff + n_par boundary residuals

with unknown parameters ``q``.  Each mesh interval carries the 3-stage
Lobatto IIIA scheme (Simpson collocation, as in ``bvp4c``): the cubic
interpolant of ``y`` satisfies the differential equation at both ends and
at the midpoint, and the algebraic equations are imposed at every node and
every midpoint, with a separate unknown ``z`` per midpoint.  All unknowns
are found by one global damped Newton iteration; the mesh is refined
until the residual of the continuous extension drops below the tolerance.

Callbacks are vectorized: ``t`` has shape ``(m,)``, ``y`` ``(n_diff, m)``,
``z`` ``(n_alg, m)`` and ``q`` ``(n_par,)``.  Jacobian callbacks return
triples of arrays ``(d/dy, d/dz, d/dq)`` with the point axis last, e.g.
``(n_diff, n_diff, m)``.  The optional ``guard(t, y, z)`` returns margins
of shape ``(k, m)`` that must stay strictly positive along the iteration.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .errors import (BudgetError, ConfigurationError, InteriorityError, LineSearchError,
                     NonConvergenceError, SingularJacobianError)

EPS = np.finfo(float).eps
FD_STEP = np.sqrt(EPS)
MIN_NODES = 5


@dataclass(frozen=True)
class BvpDaeSystem:
    n_diff: int
    n_alg: int
    n_par: int
    rhs: Callable
    alg: Optional[Callable]
    bc: Callable
    rhs_jac: Optional[Callable] = None
    alg_jac: Optional[Callable] = None
    bc_jac: Optional[Callable] = None
    guard: Optional[Callable] = None

    def __post_init__(self):
        if self.n_diff <= 0 or self.n_alg < 0 or self.n_par < 0:
            raise ConfigurationError("need n_diff > 0 and non-negative n_alg, n_par")
        if self.n_alg and self.alg is None:
            raise ConfigurationError("n_alg > 0 requires an algebraic residual")

    @property
    def n_bc(self):
        return self.n_diff + self.n_par

    def eval_alg(self, t, y, z, q):
        if self.n_alg == 0:
            return np.zeros((0, np.size(t)))
        return np.asarray(self.alg(t, y, z, q), dtype=float)

    def eval_rhs_jac(self, t, y, z, q):
        if self.rhs_jac is not None:
            return tuple(np.asarray(J, dtype=float) for J in self.rhs_jac(t, y, z, q))
        return _fd_point_jac(self.rhs, t, y, z, q)

    def eval_alg_jac(self, t, y, z, q):
        m = np.size(t)
        if self.n_alg == 0:
            return (np.zeros((0, self.n_diff, m)), np.zeros((0, 0, m)), np.zeros((0, self.n_par, m)))
        if self.alg_jac is not None:
            return tuple(np.asarray(J, dtype=float) for J in self.alg_jac(t, y, z, q))
        return _fd_point_jac(self.alg, t, y, z, q)

    def eval_bc_jac(self, ya, yb, q):
        if self.bc_jac is not None:
            return tuple(np.asarray(J, dtype=float) for J in self.bc_jac(ya, yb, q))
        return _fd_bc_jac(self.bc, ya, yb, q)


def _fd_point_jac(fun, t, y, z, q):
    f0 = np.asarray(fun(t, y, z, q), dtype=float)
    out = []
    for which, v in enumerate((y, z)):
        cols = []
        for k in range(v.shape[0]):
            step = FD_STEP * np.maximum(1.0, np.abs(v[k]))
            vv = v.copy()
            vv[k] += step
            args = [y, z]
            args[which] = vv
            cols.append((np.asarray(fun(t, args[0], args[1], q)) - f0) / step)
        out.append(np.stack(cols, axis=1) if cols else np.zeros((f0.shape[0], 0, f0.shape[1])))
    cols = []
    for k in range(q.shape[0]):
        step = FD_STEP * max(1.0, abs(q[k]))
        qq = q.copy()
        qq[k] += step
        cols.append((np.asarray(fun(t, y, z, qq)) - f0) / step)
    out.append(np.stack(cols, axis=1) if cols else np.zeros((f0.shape[0], 0, f0.shape[1])))
    return tuple(out)


def _fd_bc_jac(bc, ya, yb, q):
    b0 = np.asarray(bc(ya, yb, q), dtype=float)
    out = []
    for which, v in enumerate((ya, yb, q)):
        J = np.empty((b0.size, v.size))
        for k in range(v.size):
            step = FD_STEP * max(1.0, abs(v[k]))
            vv = v.copy()
            vv[k] += step
            args = [ya, yb, q]
            args[which] = vv
            J[:, k] = (np.asarray(bc(*args)) - b0) / step
        out.append(J)
    return tuple(out)


# ----------------------------------------------------------------------------
# Mesh solutions and interpolation


def _hermite(s, h, y0, y1, d0, d1):
    # anchored at the nearer node: exact at both nodes and for constants
    s2, s3 = s * s, s * s * s
    r = 1 - s
    near0 = s <= 0.5
    base = np.where(near0, y0, y1)
    blend = np.where(near0, (3 * s2 - 2 * s3) * (y1 - y0), (3 * r * r - 2 * r ** 3) * (y0 - y1))
    val = base + blend + h * ((s3 - 2 * s2 + s) * d0 + (s3 - s2) * d1)
    der = ((6 * s2 - 6 * s) / h * (y0 - y1) + (3 * s2 - 4 * s + 1) * d0 + (3 * s2 - 2 * s) * d1)
    return val, der


def _quadratic(s, z0, zm, z1):
    r = 1 - s
    curv = z0 - 2 * zm + z1
    return np.where(s <= 0.5, z0 + s * (4 * zm - 3 * z0 - z1) + 2 * s * s * curv,
                    z1 + r * (4 * zm - 3 * z1 - z0) + 2 * r * r * curv)


@dataclass
class MeshSolution:
    """Node values of a BVP-DAE iterate plus its piecewise interpolants.

    ``y`` is interpolated by the cubic Hermite polynomial built from node
    values and node slopes ``yp`` (the collocation polynomial once
    converged); ``z`` by the quadratic through the node and midpoint values.
    """

    t: np.ndarray
    y: np.ndarray
    z: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_mid: Optional[np.ndarray] = None
    yp: Optional[np.ndarray] = None
    residual_norm: float = np.nan
    rms_residuals: Optional[np.ndarray] = None
    newton_iterations: int = 0
    status: str = "guess"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.z = np.asarray(self.z, dtype=float).reshape(-1, self.t.size)
        self.q = np.asarray(self.q, dtype=float).ravel()
        if self.t.ndim != 1 or self.t.size < 2:
            raise ConfigurationError("mesh needs at least two nodes")
        if not np.all(np.diff(self.t) > 0):
            raise ConfigurationError("mesh must be strictly increasing")
        if self.y.shape[1] != self.t.size:
            raise ConfigurationError("y must have one column per mesh node")
        if self.z_mid is None:
            self.z_mid = 0.5 * (self.z[:, :-1] + self.z[:, 1:])
        self.z_mid = np.asarray(self.z_mid, dtype=float).reshape(self.z.shape[0], self.t.size - 1)
        if self.yp is None:
            self.yp = np.gradient(self.y, self.t, axis=1) if self.t.size > 2 else np.zeros_like(self.y)

    @property
    def n_nodes(self):
        return self.t.size

    @property
    def horizon(self):
        return self.t[-1] - self.t[0]

    def _locate(self, tt):
        tt = np.asarray(tt, dtype=float)
        i = np.clip(np.searchsorted(self.t, tt, side="right") - 1, 0, self.t.size - 2)
        h = self.t[i + 1] - self.t[i]
        return i, h, (tt - self.t[i]) / h

    def y_at(self, tt, derivative=False):
        i, h, s = self._locate(tt)
        val, der = _hermite(s, h, self.y[:, i], self.y[:, i + 1], self.yp[:, i], self.yp[:, i + 1])
        return der if derivative else val

    def z_at(self, tt):
        i, _, s = self._locate(tt)
        return _quadratic(s, self.z[:, i], self.z_mid[:, i], self.z[:, i + 1])

    def __call__(self, tt):
        return self.y_at(tt), self.z_at(tt)

    def copy(self):
        return replace(self, t=self.t.copy(), y=self.y.copy(), z=self.z.copy(), q=self.q.copy(),
                       z_mid=self.z_mid.copy(), yp=self.yp.copy())


def interpolate_onto(solution: MeshSolution, new_mesh, guard=None) -> MeshSolution:
    """Transfer ``solution`` to ``new_mesh`` through its interpolants.

    With a ``guard``, points where the interpolated values are not strictly
    admissible fall back to linear interpolation between the bracketing old
    nodes, then to the nearest old node.
    """
    t = np.asarray(new_mesh, dtype=float)
    if t[0] < solution.t[0] - 1e-12 * solution.horizon or t[-1] > solution.t[-1] + 1e-12 * solution.horizon:
        raise ConfigurationError("new mesh must lie within the solution interval")
    tm = 0.5 * (t[:-1] + t[1:])
    y, z = solution(t)
    yp = solution.y_at(t, derivative=True)
    y_mid, z_mid = solution(tm)
    if guard is not None:
        for tt, yy, zz in ((t, y, z), (tm, y_mid, z_mid)):
            _repair(solution, guard, tt, yy, zz)
    return MeshSolution(t, y, z, solution.q.copy(), z_mid, yp, status="interpolated")


def _repair(solution, guard, tt, yy, zz):
    bad = np.any(np.asarray(guard(tt, yy, zz)) <= 0, axis=0)
    if not bad.any():
        return
    i, _, s = solution._locate(tt[bad])
    old = solution
    yy[:, bad] = (1 - s) * old.y[:, i] + s * old.y[:, i + 1]
    zz[:, bad] = (1 - s) * old.z[:, i] + s * old.z[:, i + 1]
    still = np.zeros_like(bad)
    still[bad] = np.any(np.asarray(guard(tt[bad], yy[:, bad], zz[:, bad])) <= 0, axis=0)
    if still.any():
        i, _, s = solution._locate(tt[still])
        j = np.where(s < 0.5, i, i + 1)
        yy[:, still] = old.y[:, j]
        zz[:, still] = old.z[:, j]


def _project_algebraic(system, t, y, z, q, sweeps=8):
    """Pointwise Newton on ``alg(t, y, z) = 0`` for ``z`` with ``y`` held fixed.

    Updates ``z`` in place, point by point, only where the algebraic
    residual decreases and the guard still holds.
    """
    if system.n_alg == 0 or t.size == 0:
        return
    r = np.asarray(system.eval_alg(t, y, z, q), dtype=float)
    nr = np.max(np.abs(r), axis=0)
    for _ in range(sweeps):
        Gz = np.moveaxis(system.eval_alg_jac(t, y, z, q)[1], -1, 0)
        rhs = np.moveaxis(r, -1, 0)[..., None]
        try:
            dz = np.linalg.solve(Gz, rhs)[..., 0].T
        except np.linalg.LinAlgError:
            dz = (np.linalg.pinv(Gz) @ rhs)[..., 0].T
        zt = z - dz
        with np.errstate(all="ignore"):
            rt = np.asarray(system.eval_alg(t, y, zt, q), dtype=float)
            nt = np.max(np.abs(rt), axis=0)
            ok = np.isfinite(nt) & (nt < nr)
            if system.guard is not None:
                ok &= np.all(np.asarray(system.guard(t, y, zt)) > 0, axis=0)
        if not ok.any():
            return
        z[:, ok], r[:, ok], nr[ok] = zt[:, ok], rt[:, ok], nt[ok]


# ----------------------------------------------------------------------------
# Discretization


class _Collocation:
    """Residual and Jacobian of the collocation equations on a fixed mesh.

    Unknowns are ordered node by node, ``[y_i, z_i, zmid_i]`` for
    ``i < N`` then ``[y_N, z_N]`` and finally ``q``.  Rows follow the same
    blocks: ``[alg(node i), collocation_i, alg(mid i)]``, ``alg(node N)``
    and the boundary residuals.  This keeps the Jacobian almost block
    diagonal with a dense trailing parameter column block.
    """

    def __init__(self, system: BvpDaeSystem, t):
        self.sys = system
        self.t = np.asarray(t, dtype=float)
        self.h = np.diff(self.t)
        self.tm = self.t[:-1] + 0.5 * self.h
        self.N = self.t.size - 1
        ny, nz, nq = system.n_diff, system.n_alg, system.n_par
        self.ny, self.nz, self.nq = ny, nz, nq
        self.s = ny + 2 * nz
        self.size = self.N * self.s + ny + nz + nq
        self._jac_index = None

    def pack(self, sol: MeshSolution):
        N, s, ny, nz = self.N, self.s, self.ny, self.nz
        v = np.empty(self.size)
        core = v[:N * s].reshape(N, s)
        core[:, :ny] = sol.y[:, :-1].T
        core[:, ny:ny + nz] = sol.z[:, :-1].T
        core[:, ny + nz:] = sol.z_mid.T
        v[N * s:N * s + ny] = sol.y[:, -1]
        v[N * s + ny:N * s + ny + nz] = sol.z[:, -1]
        v[N * s + ny + nz:] = sol.q
        return v

    def unpack(self, v):
        N, s, ny, nz = self.N, self.s, self.ny, self.nz
        core = v[:N * s].reshape(N, s)
        y = np.empty((ny, N + 1))
        z = np.empty((nz, N + 1))
        y[:, :-1] = core[:, :ny].T
        z[:, :-1] = core[:, ny:ny + nz].T
        y[:, -1] = v[N * s:N * s + ny]
        z[:, -1] = v[N * s + ny:N * s + ny + nz]
        zm = core[:, ny + nz:].T.copy()
        q = v[N * s + ny + nz:].copy()
        return y, z, zm, q

    def to_solution(self, v, state=None, **kw):
        y, z, zm, q = self.unpack(v)
        if state is None:
            state = self.evaluate(v)
        return MeshSolution(self.t.copy(), y, z, q, zm, state["f"].copy(), **kw)

    def midpoints(self, y, f):
        return 0.5 * (y[:, :-1] + y[:, 1:]) - self.h / 8 * (f[:, 1:] - f[:, :-1])

    def evaluate(self, v):
        sys = self.sys
        y, z, zm, q = self.unpack(v)
        f = np.asarray(sys.rhs(self.t, y, z, q), dtype=float)
        ym = self.midpoints(y, f)
        fm = np.asarray(sys.rhs(self.tm, ym, zm, q), dtype=float)
        col = y[:, 1:] - y[:, :-1] - self.h / 6 * (f[:, :-1] + 4 * fm + f[:, 1:])
        gn = sys.eval_alg(self.t, y, z, q)
        gm = sys.eval_alg(self.tm, ym, zm, q)
        bc = np.asarray(sys.bc(y[:, 0], y[:, -1], q), dtype=float)
        if bc.shape != (sys.n_bc,):
            raise ConfigurationError(f"bc returned {bc.shape} residuals, expected ({sys.n_bc},)")
        N, s, ny, nz = self.N, self.s, self.ny, self.nz
        F = np.empty(self.size)
        core = F[:N * s].reshape(N, s)
        core[:, :nz] = gn[:, :-1].T
        core[:, nz:nz + ny] = col.T
        core[:, nz + ny:] = gm.T
        F[N * s:N * s + nz] = gn[:, -1]
        F[N * s + nz:] = bc
        return dict(v=v, y=y, z=z, zm=zm, q=q, f=f, ym=ym, fm=fm, col=col, gn=gn, gm=gm, bc=bc, F=F)

    def scaled_residual(self, st):
        """Max-norm of the residual relative to the size of the local terms."""
        parts = [np.abs(st["col"]) / (self.h * (1 + np.abs(st["fm"])))]
        if self.nz:
            parts.append(np.abs(st["gn"]) / (1 + np.abs(st["z"])))
            parts.append(np.abs(st["gm"]) / (1 + np.abs(st["zm"])))
        yb = np.maximum(np.abs(st["y"][:, 0]).max(), np.abs(st["y"][:, -1]).max())
        parts.append(np.abs(st["bc"]) / (1 + yb))
        return max(float(p.max(initial=0.0)) for p in parts)

    def margins(self, st):
        if self.sys.guard is None:
            return None
        gn = np.asarray(self.sys.guard(self.t, st["y"], st["z"]), dtype=float)
        gm = np.asarray(self.sys.guard(self.tm, st["ym"], st["zm"]), dtype=float)
        return np.concatenate([gn, gm], axis=1)

    def _indices(self):
        if self._jac_index is not None:
            return self._jac_index
        N, s, ny, nz, nq = self.N, self.s, self.ny, self.nz, self.nq
        rows, cols = [], []
        base = np.arange(N) * s
        # alg at nodes 0..N-1
        r = base[:, None, None] + np.arange(nz)[None, :, None]
        c = base[:, None, None] + np.arange(ny + nz)[None, None, :]
        rows.append(np.broadcast_to(r, (N, nz, ny + nz)).ravel())
        cols.append(np.broadcast_to(c, (N, nz, ny + nz)).ravel())
        # collocation and midpoint alg rows
        w = 2 * ny + 3 * nz
        r = base[:, None, None] + nz + np.arange(ny + nz)[None, :, None]
        c = base[:, None, None] + np.arange(w)[None, None, :]
        rows.append(np.broadcast_to(r, (N, ny + nz, w)).ravel())
        cols.append(np.broadcast_to(c, (N, ny + nz, w)).ravel())
        # alg at node N
        r = N * s + np.arange(nz)
        c = N * s + np.arange(ny + nz)
        rows.append(np.repeat(r, ny + nz))
        cols.append(np.tile(c, nz))
        # boundary rows
        rb = N * s + nz + np.arange(ny + nq)
        rows.append(np.repeat(rb, ny))
        cols.append(np.tile(np.arange(ny), ny + nq))
        rows.append(np.repeat(rb, ny))
        cols.append(np.tile(N * s + np.arange(ny), ny + nq))
        # parameter columns, every row
        if nq:
            rall = np.arange(self.size)
            rows.append(np.repeat(rall, nq))
            cols.append(np.tile(N * s + ny + nz + np.arange(nq), self.size))
        self._jac_index = (np.concatenate(rows), np.concatenate(cols))
        return self._jac_index

    def jacobian(self, st):
        sys = self.sys
        N, ny, nz, nq = self.N, self.ny, self.nz, self.nq
        t, tm, h = self.t, self.tm, self.h
        y, z, zm, q, ym = st["y"], st["z"], st["zm"], st["q"], st["ym"]
        mv = lambda J: np.moveaxis(J, -1, 0)  # noqa: E731
        Fy, Fz, Fq = map(mv, sys.eval_rhs_jac(t, y, z, q))
        Fym, Fzm, Fqm = map(mv, sys.eval_rhs_jac(tm, ym, zm, q))
        Gy, Gz, Gq = map(mv, sys.eval_alg_jac(t, y, z, q))
        Gym, Gzm, Gqm = map(mv, sys.eval_alg_jac(tm, ym, zm, q))
        I = np.eye(ny)
        hh = h[:, None, None]
        dm_dyi = 0.5 * I + hh / 8 * Fy[:-1]
        dm_dzi = hh / 8 * Fz[:-1]
        dm_dyj = 0.5 * I - hh / 8 * Fy[1:]
        dm_dzj = -hh / 8 * Fz[1:]
        dm_dq = -hh / 8 * (Fq[1:] - Fq[:-1])

        w = 2 * ny + 3 * nz
        B = np.empty((N, ny + nz, w))
        c = B[:, :ny]
        c[:, :, :ny] = -I - hh / 6 * (Fy[:-1] + 4 * Fym @ dm_dyi)
        c[:, :, ny:ny + nz] = -hh / 6 * (Fz[:-1] + 4 * Fym @ dm_dzi)
        c[:, :, ny + nz:ny + 2 * nz] = -hh / 6 * 4 * Fzm
        c[:, :, ny + 2 * nz:2 * ny + 2 * nz] = I - hh / 6 * (4 * Fym @ dm_dyj + Fy[1:])
        c[:, :, 2 * ny + 2 * nz:] = -hh / 6 * (4 * Fym @ dm_dzj + Fz[1:])
        a = B[:, ny:]
        a[:, :, :ny] = Gym @ dm_dyi
        a[:, :, ny:ny + nz] = Gym @ dm_dzi
        a[:, :, ny + nz:ny + 2 * nz] = Gzm
        a[:, :, ny + 2 * nz:2 * ny + 2 * nz] = Gym @ dm_dyj
        a[:, :, 2 * ny + 2 * nz:] = Gym @ dm_dzj

        A = np.concatenate([Gy, Gz], axis=2)  # (N+1, nz, ny+nz)
        Ba, Bb, Bq = sys.eval_bc_jac(y[:, 0], y[:, -1], q)
        data = [A[:-1].ravel(), B.ravel(), A[-1].ravel(), Ba.ravel(), Bb.ravel()]
        if nq:
            Q = np.empty((self.size, nq))
            s = self.s
            core = Q[:N * s].reshape(N, s, nq)
            core[:, :nz] = Gq[:-1]
            core[:, nz:nz + ny] = -hh / 6 * (Fq[:-1] + 4 * (Fqm + Fym @ dm_dq) + Fq[1:])
            core[:, nz + ny:] = Gqm + Gym @ dm_dq
            Q[N * s:N * s + nz] = Gq[-1]
            Q[N * s + nz:] = Bq
            data.append(Q.ravel())
        rows, cols = self._indices()
        return csc_matrix((np.concatenate(data), (rows, cols)), shape=(self.size, self.size))


# ----------------------------------------------------------------------------
# Newton iteration


@dataclass
class StepInfo:
    residual: float
    trial_residual: float
    damping: float
    step_norm: float
    natural_level: float
    trial_natural_level: float
    boundary_limited: bool


@dataclass
class SolverOptions:
    """Tolerances and limits for :func:`solve`.

    ``tol`` bounds the RMS residual of the continuous extension on every
    mesh interval; Newton stops once the weighted Newton correction is
    below ``newton_tol_factor * tol``.
    """

    tol: float = 1e-6
    max_nodes: int = 10_000
    max_newton: int = 50
    min_damping: float = 1e-10
    tau: float = 0.99
    sigma: float = 0.1
    newton_tol_factor: float = 0.05
    max_refinements: int = 60
    adapt: bool = True
    trace: Optional[object] = None


def _factorize(J, best):
    try:
        return splu(J)
    except RuntimeError as exc:
        Jc = J.tocsr()
        empty = np.flatnonzero(np.diff(Jc.indptr) == 0)
        loc = int(empty[0]) if empty.size else None
        raise SingularJacobianError(f"collocation Jacobian is singular ({exc})", best, loc) from exc


def _weights(v):
    return 1.0 / (1.0 + np.abs(v))


def _admissible_ratio(m_new, m_cur, tau):
    """True when every currently positive margin keeps a ``1 - tau`` fraction."""
    pos = m_cur > 0
    return bool(np.all(m_new[pos] >= (1 - tau) * m_cur[pos]))


def _damped_step(coll, st, opts, lu=None):
    """One damped Newton step from evaluated state ``st``."""
    F = st["F"]
    if lu is None:
        lu = _factorize(coll.jacobian(st), None)
    dv = -lu.solve(F)
    if not np.all(np.isfinite(dv)):
        raise SingularJacobianError("Newton step is not finite", None)
    v = st["v"]
    wts = _weights(v)
    nl0 = float(np.linalg.norm(dv * wts))
    res0 = coll.scaled_residual(st)
    m_cur = coll.margins(st)
    alpha = 1.0
    limited = False
    while alpha >= opts.min_damping:
        vt = v + alpha * dv
        trial = coll.evaluate(vt)
        if not np.all(np.isfinite(trial["F"])):
            alpha *= 0.5
            continue
        if m_cur is not None and not _admissible_ratio(coll.margins(trial), m_cur, opts.tau):
            limited = True
            alpha *= 0.5
            continue
        res_t = coll.scaled_residual(trial)
        dvt = -lu.solve(trial["F"])
        nl_t = float(np.linalg.norm(dvt * wts))
        if (nl_t <= (1 - opts.sigma * alpha) * nl0 or res_t <= (1 - opts.sigma * alpha) * res0
                or (res_t <= opts.newton_tol_factor * opts.tol and res_t <= res0)):
            info = StepInfo(res0, res_t, alpha, float(np.max(np.abs(alpha * dv) * wts)), nl0, nl_t, limited)
            return trial, info
        alpha *= 0.5
    raise LineSearchError("no admissible decrease along the Newton direction")


def newton_step(system: BvpDaeSystem, iterate: MeshSolution, options: SolverOptions | None = None):
    """Apply one damped Newton step to ``iterate`` on its own mesh.

    Returns the updated :class:`MeshSolution` and a :class:`StepInfo`.
    """
    opts = options or SolverOptions()
    coll = _Collocation(system, iterate.t)
    st = coll.evaluate(coll.pack(iterate))
    try:
        trial, info = _damped_step(coll, st, opts)
    except LineSearchError as exc:
        exc.best = iterate
        raise
    return coll.to_solution(trial["v"], trial, status="iterate"), info


def _newton(coll, v, opts, history=None):
    """Newton iteration on a fixed mesh; returns (state, iterations).

    Converged once the weighted size ``max |dv| / (1 + |v|)`` of the
    undamped Newton correction is below ``newton_tol_factor * tol``.
    Testing the correction rather than the residual keeps the criterion
    meaningful for algebraic equations with a small ``d alg / dz`` and for
    iterates sitting at roundoff distance from the barrier boundary.
    When the residual already meets the target and the correction stops
    contracting, the iterate is at the conditioning floor and is accepted.
    """
    st = coll.evaluate(v)
    target = opts.newton_tol_factor * opts.tol
    prev = np.inf
    for it in range(opts.max_newton):
        try:
            lu = _factorize(coll.jacobian(st), None)
            st_new, info = _damped_step(coll, st, opts, lu)
        except (SingularJacobianError, LineSearchError) as exc:
            exc.best = coll.to_solution(st["v"], st, status="failed")
            raise
        if history is not None:
            history.append(info)
        if opts.trace is not None:
            print(f"newton it={it + 1} nodes={coll.N + 1} residual={info.trial_residual:.3e} "
                  f"damping={info.damping:.3e} step={info.step_norm:.3e}"
                  + (" boundary" if info.boundary_limited else ""), file=opts.trace)
        st = st_new
        full = info.step_norm / info.damping
        if full <= target:
            return st, it + 1
        if info.trial_residual <= target and full > 0.5 * prev:
            return st, it + 1
        prev = full
    raise NonConvergenceError(
        f"Newton did not converge in {opts.max_newton} iterations "
        f"(scaled residual {coll.scaled_residual(st):.3e})",
        coll.to_solution(st["v"], st, status="failed"))


# ----------------------------------------------------------------------------
# Residual control and mesh refinement

_LOBATTO = (0.5 - 0.5 * np.sqrt(3 / 7), 0.5 + 0.5 * np.sqrt(3 / 7))


def estimate_residuals(system: BvpDaeSystem, sol: MeshSolution):
    """RMS residual of the continuous extension on every interval.

    The differential residual ``S' - rhs`` is taken relative to
    ``1 + |rhs|`` and the algebraic residual relative to ``1 + |z|``.
    Both are integrated by 5-point Lobatto quadrature, the endpoint terms
    vanishing by construction.
    """
    coll = _Collocation(system, sol.t)
    st = coll.evaluate(coll.pack(sol))
    h = coll.h
    y, f, z, zm, q = st["y"], st["f"], st["z"], st["zm"], st["q"]
    r_mid = np.sum((1.5 * st["col"] / h / (1 + np.abs(st["fm"]))) ** 2, axis=0)
    r_mid += _alg_defect(system, coll.tm, st["ym"], zm, q, st["gm"])
    r = []
    for s in _LOBATTO:
        tq = sol.t[:-1] + s * h
        S, dS = _hermite(s, h, y[:, :-1], y[:, 1:], f[:, :-1], f[:, 1:])
        zq = _quadratic(s, z[:, :-1], zm, z[:, 1:])
        fq = np.asarray(system.rhs(tq, S, zq, q), dtype=float)
        rk = np.sum(((dS - fq) / (1 + np.abs(fq))) ** 2, axis=0)
        if system.n_alg:
            rk += _alg_defect(system, tq, S, zq, q, system.eval_alg(tq, S, zq, q))
        r.append(rk)
    return np.sqrt(0.5 * (32 / 45 * r_mid + 49 / 90 * (r[0] + r[1])))


def _alg_defect(system, t, y, z, q, g):
    if system.n_alg == 0:
        return 0.0
    return np.sum((g / (1 + np.abs(z))) ** 2, axis=0)


def refine_mesh(system: BvpDaeSystem, solution: MeshSolution, tol, max_nodes=10_000):
    """Split intervals whose residual exceeds ``tol``.

    Intervals with ``tol < r < 100 tol`` get one new node, those with
    ``r >= 100 tol`` two.  While the mesh is being changed, neighbouring
    intervals that both have ``r < 0.01 tol`` are merged.  A mesh that
    already meets the tolerance is returned unchanged.
    """
    rms = solution.rms_residuals
    if rms is None or rms.size != solution.n_nodes - 1:
        rms = estimate_residuals(system, solution)
    one = (rms > tol) & (rms < 100 * tol)
    two = rms >= 100 * tol
    if not (one.any() or two.any()):
        return solution
    t = solution.t
    keep = np.ones(t.size, dtype=bool)
    small = rms < 0.01 * tol
    i = 0
    removable = keep.sum()
    while i < rms.size - 1:
        if small[i] and small[i + 1] and removable > MIN_NODES:
            keep[i + 1] = False
            removable -= 1
            i += 2
        else:
            i += 1
    h = np.diff(t)
    new = [t[keep], t[:-1][one] + 0.5 * h[one],
           t[:-1][two] + h[two] / 3, t[:-1][two] + 2 * h[two] / 3]
    mesh = np.unique(np.concatenate(new))
    if mesh.size > max_nodes:
        raise BudgetError(f"mesh refinement needs {mesh.size} nodes, budget is {max_nodes}",
                          solution, float(rms.max()))
    new = interpolate_onto(solution, mesh, system.guard)
    # interpolated algebraic variables can be far from consistent where
    # they vary over orders of magnitude (multipliers near activity)
    _project_algebraic(system, new.t, new.y, new.z, new.q)
    _project_algebraic(system, 0.5 * (new.t[:-1] + new.t[1:]), new.y_at(0.5 * (new.t[:-1] + new.t[1:])),
                       new.z_mid, new.q)
    return new


def solve(system: BvpDaeSystem, guess: MeshSolution, options: SolverOptions | None = None, **kw):
    """Solve the BVP-DAE starting from ``guess``.

    Keyword arguments override fields of :class:`SolverOptions`.  Returns a
    converged :class:`MeshSolution` whose interval residuals are all below
    ``tol``.  Raises :class:`NonConvergenceError`, :class:`LineSearchError`,
    :class:`SingularJacobianError` or :class:`BudgetError`; each carries the
    best iterate in ``best``.
    """
    opts = replace(options or SolverOptions(), **kw)
    if guess.n_nodes < MIN_NODES:
        raise ConfigurationError(f"mesh needs at least {MIN_NODES} nodes")
    if guess.y.shape[0] != system.n_diff or guess.z.shape[0] != system.n_alg:
        raise ConfigurationError("guess dimensions do not match the system")
    if guess.q.size != system.n_par:
        raise ConfigurationError(f"guess has {guess.q.size} parameters, system has {system.n_par}")
    if system.guard is not None:
        margin = np.asarray(system.guard(guess.t, guess.y, guess.z))
        if np.any(margin <= 0):
            node = int(np.argwhere(margin <= 0)[0][1])
            raise InteriorityError(f"initial guess is not admissible at node {node}", node=node)
    sol = guess
    total_it = 0
    for _ in range(opts.max_refinements):
        coll = _Collocation(system, sol.t)
        st, it = _newton(coll, coll.pack(sol), opts)
        total_it += it
        sol = coll.to_solution(st["v"], st, status="solved")
        sol.rms_residuals = estimate_residuals(system, sol)
        sol.residual_norm = float(sol.rms_residuals.max())
        sol.newton_iterations = total_it
        if opts.trace is not None:
            print(f"mesh nodes={sol.n_nodes} max_rms={sol.residual_norm:.3e} newton={it}", file=opts.trace)
        if sol.residual_norm <= opts.tol or not opts.adapt:
            sol.status = "converged" if sol.residual_norm <= opts.tol else "fixed-mesh"
            return sol
        sol = refine_mesh(system, sol, opts.tol, opts.max_nodes)
    raise BudgetError(f"tolerance not met after {opts.max_refinements} refinements", sol, sol.residual_norm)
