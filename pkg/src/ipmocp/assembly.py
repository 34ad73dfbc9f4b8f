"""Stationarity systems of the penalized problem as BVP-DAEs.

Unknown layout:

* primal: ``y = (x, p)``, ``z = u``, ``q = lambda``
* primal-dual: ``y = (x, p)``, ``z = (u, theta, eta)``, ``q = lambda``

``lambda`` (the boundary multiplier) is eliminated when the problem has a
fixed initial state: the costate at ``t = 0`` is then free and the
terminal condition reduces to ``p(T) = phi'(x(T))``.
"""
from __future__ import annotations

import numpy as np

from .barrier import HamiltonianTerms, _weighted_gradients
from .bvpdae import BvpDaeSystem, MeshSolution
from .errors import ConfigurationError
from .problem import OcpProblem

PRIMAL = "primal"
PRIMAL_DUAL = "primal-dual"


def _check_eps(eps):
    if not np.isfinite(eps) or eps <= 0:
        raise ConfigurationError(f"barrier parameter must be positive, got {eps}")


def _n_par(problem):
    return 0 if problem.fixed_initial_state else problem.n_h


def _boundary(problem: OcpProblem, n):
    """Boundary residual and Jacobian shared by both formulations."""
    fixed = problem.fixed_initial_state

    def dphi(x):
        return np.asarray(problem.dphi(x[:, None]), dtype=float)[:, 0]

    def d2phi(x):
        return np.asarray(problem.d2phi(x[:, None]), dtype=float)[:, :, 0]

    def bc(ya, yb, q):
        x0, p0, xT, pT = ya[:n], ya[n:], yb[:n], yb[n:]
        if fixed:
            return np.concatenate([x0 - problem.initial_state, pT - dphi(xT)])
        H0, HT = problem.boundary_jac(x0, xT)
        return np.concatenate([problem.boundary(x0, xT), p0 + H0.T @ q, pT - dphi(xT) - HT.T @ q])

    def bc_jac(ya, yb, q):
        x0, xT = ya[:n], yb[:n]
        I = np.eye(n)
        if fixed:
            Ba = np.zeros((2 * n, 2 * n))
            Bb = np.zeros((2 * n, 2 * n))
            Ba[:n, :n] = I
            Bb[n:, :n] = -d2phi(xT)
            Bb[n:, n:] = I
            return Ba, Bb, np.zeros((2 * n, 0))
        # second derivatives of h enter through the multiplier terms; take
        # them by differencing the residual itself (h is smooth)
        from .bvpdae import _fd_bc_jac
        return _fd_bc_jac(bc, ya, yb, q)

    return bc, bc_jac


def assemble_primal(problem: OcpProblem, eps: float) -> BvpDaeSystem:
    """Penalized stationarity system: state, costate and ``H^psi_u = 0``.

    The guard keeps every ``g`` and ``c`` strictly negative at nodes and
    midpoints.
    """
    _check_eps(eps)
    n, nu = problem.n_x, problem.n_u

    def terms(y, z):
        return HamiltonianTerms(problem, y[:n], z, y[n:])

    def rhs(t, y, z, q):
        T = terms(y, z)
        Lx, _ = _weighted_gradients(T, -eps / T.g, -eps / T.c)
        return np.vstack([T.f, -Lx])

    def alg(t, y, z, q):
        T = terms(y, z)
        return _weighted_gradients(T, -eps / T.g, -eps / T.c)[1]

    def jacobians(t, y, z, q):
        T = terms(y, z)
        m = y.shape[1]
        wg, wc = -eps / T.g, -eps / T.c
        kg, kc = eps / T.g ** 2, eps / T.c ** 2
        Lxx = (T.H_xx() + np.einsum("im,iklm->klm", wg, T.g_xx())
               + np.einsum("im,iklm->klm", wc, T.c_xx())
               + np.einsum("ikm,im,ilm->klm", T.dg, kg, T.dg)
               + np.einsum("ikm,im,ilm->klm", T.dc_x, kc, T.dc_x))
        Lux = (T.H_ux() + np.einsum("im,ijkm->jkm", wc, T.da)
               + np.einsum("ijm,im,ikm->jkm", T.a, kc, T.dc_x))
        Luu = T.H_uu() + np.einsum("ijm,im,ikm->jkm", T.a, kc, T.a)
        fx = T.f_x
        Fy = np.zeros((2 * n, 2 * n, m))
        Fy[:n, :n] = fx
        Fy[n:, :n] = -Lxx
        Fy[n:, n:] = -np.swapaxes(fx, 0, 1)
        Fz = np.concatenate([T.f2, -np.swapaxes(Lux, 0, 1)], axis=0)
        Gy = np.concatenate([Lux, np.swapaxes(T.f2, 0, 1)], axis=1)
        return Fy, Fz, Gy, Luu

    def rhs_jac(t, y, z, q):
        Fy, Fz, _, _ = jacobians(t, y, z, q)
        return Fy, Fz, np.zeros((2 * n, q.size, y.shape[1]))

    def alg_jac(t, y, z, q):
        _, _, Gy, Gz = jacobians(t, y, z, q)
        return Gy, Gz, np.zeros((nu, q.size, y.shape[1]))

    def guard(t, y, z):
        T = terms(y, z)
        return -np.vstack([T.g, T.c])

    bc, bc_jac = _boundary(problem, n)
    return BvpDaeSystem(2 * n, nu, _n_par(problem), rhs, alg, bc, rhs_jac, alg_jac, bc_jac,
                        guard if (problem.n_g or problem.n_c) else None)


def _smoothing_parts(theta, w, eps):
    """``s = sqrt(theta^2 + w^2 + 2 eps)`` with ``s - theta`` and ``s + w``.

    The differences are rationalized where they would cancel.
    """
    s = np.sqrt(theta * theta + w * w + 2 * eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_minus_theta = np.where(theta > 0, (w * w + 2 * eps) / (s + theta), s - theta)
        s_plus_w = np.where(w < 0, (theta * theta + 2 * eps) / (s - w), s + w)
    return s, s_minus_theta, s_plus_w


def smoothing_residual(theta, w, eps):
    """``theta - w - sqrt(theta^2 + w^2 + 2 eps)``; zero iff ``theta w = -eps``, ``theta > 0``.

    Evaluated as ``-2 (theta w + eps) / (theta - w + s)`` when ``theta > w`` so
    that large multipliers on active constraints keep full relative accuracy.
    """
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    s = np.sqrt(theta * theta + w * w + 2 * eps)
    d = theta - w
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > 0, -2 * (theta * w + eps) / (d + s), d - s)


def smoothing_partials(theta, w, eps):
    """Partial derivatives of :func:`smoothing_residual` in ``theta`` and ``w``."""
    s, smt, spw = _smoothing_parts(theta, w, eps)
    return smt / s, -spw / s


def assemble_primal_dual(problem: OcpProblem, eps: float) -> BvpDaeSystem:
    """Smoothed primal-dual system; no guard, iterates may leave the interior."""
    _check_eps(eps)
    n, nu, ng, nc = problem.n_x, problem.n_u, problem.n_g, problem.n_c
    nz = nu + ng + nc

    def split(y, z):
        return y[:n], y[n:], z[:nu], z[nu:nu + ng], z[nu + ng:]

    def rhs(t, y, z, q):
        x, p, u, th, et = split(y, z)
        T = HamiltonianTerms(problem, x, u, p)
        Lx, _ = _weighted_gradients(T, th, et)
        return np.vstack([T.f, -Lx])

    def alg(t, y, z, q):
        x, p, u, th, et = split(y, z)
        T = HamiltonianTerms(problem, x, u, p)
        _, Lu = _weighted_gradients(T, th, et)
        return np.vstack([Lu, smoothing_residual(th, T.g, eps), smoothing_residual(et, T.c, eps)])

    def jacobians(t, y, z, q):
        x, p, u, th, et = split(y, z)
        T = HamiltonianTerms(problem, x, u, p)
        m = y.shape[1]
        Lxx = (T.H_xx() + np.einsum("im,iklm->klm", th, T.g_xx())
               + np.einsum("im,iklm->klm", et, T.c_xx()))
        Lux = T.H_ux() + np.einsum("im,ijkm->jkm", et, T.da)
        fx = T.f_x
        Fy = np.zeros((2 * n, 2 * n, m))
        Fy[:n, :n] = fx
        Fy[n:, :n] = -Lxx
        Fy[n:, n:] = -np.swapaxes(fx, 0, 1)
        Fz = np.zeros((2 * n, nz, m))
        Fz[:n, :nu] = T.f2
        Fz[n:, :nu] = -np.swapaxes(Lux, 0, 1)
        Fz[n:, nu:nu + ng] = -np.swapaxes(T.dg, 0, 1)
        Fz[n:, nu + ng:] = -np.swapaxes(T.dc_x, 0, 1)

        dg_th, dg_w = smoothing_partials(th, T.g, eps)
        dc_et, dc_w = smoothing_partials(et, T.c, eps)
        Gy = np.zeros((nz, 2 * n, m))
        Gy[:nu, :n] = Lux
        Gy[:nu, n:] = np.swapaxes(T.f2, 0, 1)
        Gy[nu:nu + ng, :n] = dg_w[:, None] * T.dg
        Gy[nu + ng:, :n] = dc_w[:, None] * T.dc_x
        Gz = np.zeros((nz, nz, m))
        Gz[:nu, :nu] = T.H_uu()
        Gz[:nu, nu + ng:] = np.swapaxes(T.a, 0, 1)
        idx = np.arange(ng)
        Gz[nu + idx, nu + idx] = dg_th
        idx = np.arange(nc)
        Gz[nu + ng + idx, nu + ng + idx] = dc_et
        Gz[nu + ng:, :nu] = dc_w[:, None] * T.a
        return Fy, Fz, Gy, Gz

    def rhs_jac(t, y, z, q):
        Fy, Fz, _, _ = jacobians(t, y, z, q)
        return Fy, Fz, np.zeros((2 * n, q.size, y.shape[1]))

    def alg_jac(t, y, z, q):
        _, _, Gy, Gz = jacobians(t, y, z, q)
        return Gy, Gz, np.zeros((nz, q.size, y.shape[1]))

    bc, bc_jac = _boundary(problem, n)
    return BvpDaeSystem(2 * n, nz, _n_par(problem), rhs, alg, bc, rhs_jac, alg_jac, bc_jac, None)


def assemble(problem: OcpProblem, eps: float, mode: str) -> BvpDaeSystem:
    if mode == PRIMAL:
        return assemble_primal(problem, eps)
    if mode == PRIMAL_DUAL:
        return assemble_primal_dual(problem, eps)
    raise ConfigurationError(f"unknown mode {mode!r}; expected 'primal' or 'primal-dual'")


def default_guess(problem: OcpProblem, mode: str = PRIMAL, mesh_size: int = 101) -> MeshSolution:
    """Constant guess: initial state (or zero), zero costate, control and multipliers."""
    if mode not in (PRIMAL, PRIMAL_DUAL):
        raise ConfigurationError(f"unknown mode {mode!r}")
    t = np.linspace(0.0, problem.horizon, mesh_size)
    x = problem.initial_state if problem.fixed_initial_state else np.zeros(problem.n_x)
    y = np.zeros((2 * problem.n_x, mesh_size))
    y[:problem.n_x] = x[:, None]
    nz = problem.n_u + (problem.n_g + problem.n_c if mode == PRIMAL_DUAL else 0)
    return MeshSolution(t, y, np.zeros((nz, mesh_size)), np.zeros(_n_par(problem)))


def primal_to_primal_dual(problem: OcpProblem, solution: MeshSolution, eps: float) -> MeshSolution:
    """Append ``theta = eps psi'(g)`` and ``eta = eps psi'(c)`` to a primal solution."""
    n, nu = problem.n_x, problem.n_u

    def multipliers(y, z):
        T = HamiltonianTerms(problem, y[:n], z[:nu], y[n:])
        return np.vstack([z[:nu], -eps / T.g, -eps / T.c])

    ym = solution.y_at(0.5 * (solution.t[:-1] + solution.t[1:]))
    return MeshSolution(solution.t.copy(), solution.y.copy(), multipliers(solution.y, solution.z),
                        solution.q.copy(), multipliers(ym, solution.z_mid), solution.yp.copy())
