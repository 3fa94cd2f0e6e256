"""Admissible controls: the pointwise box intersected with a time-derivative ball.

Controls live on the levels ``t_0 .. t_K`` with shape ``(K+1, nb)``.  The
space-time inner product is ``<a, b> = sum_k omega_k sum_j w_j a_kj b_kj``
with trapezoidal time weights ``omega`` and boundary weights ``w``.  The
derivative constraint uses forward differences on the ``K`` intervals::

    sum_k dt sum_j w_j ((u_{k+1,j} - u_{k,j}) / dt)^2 <= M_0^2
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded
from scipy.optimize import brentq

from .exceptions import InfeasibleError, ProjectionError
from .grid import Grid
from .state import time_weights


def l2_sigma_inner(a, b, grid: Grid, dt: float) -> float:
    a = np.asarray(a, dtype=float)
    om = time_weights(a.shape[0] - 1, dt)
    return float(np.einsum("k,j,kj,kj->", om, grid.boundary_weights, a, np.asarray(b, dtype=float)))


def l2_sigma_norm(a, grid: Grid, dt: float) -> float:
    return float(np.sqrt(max(l2_sigma_inner(a, a, grid, dt), 0.0)))


def derivative_norm(u, grid: Grid, dt: float) -> float:
    """``||D_t u||_{L2(Sigma)}`` with forward differences and left-endpoint quadrature."""
    du = np.diff(np.asarray(u, dtype=float), axis=0) / dt
    return float(np.sqrt(dt * np.einsum("j,kj->", grid.boundary_weights, du**2)))


@dataclass(frozen=True)
class ControlBox:
    """``u_min <= u <= u_max`` pointwise and ``||D_t u|| <= m_0``.

    Bounds may be scalars or arrays broadcastable to ``(K+1, nb)``.
    """

    u_min: object = -np.inf
    u_max: object = np.inf
    m_0: float = np.inf

    def bounds(self, shape) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.u_min, dtype=float), shape)
        hi = np.broadcast_to(np.asarray(self.u_max, dtype=float), shape)
        return lo, hi

    def clamp(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lo, hi = self.bounds(u.shape)
        return np.minimum(np.maximum(u, lo), hi)

    def witness(self, n_steps: int, grid: Grid, dt: float) -> np.ndarray:
        """An admissible control, or :class:`InfeasibleError` if none is found."""
        shape = (n_steps + 1, grid.boundary_count)
        lo, hi = self.bounds(shape)
        if self.m_0 <= 0:
            raise InfeasibleError(f"m_0 must be positive, got {self.m_0}")
        if np.any(lo > hi):
            raise InfeasibleError("u_min exceeds u_max somewhere")
        candidates = [self.clamp(np.zeros(shape))]
        # constant in time, inside every level's interval when such a value exists
        top, bottom = lo.max(axis=0), hi.min(axis=0)
        if np.all(top <= bottom):
            mid = np.where(np.isfinite(top), top, np.where(np.isfinite(bottom), bottom, 0.0))
            candidates.append(np.broadcast_to(mid, shape).copy())
        for cand in candidates:
            if derivative_norm(cand, grid, dt) <= self.m_0:
                return cand
        raise InfeasibleError("no admissible control found: box and derivative bound are incompatible")

    def contains(self, u, grid: Grid, dt: float, tol: float = 1e-10) -> bool:
        u = np.asarray(u, dtype=float)
        lo, hi = self.bounds(u.shape)
        in_box = bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))
        return in_box and derivative_norm(u, grid, dt) <= self.m_0 + tol


class _BoxQP:
    """Box-constrained minimiser of ``1/2 |v - u|^2_W + mu/2 |D_t v|^2`` for fixed ``mu``.

    Unknowns are stored vertex by vertex so that the Hessian is tridiagonal;
    a primal-dual active set iteration then converges in a few banded solves
    because the Hessian is an M-matrix.
    """

    def __init__(self, n_steps: int, grid: Grid, dt: float, lo: np.ndarray, hi: np.ndarray):
        nb = grid.boundary_count
        self.shape = (n_steps + 1, nb)
        om = time_weights(n_steps, dt)
        wg = grid.boundary_weights
        self.mass = np.outer(wg, om).ravel()
        lap = np.zeros(n_steps + 1)
        lap[:-1] += 1.0
        lap[1:] += 1.0
        self.lap_diag = np.outer(wg, lap / dt).ravel()
        off = np.outer(wg, np.r_[np.full(n_steps, -1.0 / dt), 0.0]).ravel()
        self.lap_off = off[:-1]  # coupling of entry i with i + 1, zero across vertices
        self.lo = lo.T.ravel()
        self.hi = hi.T.ravel()

    @staticmethod
    def _slack(bound):
        return 1e-14 * (1.0 + np.abs(np.where(np.isfinite(bound), bound, 0.0)))

    def hess_apply(self, v, mu):
        out = (self.mass + mu * self.lap_diag) * v
        out[:-1] += mu * self.lap_off * v[1:]
        out[1:] += mu * self.lap_off * v[:-1]
        return out

    def energy(self, v):
        """``|D_t v|^2`` in the weighted norm."""
        lap = self.lap_diag * v
        lap[:-1] += self.lap_off * v[1:]
        lap[1:] += self.lap_off * v[:-1]
        return float(v @ lap)

    def _solve_free(self, free, rhs, mu):
        idx = np.flatnonzero(free)
        diag = (self.mass + mu * self.lap_diag)[idx]
        if idx.size == 1:
            return rhs[idx] / diag
        upper = np.zeros(idx.size)
        if idx.size > 1:
            adjacent = np.diff(idx) == 1
            upper[1:] = np.where(adjacent, mu * self.lap_off[idx[:-1]], 0.0)
        return solveh_banded(np.vstack([upper, diag]), rhs[idx], check_finite=False)

    def solve(self, uf, mu, max_iter: int = 200):
        lo, hi = self.lo, self.hi
        target = self.mass * uf
        v = np.minimum(np.maximum(uf, lo), hi)
        at_lo = np.zeros(v.size, bool)
        at_hi = np.zeros(v.size, bool)
        for _ in range(max_iter):
            fixed = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
            free = ~(at_lo | at_hi)
            rhs = target - self.hess_apply(fixed, mu)
            v = fixed.copy()
            if free.any():
                v[free] = self._solve_free(free, rhs, mu)
            mult = target - self.hess_apply(v, mu)
            mult[free] = 0.0
            c = self.mass + mu * self.lap_diag
            # ties at a bound stay put; a strict test cycles on roundoff
            trial = v + mult / c
            new_lo = trial < lo - self._slack(lo)
            new_hi = trial > hi + self._slack(hi)
            new_lo |= at_lo & (trial <= lo + self._slack(lo))
            new_hi |= at_hi & (trial >= hi - self._slack(hi))
            if np.array_equal(new_lo, at_lo) and np.array_equal(new_hi, at_hi):
                return np.minimum(np.maximum(v, lo), hi)
            at_lo, at_hi = new_lo, new_hi
        raise ProjectionError(f"active-set iteration did not settle in {max_iter} steps", gap=np.nan)


def _constrained_projection(u, lo, hi, grid: Grid, dt: float, m_0: float, rtol: float) -> np.ndarray:
    """Exact projection onto box ∩ ball by a root search on the ball multiplier."""
    n_steps = u.shape[0] - 1
    qp = _BoxQP(n_steps, grid, dt, lo, hi)
    uf = u.T.ravel()
    target = m_0**2

    def excess(mu):
        return qp.energy(qp.solve(uf, mu)) - target

    mu_hi = 1.0
    while excess(mu_hi) > 0:
        mu_hi *= 8.0
        if mu_hi > 1e300:
            raise ProjectionError("derivative multiplier search diverged", gap=np.inf)
    mu = brentq(excess, 0.0, mu_hi, xtol=1e-300, rtol=rtol, maxiter=500)
    v = qp.solve(uf, mu)
    if qp.energy(v) > target:
        # nudge toward the feasible bracket end
        v = qp.solve(uf, mu * (1.0 + 4 * rtol) + 1e-300)
    return v.reshape(u.shape[::-1]).T


def _dykstra(u, lo, hi, grid: Grid, dt: float, m_0: float, tol: float, max_sweeps: int):
    free_lo, free_hi = np.full(u.shape, -np.inf), np.full(u.shape, np.inf)
    x = u.copy()
    p = np.zeros_like(u)
    q = np.zeros_like(u)
    gap = np.inf
    scale = max(1.0, l2_sigma_norm(u, grid, dt))
    for sweep in range(1, max_sweeps + 1):
        y = np.minimum(np.maximum(x + p, lo), hi)
        p = x + p - y
        x_new = _constrained_projection(y + q, free_lo, free_hi, grid, dt, m_0, 1e-14)
        q = y + q - x_new
        gap = l2_sigma_norm(y - x_new, grid, dt)
        change = l2_sigma_norm(x_new - x, grid, dt)
        x = x_new
        if gap <= tol * scale and change <= tol * scale:
            return x, sweep
    raise ProjectionError(f"Dykstra did not converge in {max_sweeps} sweeps (gap {gap:.3e})", gap=gap)


def project_uad(
    u,
    box: ControlBox,
    grid: Grid,
    dt: float,
    method: str = "active-set",
    tol: float = 1e-13,
    max_sweeps: int = 500,
    feas_tol: float = 1e-10,
) -> np.ndarray:
    """Nearest admissible control in the weighted ``L2(Sigma)`` norm.

    ``method="active-set"`` finds the multiplier ``mu`` of the derivative
    bound by a scalar root search (relative tolerance ``tol``) and solves
    each box-constrained subproblem exactly.  ``method="dykstra"`` runs
    Dykstra's alternating projections between the box and the derivative
    ball, stopping when the sub-iterates agree to ``tol`` (relative).

    Raises
    ------
    InfeasibleError
        If the admissible set is empty.
    ProjectionError
        If Dykstra has not converged after ``max_sweeps`` or the result
        violates the constraints by more than ``feas_tol``.
    """
    if method not in ("active-set", "dykstra"):
        raise ValueError(f"unknown projection method {method!r}")
    u = np.asarray(u, dtype=float)
    n_steps = u.shape[0] - 1
    box.witness(n_steps, grid, dt)
    lo, hi = box.bounds(u.shape)
    clamped = np.minimum(np.maximum(u, lo), hi)
    if not np.isfinite(box.m_0) or derivative_norm(clamped, grid, dt) <= box.m_0:
        return clamped
    if method == "dykstra":
        out, _ = _dykstra(u, lo, hi, grid, dt, box.m_0, max(tol, 1e-10), max_sweeps)
        out = np.minimum(np.maximum(out, lo), hi)
    else:
        out = _constrained_projection(u, lo, hi, grid, dt, box.m_0, tol)
    norm_d = derivative_norm(out, grid, dt)
    if norm_d > box.m_0:
        # pull toward the temporal mean, which has zero derivative
        mid = out.mean(axis=0, keepdims=True)
        shrunk = mid + (box.m_0 / norm_d) * (out - mid)
        if np.all(shrunk >= lo) and np.all(shrunk <= hi):
            out = shrunk
    if not box.contains(out, grid, dt, tol=feas_tol):
        raise ProjectionError("projected control violates the constraints", gap=norm_d - box.m_0)
    return out


def qp_oracle_projection(u, box: ControlBox, grid: Grid, dt: float) -> np.ndarray:
    """Brute-force projection by enumerating all active sets.

    Every variable is free, at its lower bound or at its upper bound, and
    the derivative constraint is inactive or active; each case is an
    equality-constrained problem solved in closed form (plus a scalar root
    search for the ball multiplier).  The best feasible candidate is the
    projection.  Cost is ``3^m`` small solves, so keep ``m`` below ~10.
    """
    u = np.asarray(u, dtype=float)
    shape = u.shape
    m = u.size
    n_steps = shape[0] - 1
    om = time_weights(n_steps, dt)
    wdiag = np.outer(om, grid.boundary_weights).ravel()
    d = np.diff(np.eye(n_steps + 1), axis=0)
    # quadratic form of the derivative constraint on the flattened (k, j) layout
    qmat = np.kron(d.T @ d / dt, np.diag(grid.boundary_weights))
    lo, hi = (b.ravel() for b in box.bounds(shape))
    uf = u.ravel()
    target = box.m_0**2
    tol = 1e-12

    def objective(x):
        return 0.5 * float(wdiag @ (x - uf) ** 2)

    def feasible(x):
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol) and x @ qmat @ x <= target * (1 + 1e-12) + tol)

    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=m):
        pat = np.array(pattern)
        fixed = pat > 0
        if np.any(~np.isfinite(lo[pat == 1])) or np.any(~np.isfinite(hi[pat == 2])):
            continue
        x = uf.copy()
        x[pat == 1] = lo[pat == 1]
        x[pat == 2] = hi[pat == 2]
        free = ~fixed
        if feasible(x):
            if objective(x) < best_val:
                best, best_val = x.copy(), objective(x)
        if not free.any() or not np.isfinite(target):
            continue
        a_ff = np.diag(wdiag[free])
        q_ff = qmat[np.ix_(free, free)]
        q_fx = qmat[np.ix_(free, fixed)] @ x[fixed]

        def solve(mu):
            xx = x.copy()
            xx[free] = np.linalg.solve(a_ff + mu * q_ff, wdiag[free] * uf[free] - mu * q_fx)
            return xx

        def excess(mu):
            xx = solve(mu)
            return float(xx @ qmat @ xx) - target

        if excess(0.0) <= 0:
            continue
        mu_hi = 1.0
        while excess(mu_hi) > 0 and mu_hi < 1e12:
            mu_hi *= 10.0
        if excess(mu_hi) > 0:
            continue
        mu = brentq(excess, 0.0, mu_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        xx = solve(mu)
        if feasible(xx) and objective(xx) < best_val:
            best, best_val = xx, objective(xx)
    if best is None:
        raise InfeasibleError("QP oracle found no feasible point")
    return best.reshape(shape)
