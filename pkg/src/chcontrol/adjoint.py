"""Backward sweep for the adjoint pair ``(q, q_Gamma)``.

The sweep is the exact transpose of the forward scheme linearised at a
converged trajectory: with ``R_k(y_k, w_k; y_{k-1}, u_k) = 0`` the discrete
step residual, the multipliers ``P_k = (a_k, b_k)`` solve::

    A_k' P_k = -[omega_k (M phi_Q + T' M_G phi_Sigma)_k ; 0] - B_{k+1}' P_{k+1}

with ``A_k = dR_k/d(y_k, w_k)``, ``B_k = dR_k/dy_{k-1}`` and ``P_{K+1} = 0``.
The second block row gives ``M b_k = -dt K a_k``, so ``b_k`` is mean-free and
``a_k = -N(b_k)/dt + const``.  The adjoint state is ``q_k = b_k / omega_k``
and the reduced gradient density is ``b_0 u + q_Gamma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .exceptions import AdjointStepError
from .grid import Grid, dual_norm, mean, neumann_solve
from .potential import Potential
from .state import Trajectory, _scatter, time_weights

log = logging.getLogger(__name__)


@dataclass
class AdjointCoefficients:
    """Linearisation coefficients per time level, arrays of shape ``(K+1, .)``.

    ``lam`` is ``f''(y)``; ``beta_prime`` is its monotone part, so the
    Lipschitz part is ``lam - beta_prime``.  Same for the boundary.
    """

    lam: np.ndarray
    lam_gamma: np.ndarray
    beta_prime: np.ndarray
    beta_gamma_prime: np.ndarray
    phi_q: np.ndarray
    phi_sigma: np.ndarray


@dataclass
class AdjointTrajectory:
    q: np.ndarray
    dt: float
    tau: float
    boundary_index: np.ndarray
    terminal_q: np.ndarray
    terminal_q_gamma: np.ndarray

    @property
    def q_gamma(self) -> np.ndarray:
        return self.q[:, self.boundary_index]

    @property
    def n_steps(self) -> int:
        return self.q.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def lambda_fields(traj: Trajectory, cost, f: Potential, f_gamma: Potential) -> AdjointCoefficients:
    """Evaluate ``f''``, ``f_Gamma''`` and the tracking residuals along ``traj``.

    ``cost`` needs the attributes ``b_q``, ``b_sigma``, ``z_q`` and ``z_sigma``.
    """
    y = traj.y
    yg = traj.y_gamma
    return AdjointCoefficients(
        lam=f.d2f(y),
        lam_gamma=f_gamma.d2f(yg),
        beta_prime=f.beta_prime(y),
        beta_gamma_prime=f_gamma.beta_prime(yg),
        phi_q=cost.b_q * (y - cost.z_q),
        phi_sigma=cost.b_sigma * (yg - cost.z_sigma),
    )


def solve_adjoint(traj: Trajectory, coeffs: AdjointCoefficients, grid: Grid, tau: float | None = None) -> AdjointTrajectory:
    """Backward sweep from ``t_K`` to ``t_1``; ``q`` at ``t_0`` is zero.

    The control at ``t_0`` does not act on the state, so no multiplier is
    attached to that level.
    """
    tau = traj.tau if tau is None else tau
    dt = traj.dt
    K = traj.n_steps
    n = grid.bulk_count
    bi = grid.boundary_index
    w, wg = grid.bulk_weights, grid.boundary_weights
    om = time_weights(K, dt)
    bmass = _scatter(grid, wg)
    tr = grid.trace_matrix
    kg_bulk = tr.T @ grid.boundary_stiffness @ tr
    j0 = grid.stiffness + kg_bulk + sps.diags((tau / dt) * w + bmass / dt)
    wdiag = sps.diags(w)
    lower = sps.hstack([dt * grid.stiffness, wdiag])

    q = np.zeros((K + 1, n))
    carry = np.zeros(n)
    for k in range(K, 0, -1):
        dimp = w * coeffs.beta_prime[k]
        dimp[bi] += wg * coeffs.beta_gamma_prime[k]
        jmat = j0 + sps.diags(dimp)
        at = sps.vstack([sps.hstack([wdiag, -jmat]), lower]).tocsc()
        forcing = w * coeffs.phi_q[k]
        forcing[bi] += wg * coeffs.phi_sigma[k]
        rhs = np.concatenate([-om[k] * forcing - carry, np.zeros(n)])
        if not np.any(rhs):
            a = b = np.zeros(n)
        else:
            try:
                sol = splu(at).solve(rhs)
            except RuntimeError as exc:
                raise AdjointStepError(f"adjoint step {k} failed: {exc}", step=k) from exc
            if not np.all(np.isfinite(sol)):
                raise AdjointStepError(f"adjoint step {k} produced non-finite values", step=k)
            a, b = sol[:n], sol[n:]
        q[k] = b / om[k]
        # explicit coefficients belong to the level the step starts from
        dexp = w * (coeffs.lam[k - 1] - coeffs.beta_prime[k - 1])
        dexp[bi] += wg * (coeffs.lam_gamma[k - 1] - coeffs.beta_gamma_prime[k - 1])
        carry = -w * a + ((tau / dt) * w + bmass / dt - dexp) * b
    drift = max(abs(mean(qk, grid)) for qk in q)
    if drift > 1e-10 * max(1.0, float(np.abs(q).max())):
        log.warning("adjoint mean drift %.3e", drift)
    return AdjointTrajectory(
        q=q,
        dt=dt,
        tau=tau,
        boundary_index=bi,
        terminal_q=np.zeros(n),
        terminal_q_gamma=np.zeros(bi.size),
    )


def final_residual(adj: AdjointTrajectory, grid: Grid, tau: float | None = None) -> float:
    """Largest pairing of the terminal data with the mean-free test pairs.

    The pairing ``int (N q + tau q)(T) v + int q_Gamma(T) v_Gamma`` is
    evaluated for ``v = e_i - w_i / |Omega|`` and ``v_Gamma = trace(v)``.
    """
    tau = adj.tau if tau is None else tau
    qt = adj.terminal_q
    r = grid.bulk_weights * (neumann_solve(qt - mean(qt, grid), grid) + tau * qt)
    r[grid.boundary_index] += grid.boundary_weights * adj.terminal_q_gamma
    vals = r - grid.bulk_weights * r.sum() / grid.volume
    return float(np.abs(vals).max())


def _boundary_dual_sq(g: np.ndarray, grid: Grid, lu) -> float:
    if lu is None:
        return float(grid.boundary_weights @ g**2)
    mg = grid.boundary_weights * g
    return float(mg @ lu.solve(mg))


def lambda_residual_norm(
    adj: AdjointTrajectory, coeffs: AdjointCoefficients, grid: Grid, probes: int = 64, seed: int = 0
) -> float:
    """Random-probe estimate of the dual norm of ``v -> int lam q v + int lam_G q_G v_G``.

    Probes are smooth mean-free space-time fields vanishing at ``t_0``
    (Neumann-smoothed noise); they are normalised in the discrete norm of
    ``L2(V) ∩ H1(V*)`` for the bulk plus ``L2(V_G) ∩ H1(V_G*)`` for the trace.
    """
    rng = np.random.default_rng(seed)
    dt = adj.dt
    K = adj.n_steps
    n = grid.bulk_count
    bi = grid.boundary_index
    w, wg = grid.bulk_weights, grid.boundary_weights
    kmat, kg = grid.stiffness, grid.boundary_stiffness
    bulk_density = w * coeffs.lam * adj.q
    surf_density = wg * coeffs.lam_gamma * adj.q_gamma
    lu = None
    if grid.mode == "2d":
        lu = splu((grid.boundary_mass + kg).tocsc())
    best = 0.0
    for _ in range(probes):
        v = np.zeros((K + 1, n))
        for k in range(1, K + 1):
            noise = rng.standard_normal(n)
            noise -= mean(noise, grid)
            v[k] = neumann_solve(noise, grid)
        dv = np.diff(v, axis=0) / dt
        sq = 0.0
        for k in range(1, K + 1):
            vk, vg = v[k], v[k, bi]
            sq += dt * (w @ vk**2 + vk @ (kmat @ vk) + wg @ vg**2 + vg @ (kg @ vg))
            sq += dt * (dual_norm(dv[k - 1], grid) ** 2 + _boundary_dual_sq(dv[k - 1, bi], grid, lu))
        value = dt * (np.sum(bulk_density[1:] * v[1:]) + np.sum(surf_density[1:] * v[1:, bi]))
        best = max(best, abs(float(value)) / np.sqrt(sq))
    return best


def adjoint_energy(adj: AdjointTrajectory, grid: Grid) -> dict:
    """Backward-energy quantities: sup of ``||q||_*^2`` and ``||q_G||^2``, integral of ``|grad q|^2``."""
    q = adj.q
    return {
        "dual_sq": max(dual_norm(qk - mean(qk, grid), grid) ** 2 for qk in q),
        "boundary_sq": float(max(grid.boundary_weights @ qg**2 for qg in adj.q_gamma)),
        "grad_sq": float(adj.dt * sum(qk @ (grid.stiffness @ qk) for qk in q[1:])),
    }
