"""Tracking cost, reduced gradient and projected-gradient optimisation."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, lambda_fields, solve_adjoint
from .exceptions import CHControlError
from .grid import Grid
from .potential import Potential
from .projection import ControlBox, l2_sigma_inner, l2_sigma_norm, project_uad
from .state import SolverConfig, Trajectory, as_control, solve_state, time_weights

log = logging.getLogger(__name__)


@dataclass
class CostSpec:
    """Weights and targets of the tracking functional.

    ``z_q`` has shape ``(K+1, bulk_count)`` and ``z_sigma`` shape
    ``(K+1, boundary_count)``; scalars are broadcast by :meth:`conform`.
    """

    b_q: float = 0.0
    b_sigma: float = 0.0
    b_0: float = 0.0
    z_q: object = 0.0
    z_sigma: object = 0.0

    def __post_init__(self):
        if min(self.b_q, self.b_sigma, self.b_0) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.b_q + self.b_sigma + self.b_0 <= 0:
            raise ValueError("at least one cost weight must be positive")

    def conform(self, n_steps: int, grid: Grid) -> "CostSpec":
        zq = np.broadcast_to(np.asarray(self.z_q, dtype=float), (n_steps + 1, grid.bulk_count))
        zs = np.broadcast_to(np.asarray(self.z_sigma, dtype=float), (n_steps + 1, grid.boundary_count))
        return dataclasses.replace(self, z_q=np.array(zq), z_sigma=np.array(zs))


def cost(traj: Trajectory, u, spec: CostSpec, grid: Grid) -> float:
    """Tracking functional with lumped space and trapezoidal time quadrature."""
    spec = spec.conform(traj.n_steps, grid)
    u = as_control(u, traj.n_steps, grid)
    om = time_weights(traj.n_steps, traj.dt)
    bulk = np.einsum("k,i,ki->", om, grid.bulk_weights, (traj.y - spec.z_q) ** 2)
    surf = np.einsum("k,j,kj->", om, grid.boundary_weights, (traj.y_gamma - spec.z_sigma) ** 2)
    ctrl = np.einsum("k,j,kj->", om, grid.boundary_weights, u**2)
    return float(0.5 * (spec.b_q * bulk + spec.b_sigma * surf + spec.b_0 * ctrl))


def modified_cost(traj: Trajectory, u, spec: CostSpec, u_bar, grid: Grid) -> float:
    """Cost plus the proximal anchor ``||u - u_bar||^2 / 2``."""
    u = as_control(u, traj.n_steps, grid)
    return cost(traj, u, spec, grid) + 0.5 * l2_sigma_norm(u - np.asarray(u_bar), grid, traj.dt) ** 2


@dataclass
class ControlProblem:
    """Everything needed to evaluate the reduced cost ``u -> J(y(u), u)``."""

    grid: Grid
    f: Potential
    f_gamma: Potential
    y0: np.ndarray
    config: SolverConfig
    cost: CostSpec
    box: ControlBox = field(default_factory=ControlBox)

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        self.cost = self.cost.conform(self.config.n_steps, self.grid)

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.config.n_steps + 1, self.grid.boundary_count)

    def with_tau(self, tau: float | None) -> SolverConfig:
        if tau is None:
            return self.config
        return dataclasses.replace(self.config, tau=float(tau))

    def simulate(self, u, tau: float | None = None) -> Trajectory:
        return solve_state(self.y0, u, self.with_tau(tau), self.grid, self.f, self.f_gamma)

    def project(self, u, **kwargs) -> np.ndarray:
        return project_uad(u, self.box, self.grid, self.dt, **kwargs)

    def inner(self, a, b) -> float:
        return l2_sigma_inner(a, b, self.grid, self.dt)

    def norm(self, a) -> float:
        return l2_sigma_norm(a, self.grid, self.dt)

    def objective(self, u, tau=None, u_bar=None, traj=None) -> float:
        traj = self.simulate(u, tau) if traj is None else traj
        if u_bar is None:
            return cost(traj, u, self.cost, self.grid)
        return modified_cost(traj, u, self.cost, u_bar, self.grid)

    def evaluate(self, u, tau=None, u_bar=None, traj=None):
        """Return ``(J, g, traj, adj)``; ``g`` is the Riesz gradient in the weighted ``L2(Sigma)``."""
        u = as_control(u, self.config.n_steps, self.grid)
        traj = self.simulate(u, tau) if traj is None else traj
        coeffs = lambda_fields(traj, self.cost, self.f, self.f_gamma)
        adj = solve_adjoint(traj, coeffs, self.grid, traj.tau)
        g = self.cost.b_0 * u + adj.q_gamma
        if u_bar is not None:
            g = g + (u - u_bar)
        return self.objective(u, tau, u_bar, traj=traj), g, traj, adj


def reduced_gradient(problem: ControlProblem, u, tau: float | None = None) -> np.ndarray:
    """Gradient density ``b_0 u + q_Gamma`` of the discrete reduced cost."""
    return problem.evaluate(u, tau)[1]


@dataclass
class OptimizeResult:
    u_opt: np.ndarray
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    j_history: list
    vi_residual: float
    iterations: int
    converged: bool
    stationarity: float = np.nan
    gradient: np.ndarray | None = None
    tau: float = 0.0
    log: list = field(default_factory=list)
    message: str = ""


def stationarity(problem: ControlProblem, u, g) -> float:
    """``||u - P(u - g)||`` in the weighted ``L2(Sigma)`` norm."""
    return problem.norm(u - problem.project(u - g))


def optimize(
    problem: ControlProblem,
    u0=None,
    tau: float | None = None,
    u_bar=None,
    tol: float | None = None,
    rtol: float = 1e-6,
    max_iter: int = 500,
    armijo: float = 1e-4,
    max_halvings: int = 40,
    patience: int = 10,
) -> OptimizeResult:
    """Projected gradient with Armijo backtracking.

    Trial steps start from a Barzilai-Borwein estimate and are halved until
    sufficient decrease holds.  When ``u_bar`` is given the anchored cost
    ``J + ||u - u_bar||^2 / 2`` is minimised instead of ``J``.  Iteration
    stops once the stationarity measure drops below ``tol`` (default
    ``rtol * ||g_0||``) or once neither the cost nor the stationarity
    measure has improved for ``patience`` iterations (roundoff floor).
    """
    shape = problem.control_shape
    u = problem.project(np.zeros(shape) if u0 is None else as_control(u0, shape[0] - 1, problem.grid))
    u_bar = None if u_bar is None else as_control(u_bar, shape[0] - 1, problem.grid)
    tau_val = problem.with_tau(tau).tau
    J, g, traj, adj = problem.evaluate(u, tau, u_bar)
    if tol is None:
        tol = rtol * problem.norm(g)
    history = [J]
    records = []
    step = 1.0
    converged = False
    message = "iteration cap reached"
    it = 0
    best_stat, stale = np.inf, 0
    for it in range(max_iter + 1):
        p = problem.project(u - g)
        stat = problem.norm(u - p)
        vi_probe = problem.inner(g, p - u)
        records.append({"iter": it, "J": J, "step": step, "stationarity": stat, "vi_residual": vi_probe})
        if stat <= tol:
            converged = True
            message = "stationarity tolerance reached"
            break
        if stat < 0.99 * best_stat:
            best_stat, stale = stat, 0
        else:
            stale += 1
        if stale >= patience:
            message = "stagnated at the roundoff floor"
            break
        if it == max_iter:
            break
        accepted = False
        s = step
        for _ in range(max_halvings + 1):
            u_new = problem.project(u - s * g)
            descent = problem.inner(g, u_new - u)
            try:
                traj_new = problem.simulate(u_new, tau)
            except CHControlError:
                s *= 0.5
                continue
            J_new = problem.objective(u_new, tau, u_bar, traj=traj_new)
            if J_new <= J + armijo * descent:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            message = f"line search failed after {max_halvings} halvings"
            break
        _, g_new, traj_new, adj_new = problem.evaluate(u_new, tau, u_bar, traj=traj_new)
        du, dg = u_new - u, g_new - g
        curv = problem.inner(du, dg)
        step = problem.inner(du, du) / curv if curv > 0 else 2.0 * s
        step = float(np.clip(step, 1e-10, 1e10))
        u, g, J, traj, adj = u_new, g_new, J_new, traj_new, adj_new
        history.append(J)
    log.info("optimize tau=%g: %s after %d iterations, J=%.6e", tau_val, message, it, J)
    return OptimizeResult(
        u_opt=u,
        trajectory=traj,
        adjoint=adj,
        j_history=history,
        vi_residual=records[-1]["vi_residual"],
        iterations=it,
        converged=converged,
        stationarity=records[-1]["stationarity"],
        gradient=g,
        tau=tau_val,
        log=records,
        message=message,
    )


def vi_residual(
    u_opt,
    q_gamma,
    box: ControlBox,
    spec: CostSpec,
    grid: Grid,
    dt: float,
    samples: int = 100,
    seed: int = 0,
    u_bar=None,
) -> float:
    """Smallest value of ``int (q_G + b_0 u)(v - u)`` over sampled admissible ``v``.

    Half of the samples project unit-norm noise scaled to the size of
    ``u_opt``; the other half project local perturbations of ``u_opt``.
    """
    u = np.asarray(u_opt, dtype=float)
    g = np.asarray(q_gamma, dtype=float) + spec.b_0 * u
    if u_bar is not None:
        g = g + (u - np.asarray(u_bar, dtype=float))
    rng = np.random.default_rng(seed)
    radius = max(1.0, l2_sigma_norm(u, grid, dt))
    worst = np.inf
    for i in range(samples):
        xi = rng.standard_normal(u.shape)
        xi /= l2_sigma_norm(xi, grid, dt)
        cand = radius * xi if i % 2 == 0 else u + rng.uniform(0.0, radius) * xi
        v = project_uad(cand, box, grid, dt)
        worst = min(worst, l2_sigma_inner(g, v - u, grid, dt))
    return float(worst)


def projection_identity_check(u_opt, q_gamma, box: ControlBox, b_0: float, grid: Grid, dt: float) -> float:
    """Relative distance between ``u_opt`` and the projection of ``-q_Gamma / b_0``."""
    if b_0 <= 0:
        raise ValueError("projection identity needs b_0 > 0")
    u = np.asarray(u_opt, dtype=float)
    p = project_uad(-np.asarray(q_gamma, dtype=float) / b_0, box, grid, dt)
    return l2_sigma_norm(u - p, grid, dt) / max(1.0, l2_sigma_norm(u, grid, dt))


def gradient_check(
    problem: ControlProblem,
    u=None,
    directions: int = 5,
    steps=(1e-4, 1e-5),
    tau: float | None = None,
    seed: int = 0,
) -> dict:
    """Compare adjoint directional derivatives with central differences.

    Directions are seeded Gaussian fields normalised in ``L2(Sigma)``.  The
    reported error is the relative Euclidean distance between the vector
    of adjoint derivatives and the finite-difference vector at the step
    that agrees best; ``richardson`` is the extrapolated difference between
    the two coarsest steps, a check that the FD values are in their
    asymptotic regime.
    """
    rng = np.random.default_rng(seed)
    shape = problem.control_shape
    u = 0.3 * rng.standard_normal(shape) if u is None else as_control(u, shape[0] - 1, problem.grid)
    _, g, _, _ = problem.evaluate(u, tau)
    adj, fd = [], {h: [] for h in steps}
    for _ in range(directions):
        d = rng.standard_normal(shape)
        d /= problem.norm(d)
        adj.append(problem.inner(g, d))
        for h in steps:
            jp = problem.objective(u + h * d, tau)
            jm = problem.objective(u - h * d, tau)
            fd[h].append((jp - jm) / (2 * h))
    adj = np.array(adj)
    scale = max(np.linalg.norm(adj), np.finfo(float).tiny)
    errors = {h: float(np.linalg.norm(adj - np.array(fd[h])) / scale) for h in steps}
    h1, h2 = steps[0], steps[1] if len(steps) > 1 else steps[0]
    r = (h1 / h2) ** 2
    rich = (r * np.array(fd[h2]) - np.array(fd[h1])) / (r - 1) if h1 != h2 else np.array(fd[h1])
    return {
        "adjoint": adj.tolist(),
        "finite_difference": {repr(h): v for h, v in fd.items()},
        "errors": {repr(h): e for h, e in errors.items()},
        "richardson_error": float(np.linalg.norm(adj - rich) / scale),
        "relative_error": min(errors.values()),
    }
