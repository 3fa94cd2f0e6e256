"""Forward solver for the Cahn-Hilliard system with dynamic boundary conditions.

One time step (implicit Euler, convex part of ``f'`` implicit, Lipschitz part
explicit, control taken at the new level) solves for ``(y+, w+)``::

    M (y+ - y) + dt K w+ = 0
    M w+ = tau/dt M (y+ - y) + K y+ + T'[M_G (Ty+ - Ty)/dt + K_G Ty+]
           + M (beta(y+) + pi(y)) + T' M_G (beta_G(Ty+) + pi_G(Ty) - u+)

where ``T`` is the trace and ``T'`` its transpose.  Testing the first line
with the constant vector shows that the mean of ``y`` is preserved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .exceptions import DomainViolationError, StepFailureError
from .grid import Grid, dual_norm, mean
from .potential import Potential

# iterates are kept this far inside singular domain ends
BARRIER_MARGIN = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    T: float
    tau: float = 0.0
    newton_tol: float = 1e-10
    newton_max: int = 50
    linear_rtol: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T/dt = {ratio} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class State:
    y: np.ndarray
    y_gamma: np.ndarray
    w: np.ndarray
    time: float


@dataclass
class Trajectory:
    """Order parameter and chemical potential on the uniform time grid.

    ``y`` and ``w`` have shape ``(K + 1, bulk_count)``; ``w[0]`` is the
    quasi-static chemical potential of the initial datum and is kept for
    reporting only.
    """

    y: np.ndarray
    w: np.ndarray
    dt: float
    tau: float
    control: np.ndarray
    boundary_index: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.y.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def y_gamma(self) -> np.ndarray:
        return self.y[:, self.boundary_index]

    @property
    def states(self) -> list[State]:
        return [
            State(y=self.y[k], y_gamma=self.y[k, self.boundary_index], w=self.w[k], time=k * self.dt)
            for k in range(self.n_steps + 1)
        ]


def _scatter(grid: Grid, boundary_values: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.bulk_count)
    out[grid.boundary_index] = boundary_values
    return out


class StepOperator:
    """Assembled pieces of one implicit step, shared by forward and adjoint sweeps."""

    def __init__(self, grid: Grid, f: Potential, f_gamma: Potential, dt: float, tau: float):
        self.grid, self.f, self.f_gamma = grid, f, f_gamma
        self.dt, self.tau = dt, tau
        bi = grid.boundary_index
        self.w = grid.bulk_weights
        self.wg = grid.boundary_weights
        # T' M_G T is diagonal because the trace map is injective
        self.bmass = _scatter(grid, self.wg)
        tr = grid.trace_matrix
        self.kg_bulk = (tr.T @ grid.boundary_stiffness @ tr).tocsr()
        self.K = grid.stiffness
        self.j0 = (
            self.K + self.kg_bulk + sps.diags((tau / dt) * self.w + self.bmass / dt)
        ).tocsr()
        self._bi = bi
        n = grid.bulk_count
        self._top = sps.hstack([sps.diags(self.w), dt * self.K]).tocsr()
        self._ident_w = sps.diags(self.w)
        self.n = n
        # fixed sparsity: only the (2,1)-block diagonal changes between Newton steps
        base = sps.vstack([self._top, sps.hstack([-self.j0, self._ident_w])]).tocsc()
        base = (base + sps.diags(np.full(n, 1.0), -n, shape=(2 * n, 2 * n))).tocsc()
        base = (base - sps.diags(np.full(n, 1.0), -n, shape=(2 * n, 2 * n))).tocsc()
        base.sort_indices()
        self._base = base
        cols = np.arange(n)
        self._diag_pos = np.array(
            [base.indptr[c] + np.searchsorted(base.indices[base.indptr[c]:base.indptr[c + 1]], c + n) for c in cols]
        )

    def implicit_diag(self, y_new: np.ndarray) -> np.ndarray:
        """Diagonal of ``M beta'(y+) + T' M_G beta_G'(Ty+)``."""
        d = self.w * self.f.beta_prime(y_new)
        d[self._bi] += self.wg * self.f_gamma.beta_prime(y_new[self._bi])
        return d

    def explicit_diag(self, y_old: np.ndarray) -> np.ndarray:
        """Diagonal of ``M pi'(y) + T' M_G pi_G'(Ty)``."""
        d = self.w * self.f.pi_prime(y_old)
        d[self._bi] += self.wg * self.f_gamma.pi_prime(y_old[self._bi])
        return d

    def jacobian(self, y_new: np.ndarray) -> sps.csc_matrix:
        """Derivative of the step residual with respect to ``(y+, w+)``."""
        mat = self._base.copy()
        mat.data[self._diag_pos] -= self.implicit_diag(y_new)
        return mat

    def residual(self, y_new, w_new, y_old, u_new):
        bi = self._bi
        dy = y_new - y_old
        r1 = self.w * dy + self.dt * (self.K @ w_new)
        rhs = (
            (self.tau / self.dt) * self.w * dy
            + self.K @ y_new
            + self.kg_bulk @ y_new
            + self.bmass * dy / self.dt
            + self.w * (self.f.beta(y_new) + self.f.pi(y_old))
        )
        rhs[bi] += self.wg * (
            self.f_gamma.beta(y_new[bi]) + self.f_gamma.pi(y_old[bi]) - u_new
        )
        r2 = self.w * w_new - rhs
        return r1, r2

    def scaled_norm(self, r1, r2) -> float:
        return float(max(np.abs(r1 / self.w).max(), np.abs(r2 / self.w).max()))


def _inside(y: np.ndarray, f: Potential, f_gamma: Potential) -> bool:
    lo = max(f.r_minus, f_gamma.r_minus) + BARRIER_MARGIN
    hi = min(f.r_plus, f_gamma.r_plus) - BARRIER_MARGIN
    return bool(np.all(y > lo) and np.all(y < hi))


def _newton(op: StepOperator, y_old, u_new, config: SolverConfig, step=None):
    y = y_old.copy()
    w = np.zeros_like(y_old)
    r1, r2 = op.residual(y, w, y_old, u_new)
    res = op.scaled_norm(r1, r2)
    n = op.n
    for it in range(config.newton_max + 1):
        if res <= config.newton_tol:
            return y, w, it, res
        if it == config.newton_max:
            break
        try:
            lu = splu(op.jacobian(y))
        except RuntimeError as exc:  # singular factor
            raise StepFailureError(f"singular Newton matrix: {exc}", residual=res, step=step) from exc
        delta = lu.solve(-np.concatenate([r1, r2]))
        dy, dw = delta[:n], delta[n:]
        alpha = 1.0
        accepted = False
        for _ in range(60):
            y_try = y + alpha * dy
            if _inside(y_try, op.f, op.f_gamma):
                w_try = w + alpha * dw
                t1, t2 = op.residual(y_try, w_try, y_old, u_new)
                res_try = op.scaled_norm(t1, t2)
                if np.isfinite(res_try) and (res_try <= (1 - 1e-4 * alpha) * res or alpha < 1e-3):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise StepFailureError("damped Newton stalled at the domain barrier", residual=res, step=step)
        y, w, r1, r2, res = y_try, w_try, t1, t2, res_try
    raise StepFailureError(
        f"Newton did not converge in {config.newton_max} iterations", residual=res, step=step
    )


def step_state(prev: State, u_slice, config: SolverConfig, grid: Grid, f: Potential, f_gamma: Potential) -> State:
    """Advance one implicit step from ``prev`` with boundary control ``u_slice`` at the new level."""
    op = StepOperator(grid, f, f_gamma, config.dt, config.tau)
    u = np.broadcast_to(np.asarray(u_slice, dtype=float), (grid.boundary_count,))
    y, w, _, _ = _newton(op, np.asarray(prev.y, dtype=float), u, config)
    return State(y=y, y_gamma=y[grid.boundary_index], w=w, time=prev.time + config.dt)


def chemical_potential(y, u_slice, grid: Grid, f: Potential, f_gamma: Potential) -> np.ndarray:
    """Quasi-static chemical potential (time-derivative terms dropped)."""
    bi = grid.boundary_index
    rhs = grid.stiffness @ y + grid.trace_matrix.T @ (grid.boundary_stiffness @ y[bi])
    rhs = rhs + grid.bulk_weights * f.df(y)
    rhs[bi] += grid.boundary_weights * (f_gamma.df(y[bi]) - u_slice)
    return rhs / grid.bulk_weights


def energy(state, grid: Grid, f: Potential, f_gamma: Potential) -> float:
    """Lumped free energy of bulk and boundary."""
    y = np.asarray(state.y if isinstance(state, State) else state, dtype=float)
    yg = y[grid.boundary_index]
    return float(
        0.5 * y @ (grid.stiffness @ y)
        + grid.bulk_weights @ f.f(y)
        + 0.5 * yg @ (grid.boundary_stiffness @ yg)
        + grid.boundary_weights @ f_gamma.f(yg)
    )


def as_control(u, n_steps: int, grid: Grid) -> np.ndarray:
    """Broadcast a scalar, boundary vector or full array to shape ``(K+1, nb)``."""
    arr = np.asarray(u, dtype=float)
    shape = (n_steps + 1, grid.boundary_count)
    try:
        out = np.array(np.broadcast_to(arr, shape))
    except ValueError as exc:
        raise ValueError(f"control of shape {arr.shape} does not conform to {shape}") from exc
    if not np.all(np.isfinite(out)):
        raise ValueError("control contains non-finite values")
    return out


def solve_state(y0, u, config: SolverConfig, grid: Grid, f: Potential, f_gamma: Potential) -> Trajectory:
    """Run all ``T/dt`` steps from ``y0`` under the boundary control ``u``.

    Raises
    ------
    DomainViolationError
        If ``y0`` is not strictly inside the potential domain.
    StepFailureError
        If a Newton solve fails; ``err.step`` carries the step index.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (grid.bulk_count,):
        raise ValueError(f"initial datum must have shape ({grid.bulk_count},)")
    if not _inside(y0, f, f_gamma):
        raise DomainViolationError("initial datum touches the potential domain boundary")
    K = config.n_steps
    u = as_control(u, K, grid)
    op = StepOperator(grid, f, f_gamma, config.dt, config.tau)
    ys = np.empty((K + 1, grid.bulk_count))
    ws = np.empty_like(ys)
    iters = np.zeros(K + 1, dtype=int)
    resid = np.zeros(K + 1)
    ys[0] = y0
    ws[0] = chemical_potential(y0, u[0], grid, f, f_gamma)
    for k in range(1, K + 1):
        ys[k], ws[k], iters[k], resid[k] = _newton(op, ys[k - 1], u[k], config, step=k)
    traj = Trajectory(
        y=ys, w=ws, dt=config.dt, tau=config.tau, control=u, boundary_index=grid.boundary_index
    )
    traj.diagnostics = {
        "t": traj.times,
        "mass": np.array([mean(y, grid) for y in ys]),
        "energy": np.array([energy(y, grid, f, f_gamma) for y in ys]),
        "newton_iters": iters,
        "newton_residual": resid,
        "min_y": ys.min(axis=1),
        "max_y": ys.max(axis=1),
    }
    return traj


def weak_residual(traj: Trajectory, u, grid: Grid, f: Potential, f_gamma: Potential, trials: int = 8, seed: int = 0) -> float:
    """Largest time-integrated weak-form residual over random test functions.

    Both discrete equations are re-assembled for all steps at once and
    paired with ``trials`` random test functions in ``[-1, 1]``.
    """
    dt, tau = traj.dt, traj.tau
    u = as_control(u, traj.n_steps, grid)
    bi = grid.boundary_index
    Y, W = traj.y, traj.w
    Yn, Yo, Wn = Y[1:], Y[:-1], W[1:]
    dY = Yn - Yo
    wts = grid.bulk_weights
    KY = (grid.stiffness @ Yn.T).T
    KW = (grid.stiffness @ Wn.T).T
    KG = (grid.boundary_stiffness @ Yn[:, bi].T).T
    first = wts * dY + dt * KW
    bulk = tau / dt * wts * dY + KY + wts * (f.beta(Yn) + f.pi(Yo))
    surf = (
        grid.boundary_weights * (Yn[:, bi] - Yo[:, bi]) / dt
        + KG
        + grid.boundary_weights * (f_gamma.beta(Yn[:, bi]) + f_gamma.pi(Yo[:, bi]) - u[1:])
    )
    bulk[:, bi] += surf
    second = dt * (wts * Wn - bulk)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.uniform(-1.0, 1.0, size=dY.shape)
        worst = max(worst, abs(float(np.sum(v * first))), abs(float(np.sum(v * second))))
    return worst


def _dual_full(v, grid: Grid) -> float:
    m = mean(v, grid)
    return math.sqrt(dual_norm(v - m, grid) ** 2 + grid.volume * m * m)


def stability_aggregate(traj: Trajectory, grid: Grid, f: Potential, f_gamma: Potential) -> dict:
    """Discrete counterpart of the tau-uniform stability bound.

    Returns the individual contributions and their sum under ``"total"``.
    Time integrals use the step levels ``1..K``.
    """
    dt, tau = traj.dt, traj.tau
    wts, wg = grid.bulk_weights, grid.boundary_weights
    bi = grid.boundary_index
    Y, W = traj.y[1:], traj.w[1:]
    YG = Y[:, bi]
    dY = np.diff(traj.y, axis=0) / dt
    dYG = dY[:, bi]
    K, KG = grid.stiffness, grid.boundary_stiffness
    interior = np.ones(grid.bulk_count, dtype=bool)
    interior[bi] = False

    def h_sq(v):
        return float(wts @ v**2)

    def v_sq(v):
        return h_sq(v) + float(v @ (K @ v))

    def hg_sq(v):
        return float(wg @ v**2)

    def vg_sq(v):
        return hg_sq(v) + float(v @ (KG @ v))

    y_h1vstar = math.sqrt(dt * sum(_dual_full(y, grid) ** 2 + dual_norm(d, grid) ** 2 for y, d in zip(Y, dY)))
    y_linf_v = max(math.sqrt(v_sq(y)) for y in traj.y)
    lap = [(K @ y)[interior] / wts[interior] for y in Y]
    y_l2h2 = math.sqrt(dt * sum(v_sq(y) + float(wts[interior] @ l**2) for y, l in zip(Y, lap)))
    yg_h1 = math.sqrt(dt * sum(hg_sq(a) + hg_sq(b) for a, b in zip(YG, dYG)))
    yg_linf = max(math.sqrt(vg_sq(a)) for a in traj.y[:, bi])
    yg_l2h2 = math.sqrt(dt * sum(vg_sq(a) + hg_sq((KG @ a) / wg) for a in YG))
    w_l2v = math.sqrt(dt * sum(v_sq(w) for w in W))
    fy = math.sqrt(dt * sum(h_sq(f.df(y)) for y in Y))
    fyg = math.sqrt(dt * sum(hg_sq(f_gamma.df(a)) for a in YG))
    visc = math.sqrt(tau) * math.sqrt(dt * sum(h_sq(d) for d in dY))
    parts = {
        "y": y_h1vstar + y_linf_v + y_l2h2,
        "y_gamma": yg_h1 + yg_linf + yg_l2h2,
        "w": w_l2v,
        "f_prime": fy,
        "f_gamma_prime": fyg,
        "viscous": visc,
    }
    parts["total"] = float(sum(parts.values()))
    return parts


def time_weights(n_steps: int, dt: float) -> np.ndarray:
    """Trapezoidal weights on the levels ``t_0 .. t_K`` used for all space-time integrals."""
    om = np.full(n_steps + 1, dt)
    om[0] = om[-1] = dt / 2
    return om
