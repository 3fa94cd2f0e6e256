"""Viscosity continuation: optimise along a decreasing list of ``tau`` values.

Each entry is warm-started from the previous optimum and, when anchoring is
on, first minimises ``J + ||u - u_prev||^2 / 2``.  With ``polish`` the
anchored optimum is then used as the start of a plain optimisation of
``J``, so every reported control is a stationary point of the un-anchored
cost.  Without polishing the anchored iterates lag behind the ``tau`` path
by an amount that decays only like ``1 / (1 + curvature)`` per entry.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import lambda_fields, lambda_residual_norm
from .control import ControlProblem, optimize, stationarity
from .exceptions import CHControlError
from .state import stability_aggregate, time_weights

log = logging.getLogger(__name__)


def l2_q_norm(a, grid, dt: float) -> float:
    """Space-time norm with lumped mass and trapezoidal weights."""
    a = np.asarray(a, dtype=float)
    om = time_weights(a.shape[0] - 1, dt)
    return float(np.sqrt(np.einsum("k,i,ki->", om, grid.bulk_weights, a**2)))


def check_tau_list(tau_list) -> list[float]:
    taus = [float(t) for t in tau_list]
    if not taus:
        raise ValueError("tau list is empty")
    if any(t < 0 for t in taus):
        raise ValueError("tau values must be nonnegative")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau list must be strictly decreasing")
    if taus[-1] != 0.0:
        raise ValueError("tau list must end at 0")
    return taus


@dataclass
class TauEntry:
    tau: float
    J: float = float("nan")
    converged: bool = False
    iterations: int = 0
    stationarity: float = float("nan")  # of the anchored problem
    plain_stationarity: float = float("nan")
    state_cauchy: float | None = None
    control_cauchy: float | None = None
    adjoint_cauchy: float | None = None
    stability: float = float("nan")
    lambda_residual: float = float("nan")
    error: str | None = None


@dataclass
class TauStudyReport:
    entries: list = field(default_factory=list)
    monotone_state: bool = False
    monotone_control: bool = False
    stability_ratio: float = float("nan")
    final_control: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "tau": [e.tau for e in self.entries],
            "entries": [asdict(e) for e in self.entries],
            "monotone_state": self.monotone_state,
            "monotone_control": self.monotone_control,
            "stability_ratio": self.stability_ratio,
        }


def _non_increasing(values) -> bool:
    vals = [v for v in values if v is not None]
    return all(b <= a for a, b in zip(vals, vals[1:]))


def tau_study(
    problem: ControlProblem,
    tau_list,
    u0=None,
    anchor: bool = True,
    rtol: float = 1e-8,
    max_iter: int = 300,
    polish: bool = True,
    probes: int = 16,
) -> TauStudyReport:
    """Run the continuation and collect per-``tau`` metrics.

    The stopping tolerance is ``rtol`` times the gradient norm at the
    starting control for the first ``tau``, shared by all entries so that
    warm starts do not tighten it.  Cauchy differences of entry ``i`` compare it with entry ``i + 1``; the
    last entry has none.  A failed entry is recorded and the study goes on
    from the last successful control.
    """
    taus = check_tau_list(tau_list)
    grid, dt = problem.grid, problem.dt
    report = TauStudyReport()
    u_prev = None if u0 is None else np.asarray(u0, dtype=float)
    results = []
    start = problem.project(np.zeros(problem.control_shape) if u_prev is None else u_prev)
    tol = rtol * problem.norm(problem.evaluate(start, taus[0])[1])
    for i, tau in enumerate(taus):
        entry = TauEntry(tau=tau)
        u_bar = u_prev if (anchor and u_prev is not None) else None
        try:
            res = optimize(problem, u0=u_prev, tau=tau, u_bar=u_bar, tol=tol, max_iter=max_iter)
            entry.stationarity = res.stationarity
            iterations = res.iterations
            if polish and u_bar is not None:
                res = optimize(problem, u0=res.u_opt, tau=tau, tol=tol, max_iter=max_iter)
                iterations += res.iterations
            u = res.u_opt
            J, g, traj, adj = problem.evaluate(u, tau)
            entry.J = J
            entry.converged = res.converged
            entry.iterations = iterations
            entry.plain_stationarity = stationarity(problem, u, g)
            entry.stability = stability_aggregate(traj, grid, problem.f, problem.f_gamma)["total"]
            coeffs = lambda_fields(traj, problem.cost, problem.f, problem.f_gamma)
            entry.lambda_residual = lambda_residual_norm(adj, coeffs, grid, probes=probes)
            results.append((u, traj.y, adj.q))
            u_prev = u
        except CHControlError as exc:
            log.warning("tau=%g failed: %s", tau, exc)
            entry.error = f"{type(exc).__name__}: {exc}"
            results.append(None)
        report.entries.append(entry)
    for i in range(len(taus) - 1):
        if results[i] is not None and results[i + 1] is not None:
            report.entries[i].state_cauchy = l2_q_norm(results[i][1] - results[i + 1][1], grid, dt)
            report.entries[i].control_cauchy = problem.norm(results[i][0] - results[i + 1][0])
            # reported only: the limit adjoint need not be unique
            report.entries[i].adjoint_cauchy = l2_q_norm(results[i][2] - results[i + 1][2], grid, dt)
    report.monotone_state = _non_increasing(e.state_cauchy for e in report.entries)
    report.monotone_control = _non_increasing(e.control_cauchy for e in report.entries)
    stab = [e.stability for e in report.entries if np.isfinite(e.stability)]
    if stab and np.isfinite(report.entries[-1].stability):
        report.stability_ratio = max(stab) / report.entries[-1].stability
    report.final_control = results[-1][0] if results[-1] is not None else None
    return report


def tau_state_sweep(problem: ControlProblem, u, tau_list) -> dict:
    """Fixed-control comparison of ``y^tau`` with the ``tau = 0`` state.

    Returns the distances ``||y^tau - y^0||``, the stability aggregates and
    their ratio to the ``tau = 0`` value.
    """
    taus = [float(t) for t in tau_list]
    ref = problem.simulate(u, 0.0)
    ref_stab = stability_aggregate(ref, problem.grid, problem.f, problem.f_gamma)["total"]
    dist, stab = [], []
    for tau in taus:
        traj = problem.simulate(u, tau)
        dist.append(l2_q_norm(traj.y - ref.y, problem.grid, problem.dt))
        stab.append(stability_aggregate(traj, problem.grid, problem.f, problem.f_gamma)["total"])
    return {
        "tau": taus,
        "distance": dist,
        "stability": stab,
        "reference_stability": ref_stab,
        "strictly_decreasing": all(b < a for a, b in zip(dist, dist[1:])),
        "stability_ratio": max(stab + [ref_stab]) / ref_stab,
    }
