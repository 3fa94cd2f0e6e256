"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or as a script.
"""

import time

import numpy as np
import pytest

from chcontrol.control import gradient_check, optimize, projection_identity_check, stationarity, vi_residual
from chcontrol.grid import build_grid, mean, neumann_solve
from chcontrol.potential import logarithmic, regular
from chcontrol.projection import ControlBox, derivative_norm, project_uad, qp_oracle_projection
from chcontrol.state import SolverConfig, solve_state
from chcontrol.study import tau_state_sweep, tau_study

from conftest import make_random_target_problem, make_tracking_problem, reference_control


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} AC{n}: {detail}")
        assert ok, f"AC{n}: {detail}"

    return emit


def _square_run(tau):
    grid = build_grid("2d", 33)
    x, y = grid.coords.T
    y0 = 0.1 + 0.3 * np.cos(np.pi * x) * np.cos(2 * np.pi * y)
    f = regular()
    start = time.perf_counter()
    traj = solve_state(y0, 0.0, SolverConfig(1e-3, 0.2, tau=tau), grid, f, f)
    return grid, y0, traj, time.perf_counter() - start


@pytest.fixture(scope="module")
def square_runs():
    return {tau: _square_run(tau) for tau in (0.0, 0.1)}


def test_ac1_mass_conservation(square_runs, report):
    grid, y0, traj, elapsed = square_runs[0.0]
    drift = float(np.abs(traj.diagnostics["mass"] - mean(y0, grid)).max())
    report(1, drift <= 1e-10 and elapsed <= 30.0, f"mass drift {drift:.2e} <= 1e-10, runtime {elapsed:.1f} s <= 30 s")


def test_ac2_energy_dissipation(square_runs, report):
    rises = {tau: float(np.max(np.diff(run[2].diagnostics["energy"]))) for tau, run in square_runs.items()}
    ok = all(r <= 1e-12 for r in rises.values())
    detail = ", ".join(f"tau={tau}: max increase {r:.2e}" for tau, r in rises.items())
    report(2, ok, f"{detail} (limit 1e-12)")


def test_ac3_log_containment(report):
    grid = build_grid("1d", 33)
    f = logarithmic(1.0)
    y0 = 0.9 * np.cos(np.pi * grid.coords[:, 0])
    parts, ok = [], True
    for tau in (0.0, 1e-2):
        traj = solve_state(y0, 0.0, SolverConfig(1e-3, 0.2, tau=tau), grid, f, f)
        bad = int(np.count_nonzero(~np.isfinite(traj.y)))
        lo, hi = float(traj.y.min()), float(traj.y.max())
        ok &= traj.n_steps == 200 and bad == 0 and lo > -1 + 1e-9 and hi < 1 - 1e-9
        parts.append(f"tau={tau}: range [{lo:.6f}, {hi:.6f}], non-finite {bad}")
    report(3, ok, "; ".join(parts))


def _neumann_error(n):
    g = build_grid("1d", n)
    v = np.cos(np.pi * g.coords[:, 0])
    return float(np.abs(neumann_solve(v, g) - v / np.pi**2).max())


def test_ac4_neumann_solver(report):
    grid = build_grid("2d", 17)
    rng = np.random.default_rng(0)
    sym = mean_err = 0.0
    for _ in range(20):
        u, v = rng.standard_normal((2, grid.bulk_count))
        u -= mean(u, grid)
        v -= mean(v, grid)
        nu, nv = neumann_solve(u, grid), neumann_solve(v, grid)
        sym = max(sym, abs(grid.bulk_weights @ (u * nv) - grid.bulk_weights @ (v * nu)))
        mean_err = max(mean_err, abs(mean(nv, grid)))
    ratio = _neumann_error(33) / _neumann_error(65)
    ok = sym <= 1e-11 and 3.2 <= ratio <= 4.8 and mean_err <= 1e-12
    report(4, ok, f"symmetry {sym:.1e} <= 1e-11, h-halving ratio {ratio:.3f} in [3.2, 4.8], mean {mean_err:.1e} <= 1e-12")


def test_ac5_adjoint_gradient(report):
    problem = make_random_target_problem(seed=11, n=17, dt=0.01, T=0.2)
    start = time.perf_counter()
    err = gradient_check(problem, directions=5, seed=1)["relative_error"]
    elapsed = time.perf_counter() - start
    assert problem.config.n_steps == 20
    report(5, err <= 1e-5 and elapsed <= 10.0, f"relative error {err:.2e} <= 1e-5, runtime {elapsed:.2f} s <= 10 s")


def test_ac6_optimality_system(report):
    problem, _ = make_tracking_problem(b_0=1e-3)
    res = optimize(problem, rtol=1e-8, max_iter=300)
    g0 = problem.norm(problem.evaluate(problem.project(np.zeros(problem.control_shape)))[1])
    rel = stationarity(problem, res.u_opt, res.gradient) / g0
    scale = max(1.0, problem.norm(res.u_opt))
    vi = vi_residual(res.u_opt, res.adjoint.q_gamma, problem.box, problem.cost, problem.grid, problem.dt, samples=100)
    pid = projection_identity_check(res.u_opt, res.adjoint.q_gamma, problem.box, 1e-3, problem.grid, problem.dt)
    ok = rel <= 1e-6 and vi >= -1e-6 * scale and pid <= 1e-5
    report(6, ok, f"relative stationarity {rel:.1e} <= 1e-6, vi_residual {vi:.2e} >= {-1e-6 * scale:.1e}, projection identity {pid:.2e} <= 1e-5")


def test_ac7_projection(report):
    grid, dt = build_grid("1d", 5), 1.0 / 3.0
    box = ControlBox(-1.0, 1.0, 1.0)
    rng = np.random.default_rng(7)
    oracle = {"dykstra": 0.0, "active-set": 0.0}
    for _ in range(5):
        u = rng.normal(scale=2.0, size=(4, 2))
        ref = qp_oracle_projection(u, box, grid, dt)
        for method in oracle:
            oracle[method] = max(oracle[method], float(np.abs(project_uad(u, box, grid, dt, method=method) - ref).max()))
    idem = feas = 0.0
    for _ in range(100):
        u = rng.normal(scale=2.0, size=(4, 2))
        for method in oracle:
            p = project_uad(u, box, grid, dt, method=method)
            idem = max(idem, float(np.abs(project_uad(p, box, grid, dt, method=method) - p).max()))
            feas = max(feas, float(np.max(np.abs(p))) - 1.0, derivative_norm(p, grid, dt) - 1.0, 0.0)
    ok = max(oracle.values()) <= 1e-8 and idem <= 1e-10 and feas <= 1e-10
    report(
        7,
        ok,
        f"oracle gap dykstra {oracle['dykstra']:.1e}, active-set {oracle['active-set']:.1e} <= 1e-8; "
        f"idempotence {idem:.1e}, feasibility {feas:.1e} <= 1e-10",
    )


def test_ac8_tau_convergence(report):
    problem, u_dag = make_tracking_problem()
    start = time.perf_counter()
    sweep = tau_state_sweep(problem, u_dag, [1e-1, 1e-2, 1e-3, 1e-4])
    elapsed = time.perf_counter() - start
    ok = sweep["strictly_decreasing"] and sweep["stability_ratio"] <= 2.0 and elapsed <= 120.0
    dist = ", ".join(f"{d:.2e}" for d in sweep["distance"])
    report(8, ok, f"distances [{dist}] strictly decreasing, stability ratio {sweep['stability_ratio']:.3f} <= 2, runtime {elapsed:.2f} s")


def test_ac9_anchored_consistency(report):
    problem, _ = make_tracking_problem(b_0=1e-3)
    rep = tau_study(problem, [1e-1, 1e-2, 1e-3, 0.0], anchor=True)
    final = rep.entries[-1]
    ok = final.tau == 0.0 and final.error is None and final.plain_stationarity <= 1e-5
    report(9, ok, f"plain stationarity at tau=0 {final.plain_stationarity:.2e} <= 1e-5")


def _final_state(grid, dt, T=0.2):
    f = regular()
    cfg = SolverConfig(dt, T)
    y0 = 0.2 * np.cos(np.pi * grid.coords[:, 0])
    return solve_state(y0, reference_control(cfg.times, T), cfg, grid, f, f)


def test_ac10_time_accuracy(report):
    # error at T: the space-time norm is dominated by the initial layer until dt ~ 2e-3
    grid = build_grid("1d", 17)
    dt = 0.01
    ref = _final_state(grid, dt / 16).y[-1]
    errs = [np.sqrt(grid.bulk_weights @ (_final_state(grid, d).y[-1] - ref) ** 2) for d in (dt, dt / 2)]
    ratio = errs[0] / errs[1]
    report(10, 1.6 <= ratio <= 2.4, f"dt-halving error ratio {ratio:.3f} in [1.6, 2.4] (errors {errs[0]:.2e}, {errs[1]:.2e})")

if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
