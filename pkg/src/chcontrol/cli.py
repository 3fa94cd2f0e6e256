"""Command-line entry point: ``chcontrol <subcommand> CONFIG [--out DIR] [--seed N] [-v]``.

Exit status is 0 when every checked invariant holds, 1 when a check fails
or the numerics break down, and 2 for usage, configuration or I/O errors.
Errors are reported as JSON on stderr and, when possible, in
``error.json`` inside the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .adjoint import adjoint_energy
from .config import RunConfig, parse_config
from .control import ControlProblem, gradient_check, optimize, projection_identity_check, vi_residual
from .exceptions import CHControlError, ConfigError
from .grid import build_grid, mean
from .projection import ControlBox, derivative_norm, project_uad, qp_oracle_projection
from .state import solve_state
from .study import tau_study

log = logging.getLogger("chcontrol")

SUBCOMMANDS = ("simulate", "optimize", "adjoint-check", "tau-study", "project-check")


def _check(value, limit, ok) -> dict:
    return {"value": value, "limit": limit, "pass": bool(ok)}


def _write_snapshots(out: Path, traj, grid, stride: int) -> list:
    files = []
    if stride <= 0:
        return files
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    for k in range(0, traj.n_steps + 1, stride):
        files.append(io.write_field(snap / f"y_{k:05d}.csv", traj.y[k], grid))
    return files


def run_simulate(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    grid = cfg.grid()
    f, fg = cfg.potentials()
    sc = cfg.solver_config()
    y0 = cfg.initial_state(grid)
    has_control = cfg.path("cost.control_file") is not None
    u = cfg.reference_control(grid) if has_control else 0.0
    traj = solve_state(y0, u, sc, grid, f, fg)
    d = traj.diagnostics
    drift = float(np.abs(d["mass"] - mean(y0, grid)).max())
    checks = {"mass_drift": _check(drift, 1e-10, drift <= 1e-10)}
    if not has_control:
        rise = float(np.max(np.diff(d["energy"]), initial=0.0))
        checks["energy_increase"] = _check(rise, 1e-12, rise <= 1e-12)
    files = [
        io.write_grid(out / "grid.json", grid),
        io.write_diagnostics(out / "diagnostics.csv", traj),
        io.write_field(out / "y_final.csv", traj.y[-1], grid),
    ]
    files += _write_snapshots(out, traj, grid, cfg["output"]["snapshot_stride"])
    return checks, files


def _optimize_outputs(out: Path, problem: ControlProblem, res, seed: int) -> tuple[dict, list]:
    grid, dt = problem.grid, problem.dt
    q_gamma = res.adjoint.q_gamma
    u = res.u_opt
    scale = max(1.0, problem.norm(u))
    vi = vi_residual(u, q_gamma, problem.box, problem.cost, grid, dt, samples=100, seed=seed)
    hist = np.asarray(res.j_history)
    checks = {
        "converged": _check(res.stationarity, None, res.converged),
        "j_history_monotone": _check(float(np.max(np.diff(hist), initial=0.0)), 0.0, np.all(np.diff(hist) <= 0)),
        "admissible": _check(derivative_norm(u, grid, dt), problem.box.m_0, problem.box.contains(u, grid, dt, 1e-10)),
        "vi_residual": _check(vi, -1e-6 * scale, vi >= -1e-6 * scale),
    }
    if problem.cost.b_0 > 0:
        pid = projection_identity_check(u, q_gamma, problem.box, problem.cost.b_0, grid, dt)
        checks["projection_identity"] = _check(pid, 1e-5, pid <= 1e-5)
    summary = {
        "J": res.j_history[-1],
        "J_initial": res.j_history[0],
        "iterations": res.iterations,
        "converged": res.converged,
        "stationarity": res.stationarity,
        "message": res.message,
        "adjoint_energy": adjoint_energy(res.adjoint, grid),
    }
    files = [
        io.write_grid(out / "grid.json", grid),
        io.write_optimization_log(out / "optimization_log.csv", res.log),
        io.write_control(out / "control.csv", u, res.trajectory.times),
        io.write_diagnostics(out / "diagnostics.csv", res.trajectory),
        io.write_adjoint_diagnostics(out / "adjoint_diagnostics.csv", res.adjoint, grid),
        io.write_json(out / "result.json", summary),
    ]
    return checks, files


def run_optimize(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    problem = cfg.problem()
    o = cfg["optimizer"]
    res = optimize(problem, rtol=o["rtol"], max_iter=o["max_iter"])
    return _optimize_outputs(out, problem, res, cfg["output"]["seed"])


def run_adjoint_check(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    problem = cfg.problem()
    report = gradient_check(problem, seed=cfg["output"]["seed"])
    err = report["relative_error"]
    checks = {"gradient_relative_error": _check(err, 1e-5, err <= 1e-5)}
    return checks, [io.write_json(out / "adjoint_check.json", report)]


def run_tau_study(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    problem = cfg.problem()
    o = cfg["optimizer"]
    rep = tau_study(
        problem, cfg["tau_study"]["tau_list"], anchor=o["anchor"], rtol=o["rtol"], max_iter=o["max_iter"]
    )
    final = rep.entries[-1]
    checks = {
        "state_cauchy_monotone": _check(None, None, rep.monotone_state),
        "stability_ratio": _check(rep.stability_ratio, 2.0, rep.stability_ratio <= 2.0),
        "final_plain_stationarity": _check(final.plain_stationarity, 1e-5, final.plain_stationarity <= 1e-5),
        "no_failures": _check(sum(e.error is not None for e in rep.entries), 0, all(e.error is None for e in rep.entries)),
    }
    rows = (
        [e.tau, e.J, e.plain_stationarity, e.state_cauchy, e.control_cauchy, e.adjoint_cauchy, e.stability, e.lambda_residual]
        for e in rep.entries
    )
    header = ["tau", "J", "stationarity", "state_cauchy", "control_cauchy", "adjoint_cauchy", "stability", "lambda_residual"]
    files = [
        io.write_json(out / "tau_study.json", rep.to_dict()),
        io.write_table(out / "tau_study.csv", header, rows),
    ]
    return checks, files


def run_project_check(cfg: RunConfig, out: Path, samples: int = 20) -> tuple[dict, list]:
    """Both projection methods against the brute-force oracle on 2 x 4 controls."""
    grid = build_grid("1d", 5)
    dt = 1.0 / 3.0
    b = cfg["box"]
    box = ControlBox(b["u_min"], b["u_max"], 1.0)
    rng = np.random.default_rng(cfg["output"]["seed"])
    worst = {"active-set": 0.0, "dykstra": 0.0}
    idem = feas = 0.0
    for _ in range(samples):
        u = rng.normal(scale=2.0, size=(4, 2))
        ref = qp_oracle_projection(u, box, grid, dt)
        for method in worst:
            p = project_uad(u, box, grid, dt, method=method)
            worst[method] = max(worst[method], float(np.abs(p - ref).max()))
        p = project_uad(u, box, grid, dt)
        idem = max(idem, float(np.abs(project_uad(p, box, grid, dt) - p).max()))
        lo, hi = box.bounds(p.shape)
        viol = max(float(np.max(lo - p)), float(np.max(p - hi)), derivative_norm(p, grid, dt) - box.m_0, 0.0)
        feas = max(feas, viol)
    checks = {
        "oracle_active_set": _check(worst["active-set"], 1e-8, worst["active-set"] <= 1e-8),
        "oracle_dykstra": _check(worst["dykstra"], 1e-8, worst["dykstra"] <= 1e-8),
        "idempotence": _check(idem, 1e-10, idem <= 1e-10),
        "feasibility": _check(feas, 1e-10, feas <= 1e-10),
    }
    report = {"samples": samples, "m_0": 1.0, "dt": dt, "max_abs_difference": worst}
    return checks, [io.write_json(out / "project_check.json", report)]


RUNNERS = {
    "simulate": run_simulate,
    "optimize": run_optimize,
    "adjoint-check": run_adjoint_check,
    "tau-study": run_tau_study,
    "project-check": run_project_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chcontrol", description="Boundary control of Cahn-Hilliard systems with dynamic boundary conditions."
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("config", type=Path, help="run configuration (sectioned key = value)")
    parser.add_argument("--out", type=Path, default=None, help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, default=None, help="override output.seed")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _fail(code: int, exc: Exception, out: Path | None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("key", "line", "step", "residual", "gap"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    text = io.dumps(payload)
    sys.stderr.write(text)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text, encoding="utf-8")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out if args.out is not None else Path(cfg["output"]["directory"])
        out.mkdir(parents=True, exist_ok=True)
        checks, files = RUNNERS[args.command](cfg, out)
    except (ConfigError, OSError) as exc:
        return _fail(2, exc, out)
    except (CHControlError, ValueError) as exc:
        return _fail(1, exc, out)
    ok = all(c["pass"] for c in checks.values())
    status = {"ok": ok, "checks": checks}
    io.write_manifest(out, args.command, cfg.text, cfg["output"]["seed"], files, status)
    for name, c in checks.items():
        log.info("%s: %s (value %s, limit %s)", name, "pass" if c["pass"] else "FAIL", c["value"], c["limit"])
    print(f"{args.command}: {'ok' if ok else 'FAILED'} ({out / 'manifest.json'})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
