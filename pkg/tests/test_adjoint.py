import dataclasses

import numpy as np
import pytest

from chcontrol.adjoint import (
    adjoint_energy,
    final_residual,
    lambda_fields,
    lambda_residual_norm,
    solve_adjoint,
)
from chcontrol.control import CostSpec
from chcontrol.grid import build_grid, mean
from chcontrol.potential import regular
from chcontrol.state import SolverConfig, solve_state, time_weights

from conftest import make_random_target_problem


def _tangent(traj, du, grid, f, fg, tau):
    """Linearised forward map, assembled densely from the grid operators."""
    dt = traj.dt
    n = grid.bulk_count
    bi = grid.boundary_index
    w, wg = grid.bulk_weights, grid.boundary_weights
    tr = grid.trace_matrix.toarray()
    K = grid.stiffness.toarray()
    KG = tr.T @ grid.boundary_stiffness.toarray() @ tr
    M = np.diag(w)
    bmass = tr.T @ wg
    dy = np.zeros((traj.n_steps + 1, n))
    for k in range(1, traj.n_steps + 1):
        y_new, y_old = traj.y[k], traj.y[k - 1]
        imp = w * f.beta_prime(y_new) + tr.T @ (wg * fg.beta_prime(y_new[bi]))
        exp = w * f.pi_prime(y_old) + tr.T @ (wg * fg.pi_prime(y_old[bi]))
        J = K + KG + np.diag(tau / dt * w + bmass / dt + imp)
        A = np.block([[M, dt * K], [-J, M]])
        rhs = np.concatenate(
            [M @ dy[k - 1], -(tau / dt * w + bmass / dt - exp) * dy[k - 1] - tr.T @ (wg * du[k])]
        )
        dy[k] = np.linalg.solve(A, rhs)[:n]
    return dy


@pytest.mark.parametrize("tau", [0.0, 0.2])
def test_discrete_transpose_identity(tau):
    grid = build_grid("1d", 9)
    f = regular()
    cfg = SolverConfig(0.05, 0.25, tau=tau)
    rng = np.random.default_rng(4)
    y0 = 0.4 * np.cos(np.pi * grid.coords[:, 0])
    u = 0.3 * rng.standard_normal((6, 2))
    traj = solve_state(y0, u, cfg, grid, f, f)
    spec = CostSpec(1.0, 1.0, 0.0, z_q=rng.standard_normal((6, 9)), z_sigma=rng.standard_normal((6, 2)))
    spec = spec.conform(5, grid)
    coeffs = lambda_fields(traj, spec, f, f)
    adj = solve_adjoint(traj, coeffs, grid)
    om = time_weights(5, cfg.dt)
    for _ in range(5):
        du = rng.standard_normal((6, 2))
        dy = _tangent(traj, du, grid, f, f, tau)
        forcing = grid.bulk_weights * coeffs.phi_q
        forcing[:, grid.boundary_index] += grid.boundary_weights * coeffs.phi_sigma
        lhs = float(np.sum(om[:, None] * forcing * dy))
        rhs = float(np.sum(om[:, None] * grid.boundary_weights * adj.q_gamma * du))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)


def test_lambda_field_examples(grid1d):
    f = regular()
    traj = solve_state(np.zeros(17), 0.0, SolverConfig(0.01, 0.05), grid1d, f, f)
    spec = CostSpec(1.0, 1.0, 0.0, z_q=traj.y, z_sigma=traj.y_gamma).conform(5, grid1d)
    c = lambda_fields(traj, spec, f, f)
    np.testing.assert_array_equal(c.lam, -1.0)
    np.testing.assert_array_equal(c.phi_q, 0.0)
    spec0 = CostSpec(0.0, 1.0, 0.0, z_q=5.0, z_sigma=0.0).conform(5, grid1d)
    np.testing.assert_array_equal(lambda_fields(traj, spec0, f, f).phi_q, 0.0)


def test_zero_forcing_gives_zero_adjoint():
    p = make_random_target_problem(weights=(0.0, 0.0, 1.0))
    traj = p.simulate(0.1)
    adj = solve_adjoint(traj, lambda_fields(traj, p.cost, p.f, p.f_gamma), p.grid)
    assert np.all(adj.q == 0.0)
    assert final_residual(adj, p.grid) == 0.0
    coeffs = lambda_fields(traj, p.cost, p.f, p.f_gamma)
    assert lambda_residual_norm(adj, coeffs, p.grid, probes=4) == 0.0


@pytest.mark.parametrize("tau", [0.0, 0.1])
def test_adjoint_mean_free_and_terminal(tau):
    p = make_random_target_problem(tau=tau)
    traj = p.simulate(0.2)
    adj = solve_adjoint(traj, lambda_fields(traj, p.cost, p.f, p.f_gamma), p.grid)
    for qk in adj.q:
        assert abs(mean(qk, p.grid)) <= 1e-10 * max(1.0, np.abs(adj.q).max())
    assert final_residual(adj, p.grid) <= 1e-10
    np.testing.assert_array_equal(adj.q_gamma, adj.q[:, p.grid.boundary_index])


def test_final_residual_detects_corruption(grid1d):
    p = make_random_target_problem()
    traj = p.simulate(0.0)
    adj = solve_adjoint(traj, lambda_fields(traj, p.cost, p.f, p.f_gamma), p.grid)
    bad = dataclasses.replace(adj, terminal_q_gamma=adj.terminal_q_gamma + 1.0)
    assert final_residual(bad, p.grid) >= 0.5 * p.grid.boundary_weights.min()


def test_lambda_residual_linear_in_q():
    p = make_random_target_problem()
    traj = p.simulate(0.1)
    coeffs = lambda_fields(traj, p.cost, p.f, p.f_gamma)
    adj = solve_adjoint(traj, coeffs, p.grid)
    one = lambda_residual_norm(adj, coeffs, p.grid, probes=8)
    two = lambda_residual_norm(dataclasses.replace(adj, q=2 * adj.q), coeffs, p.grid, probes=8)
    assert one > 0 and two == pytest.approx(2 * one, rel=1e-12)


def test_tau_uniform_adjoint_bounds():
    p = make_random_target_problem()
    lam, energies = [], []
    for tau in (1e-1, 1e-2, 1e-3, 1e-4):
        traj = p.simulate(0.1, tau)
        coeffs = lambda_fields(traj, p.cost, p.f, p.f_gamma)
        adj = solve_adjoint(traj, coeffs, p.grid)
        lam.append(lambda_residual_norm(adj, coeffs, p.grid, probes=16))
        energies.append(adjoint_energy(adj, p.grid))
    assert max(lam) <= 2 * lam[-1] and min(lam) >= lam[-1] / 2
    for key in ("dual_sq", "boundary_sq", "grad_sq"):
        vals = [e[key] for e in energies]
        assert max(vals) <= 2 * min(vals)
