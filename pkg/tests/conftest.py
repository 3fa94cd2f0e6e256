import numpy as np
import pytest

from chcontrol.control import ControlProblem, CostSpec
from chcontrol.grid import build_grid
from chcontrol.potential import regular
from chcontrol.projection import ControlBox
from chcontrol.state import SolverConfig, solve_state


def reference_control(times, T):
    """Smooth control strictly inside the standard admissible set."""
    return np.column_stack([0.5 * np.sin(np.pi * times / T), -0.3 + 0.2 * times / T])


def make_tracking_problem(b_0=1e-3, n=17, dt=0.01, T=0.2, box=None):
    """1-d inverse-crime instance: targets come from a forward run."""
    grid = build_grid("1d", n)
    f = regular()
    cfg = SolverConfig(dt=dt, T=T)
    y0 = 0.2 * np.cos(np.pi * grid.coords[:, 0])
    u_dag = reference_control(cfg.times, T)
    traj = solve_state(y0, u_dag, cfg, grid, f, f)
    spec = CostSpec(1.0, 1.0, b_0, z_q=traj.y, z_sigma=traj.y_gamma)
    box = ControlBox(-1.0, 1.0, 5.0) if box is None else box
    return ControlProblem(grid, f, f, y0, cfg, spec, box), u_dag


def make_random_target_problem(seed=3, n=17, dt=0.01, T=0.2, weights=(1.0, 1.0, 1.0), tau=0.0):
    grid = build_grid("1d", n)
    cfg = SolverConfig(dt=dt, T=T, tau=tau)
    rng = np.random.default_rng(seed)
    K = cfg.n_steps
    spec = CostSpec(
        *weights,
        z_q=0.2 * rng.standard_normal((K + 1, grid.bulk_count)),
        z_sigma=0.2 * rng.standard_normal((K + 1, grid.boundary_count)),
    )
    y0 = 0.2 * np.cos(np.pi * grid.coords[:, 0])
    return ControlProblem(grid, regular(), regular(), y0, cfg, spec)


@pytest.fixture
def grid1d():
    return build_grid("1d", 17)


@pytest.fixture
def grid2d():
    return build_grid("2d", 9)


@pytest.fixture(scope="session")
def tracking_problem():
    return make_tracking_problem()
