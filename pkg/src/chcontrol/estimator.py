"""Estimator-style wrapper around :class:`~chcontrol.control.ControlProblem`.

``fit`` takes the bulk target trajectory ``z_Q`` (time levels as rows,
nodes as columns) and solves the tracking problem; ``predict`` returns the
optimal state and ``score`` the negative cost.  The wrapper only packages
hyperparameters; all numerics live in the functional modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .control import ControlProblem, CostSpec, optimize
from .grid import build_grid
from .potential import from_spec
from .projection import ControlBox
from .state import SolverConfig
from .validation import check_bulk_field, check_in_domain, check_scalar, check_space_time


class BoundaryControlEstimator(BaseEstimator):
    """Optimal boundary control for tracking a given bulk trajectory.

    Parameters
    ----------
    mode, n : grid dimension (``"1d"`` or ``"2d"``) and vertices per side.
    dt, T, tau : time step, horizon and viscosity.
    potential, c : potential kind for bulk and boundary; ``c`` for the
        logarithmic kind.
    b_q, b_sigma, b_0 : cost weights.
    u_min, u_max, m_0 : admissible set.
    rtol, max_iter : optimiser stopping rule.

    Attributes
    ----------
    u_opt_ : ndarray of shape (K + 1, boundary_count)
    trajectory_ : Trajectory
    result_ : OptimizeResult
    n_iter_ : int
    """

    def __init__(
        self,
        mode="1d",
        n=17,
        dt=0.01,
        T=0.2,
        tau=0.0,
        potential="regular",
        c=1.0,
        b_q=1.0,
        b_sigma=1.0,
        b_0=1e-3,
        u_min=-1.0,
        u_max=1.0,
        m_0=5.0,
        rtol=1e-8,
        max_iter=300,
    ):
        self.mode = mode
        self.n = n
        self.dt = dt
        self.T = T
        self.tau = tau
        self.potential = potential
        self.c = c
        self.b_q = b_q
        self.b_sigma = b_sigma
        self.b_0 = b_0
        self.u_min = u_min
        self.u_max = u_max
        self.m_0 = m_0
        self.rtol = rtol
        self.max_iter = max_iter

    def _problem(self, z_q, z_sigma, y0):
        grid = build_grid(self.mode, check_scalar(self.n, "n", low=3, integer=True))
        config = SolverConfig(
            dt=check_scalar(self.dt, "dt", low=0, include_low=False),
            T=check_scalar(self.T, "T", low=0, include_low=False),
            tau=check_scalar(self.tau, "tau", low=0),
        )
        pot = from_spec(self.potential, c=self.c)
        K = config.n_steps
        z_q = check_space_time(z_q, K, grid.bulk_count, "z_q")
        z_sigma = z_q[:, grid.boundary_index] if z_sigma is None else z_sigma
        z_sigma = check_space_time(z_sigma, K, grid.boundary_count, "z_sigma")
        y0 = check_bulk_field(z_q[0] if y0 is None else y0, grid, "y0")
        check_in_domain(y0, pot.r_minus, pot.r_plus, "y0")
        spec = CostSpec(self.b_q, self.b_sigma, self.b_0, z_q=z_q, z_sigma=z_sigma)
        box = ControlBox(self.u_min, self.u_max, self.m_0)
        return ControlProblem(grid, pot, pot, y0, config, spec, box)

    def fit(self, X, y=None, z_sigma=None, y0=None, u0=None):
        """Solve the tracking problem for the bulk target ``X``.

        ``y`` is ignored.  ``z_sigma`` defaults to the trace of ``X`` and
        ``y0`` to its first row.
        """
        X = check_array(X, dtype=float, input_name="X")
        self.problem_ = self._problem(X, z_sigma, y0)
        self.result_ = optimize(self.problem_, u0=u0, rtol=self.rtol, max_iter=self.max_iter)
        self.u_opt_ = self.result_.u_opt
        self.trajectory_ = self.result_.trajectory
        self.n_iter_ = self.result_.iterations
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X=None):
        """Optimal bulk trajectory; ``X`` is accepted for API symmetry and ignored."""
        check_is_fitted(self, "u_opt_")
        return self.trajectory_.y.copy()

    def simulate(self, u):
        """State trajectory for another control on the fitted problem."""
        check_is_fitted(self, "problem_")
        return self.problem_.simulate(u)

    def score(self, X, y=None):
        """Negative tracking cost of the fitted control against the target ``X``."""
        check_is_fitted(self, "u_opt_")
        X = check_array(X, dtype=float, input_name="X")
        problem = self._problem(X, None, self.problem_.y0)
        return -problem.objective(self.u_opt_)
