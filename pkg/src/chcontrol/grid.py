"""Structured grids and the lumped finite-element operators built on them.

Two geometries are supported: the unit interval (``mode="1d"``) and the unit
square (``mode="2d"``).  Bulk operators use P1 (1-d) or bilinear Q1 (2-d)
elements with row-sum mass lumping; the boundary of the square is treated as
a closed curve of ``4 (n - 1)`` equally spaced vertices carrying a periodic
P1 Laplace-Beltrami stiffness.  The two end points of the interval form a
zero-dimensional boundary on which the tangential operator vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .exceptions import InvalidMeshError, LinearSolverError, MeanViolationError

MODES = ("1d", "2d")

# reference stiffness of the unit bilinear element, local order
# (0,0), (1,0), (1,1), (0,1); independent of h in two dimensions
_Q1_STIFFNESS = np.array(
    [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ]
) / 6.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable discretisation of the domain and its boundary curve.

    Attributes
    ----------
    mode : {"1d", "2d"}
    n : int
        Vertices per side.
    h : float
        Mesh width ``1 / (n - 1)``.
    coords : ndarray, shape (bulk_count, dim)
    boundary_index : ndarray of int
        Boundary positions mapped to bulk vertex indices.  In 2-d the list
        runs counterclockwise from the origin and closes on itself.
    bulk_weights, boundary_weights : ndarray
        Lumped quadrature weights (volume and arclength).
    stiffness, boundary_stiffness : scipy.sparse.csr_matrix
    trace_matrix : scipy.sparse.csr_matrix, shape (boundary_count, bulk_count)
    """

    mode: str
    n: int
    h: float
    coords: np.ndarray = field(repr=False)
    boundary_index: np.ndarray = field(repr=False)
    bulk_weights: np.ndarray = field(repr=False)
    boundary_weights: np.ndarray = field(repr=False)
    stiffness: sps.csr_matrix = field(repr=False)
    boundary_stiffness: sps.csr_matrix = field(repr=False)
    trace_matrix: sps.csr_matrix = field(repr=False)

    @property
    def bulk_count(self) -> int:
        return self.coords.shape[0]

    @property
    def boundary_count(self) -> int:
        return self.boundary_index.shape[0]

    @property
    def volume(self) -> float:
        return float(self.bulk_weights.sum())

    @property
    def perimeter(self) -> float:
        return float(self.boundary_weights.sum())

    @cached_property
    def mass(self) -> sps.dia_matrix:
        return sps.diags(self.bulk_weights)

    @cached_property
    def boundary_mass(self) -> sps.dia_matrix:
        return sps.diags(self.boundary_weights)

    @cached_property
    def _bordered(self) -> sps.csc_matrix:
        # [[K, M1], [(M1)^T, 0]] fixes the additive constant of the Neumann problem
        m1 = sps.csc_matrix(self.bulk_weights[:, None])
        return sps.bmat([[self.stiffness, m1], [m1.T, None]], format="csc")

    @cached_property
    def _neumann_lu(self):
        return splu(self._bordered)

    def to_descriptor(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "h": self.h,
            "boundary_index": self.boundary_index.tolist(),
        }


def _stiffness_1d(n: int, h: float) -> sps.csr_matrix:
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sps.diags([off, main, off], [-1, 0, 1], format="csr") / h


def _stiffness_2d(n: int) -> sps.csr_matrix:
    ii, jj = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    base = (ii + n * jj).ravel()
    # element connectivity in the local order used by _Q1_STIFFNESS
    conn = np.stack([base, base + 1, base + 1 + n, base + n], axis=1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.tile(_Q1_STIFFNESS.ravel(), conn.shape[0])
    return sps.coo_matrix((vals, (rows, cols)), shape=(n * n, n * n)).tocsr()


def _periodic_stiffness(m: int, h: float) -> sps.csr_matrix:
    k = sps.diags([-np.ones(m - 1), np.full(m, 2.0), -np.ones(m - 1)], [-1, 0, 1], format="lil")
    k[0, m - 1] = -1.0
    k[m - 1, 0] = -1.0
    return k.tocsr() / h


def _square_boundary(n: int) -> np.ndarray:
    idx = lambda i, j: i + n * j  # noqa: E731
    bottom = [idx(i, 0) for i in range(n - 1)]
    right = [idx(n - 1, j) for j in range(n - 1)]
    top = [idx(i, n - 1) for i in range(n - 1, 0, -1)]
    left = [idx(0, j) for j in range(n - 1, 0, -1)]
    return np.array(bottom + right + top + left, dtype=np.intp)


def build_grid(mode: str = "1d", n: int = 17) -> Grid:
    """Build a uniform grid with all operators assembled.

    Raises
    ------
    InvalidMeshError
        If ``n < 3`` or the mode is unknown.
    """
    if mode not in MODES:
        raise InvalidMeshError(f"unknown grid mode {mode!r}; expected one of {MODES}")
    if int(n) != n or n < 3:
        raise InvalidMeshError(f"need at least 3 vertices per side, got n={n}")
    n = int(n)
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    w1 = np.full(n, h)
    w1[0] = w1[-1] = h / 2

    if mode == "1d":
        coords = x[:, None]
        weights = w1
        stiffness = _stiffness_1d(n, h)
        boundary_index = np.array([0, n - 1], dtype=np.intp)
        # point measure on the two end points
        boundary_weights = np.ones(2)
        boundary_stiffness = sps.csr_matrix((2, 2))
    else:
        xx, yy = np.meshgrid(x, x, indexing="xy")
        coords = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.outer(w1, w1).ravel()
        stiffness = _stiffness_2d(n)
        boundary_index = _square_boundary(n)
        boundary_weights = np.full(boundary_index.size, h)
        boundary_stiffness = _periodic_stiffness(boundary_index.size, h)

    nb = boundary_index.size
    trace = sps.csr_matrix(
        (np.ones(nb), (np.arange(nb), boundary_index)), shape=(nb, coords.shape[0])
    )
    for arr in (coords, boundary_index, weights, boundary_weights):
        arr.setflags(write=False)
    return Grid(
        mode=mode,
        n=n,
        h=h,
        coords=coords,
        boundary_index=boundary_index,
        bulk_weights=weights,
        boundary_weights=boundary_weights,
        stiffness=stiffness,
        boundary_stiffness=boundary_stiffness,
        trace_matrix=trace,
    )


def _kind(values: np.ndarray, grid: Grid) -> str:
    if values.shape[-1] == grid.bulk_count:
        return "bulk"
    if values.shape[-1] == grid.boundary_count:
        return "boundary"
    raise TypeError(
        f"field of length {values.shape[-1]} conforms neither to the bulk "
        f"({grid.bulk_count}) nor to the boundary ({grid.boundary_count})"
    )


def mean(field, grid: Grid) -> float:
    """Generalised mean value ``(1/|Omega|) * sum_i w_i y_i``."""
    return float(grid.bulk_weights @ np.asarray(field)) / grid.volume


def apply_bulk_stiffness(field, grid: Grid) -> np.ndarray:
    return grid.stiffness @ np.asarray(field, dtype=float)


def apply_boundary_stiffness(field, grid: Grid) -> np.ndarray:
    return grid.boundary_stiffness @ np.asarray(field, dtype=float)


def trace(field, grid: Grid) -> np.ndarray:
    return np.asarray(field)[..., grid.boundary_index]


def lift(boundary_field, grid: Grid, background) -> np.ndarray:
    """Write boundary values into a copy of ``background``."""
    out = np.array(background, dtype=float, copy=True)
    out[..., grid.boundary_index] = boundary_field
    return out


def neumann_solve(v, grid: Grid, rtol: float = 1e-12, mean_tol: float = 1e-10) -> np.ndarray:
    """Zero-mean solution ``p`` of ``K p = M v``.

    The caller must hand in a mean-free ``v``; residual means up to
    ``mean_tol`` are attributed to round-off and removed before the solve.
    """
    v = np.asarray(v, dtype=float)
    m = mean(v, grid)
    if abs(m) > mean_tol:
        raise MeanViolationError(m)
    rhs = grid.bulk_weights * (v - m)
    lu = grid._neumann_lu
    b = np.append(rhs, 0.0)
    sol = lu.solve(b)
    # one sweep of iterative refinement keeps the residual at round-off level
    sol += lu.solve(b - grid._bordered @ sol)
    p = sol[:-1]
    p -= mean(p, grid)
    res = np.linalg.norm(grid.stiffness @ p - rhs)
    scale = np.linalg.norm(rhs)
    if res > rtol * max(scale, np.finfo(float).tiny):
        if scale == 0.0 and res == 0.0:
            return p
        raise LinearSolverError(f"Neumann solve residual {res:.3e} above tolerance", residual=res)
    return p


def dual_norm(v, grid: Grid) -> float:
    """``||v||_* = ||grad N v||`` for a mean-free ``v``."""
    v = np.asarray(v, dtype=float)
    p = neumann_solve(v, grid)
    val = float((grid.bulk_weights * v) @ p)
    return float(np.sqrt(max(val, 0.0)))


def norm(field, grid: Grid, space: str = "H") -> float:
    """Lumped L2 or H1 norm of a bulk or boundary field.

    ``space`` is one of ``"H"``, ``"V"`` (bulk) or ``"H_Gamma"``,
    ``"V_Gamma"`` (boundary).
    """
    values = np.asarray(field, dtype=float)
    kind = _kind(values, grid)
    expected = {"H": "bulk", "V": "bulk", "H_Gamma": "boundary", "V_Gamma": "boundary"}
    if space not in expected:
        raise ValueError(f"unknown space {space!r}")
    if expected[space] != kind:
        raise TypeError(f"a {kind} field has no {space} norm")
    if kind == "bulk":
        sq = grid.bulk_weights @ values**2
        if space == "V":
            sq += values @ (grid.stiffness @ values)
    else:
        sq = grid.boundary_weights @ values**2
        if space == "V_Gamma":
            sq += values @ (grid.boundary_stiffness @ values)
    return float(np.sqrt(sq))
