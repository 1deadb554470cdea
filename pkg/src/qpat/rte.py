"""Two-dimensional discrete-ordinates transport solver used as a reference model.

The unit square is split into ``nx`` x ``nx`` square cells.  Each direction
is swept with the first-order step (upwind) scheme and the scattering source
is lagged (source iteration).  Angular integrals use the normalized measure,
so an isotropic field ``u = c`` has angular average ``c``.
"""

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidParameterError, NonConvergenceError

__all__ = [
    "AngularGrid", "TransportGrid", "TransportSolution", "hg_phase_2d",
    "hg_phase_matrix", "solve_rte", "angular_average", "rte_on_mesh",
]


@dataclass(frozen=True)
class AngularGrid:
    """Directions on the unit circle with weights summing to one.

    ``AngularGrid.equispaced(n)`` places angles at 2 pi (k + 1/2) / n so no
    direction runs exactly along a grid axis.
    """

    directions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if d.shape[1] != 2 or len(d) != len(w):
            raise InvalidParameterError("directions must be (n, 2) with one weight each")
        if not np.allclose(np.hypot(d[:, 0], d[:, 1]), 1.0, atol=1e-14):
            raise InvalidParameterError("directions must be unit vectors")
        if abs(w.sum() - 1.0) > 1e-14:
            raise InvalidParameterError("angular weights must sum to one")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "weights", w)

    @classmethod
    def equispaced(cls, n_dirs):
        if n_dirs < 1:
            raise InvalidParameterError("need at least one direction")
        theta = 2 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
        return cls(np.column_stack([np.cos(theta), np.sin(theta)]),
                   np.full(n_dirs, 1.0 / n_dirs))

    @property
    def n_dirs(self):
        return len(self.weights)

    @property
    def angles(self):
        return np.arctan2(self.directions[:, 1], self.directions[:, 0])


@dataclass(frozen=True)
class TransportGrid:
    """Cell-centred square grid on the unit square."""

    nx: int

    @property
    def h(self):
        return 1.0 / self.nx

    @property
    def centers(self):
        return (np.arange(self.nx) + 0.5) / self.nx

    def cell_points(self):
        c = self.centers
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass
class TransportSolution:
    grid: TransportGrid
    angular: AngularGrid
    u: np.ndarray = field(repr=False)   # (n_dirs, nx, nx), cell (i, j) at (x_i, y_j)
    U: np.ndarray = field(repr=False)   # (nx, nx)
    iterations: int = 0
    spectral_radius: float = float("nan")
    residuals: list = field(default_factory=list, repr=False)


def hg_phase_2d(g, n_dirs):
    """Henyey-Greenstein kernel between equispaced planar directions.

    The three-dimensional HG formula is evaluated at the cosine of the planar
    angle and each row is rescaled to sum to one.
    """
    return hg_phase_matrix(g, AngularGrid.equispaced(n_dirs))


def hg_phase_matrix(g, angular):
    if not (-1.0 < g < 1.0):
        raise InvalidParameterError(f"anisotropy g must lie in (-1, 1), got {g}")
    d = angular.directions
    c = np.clip(d @ d.T, -1.0, 1.0)
    p = (1.0 - g * g) / (1.0 + g * g - 2.0 * g * c) ** 1.5
    # weight by the quadrature so that rows act on nodal angular values
    p = p * angular.weights[None, :]
    return p / p.sum(axis=1, keepdims=True)


@numba.njit(cache=True)
def _sweep(mu, eta, sigma_t, q, inflow, h, out):
    """Step upwind sweep of every direction.

    ``inflow`` has shape (n_dirs, 4, nx): boundary values on the bottom,
    right, top and left sides at the face midpoints.
    """
    nd = mu.shape[0]
    nx = sigma_t.shape[0]
    for k in range(nd):
        ax = abs(mu[k]) / h
        ay = abs(eta[k]) / h
        if mu[k] >= 0:
            i0, i1, di, xside = 0, nx, 1, 3
        else:
            i0, i1, di, xside = nx - 1, -1, -1, 1
        if eta[k] >= 0:
            j0, j1, dj, yside = 0, nx, 1, 0
        else:
            j0, j1, dj, yside = nx - 1, -1, -1, 2
        for j in range(j0, j1, dj):
            for i in range(i0, i1, di):
                if i == i0:
                    uw = inflow[k, xside, j]
                else:
                    uw = out[k, i - di, j]
                if j == j0:
                    us = inflow[k, yside, i]
                else:
                    us = out[k, i, j - dj]
                out[k, i, j] = (q[k, i, j] + ax * uw + ay * us) / (sigma_t[i, j] + ax + ay)


def _boundary_inflow(grid, angular, f):
    """Inflow values per direction and side; zero on outgoing sides."""
    c = grid.centers
    zeros, ones = np.zeros_like(c), np.ones_like(c)
    sides = [np.column_stack(s) for s in ((c, zeros), (ones, c), (c, ones), (zeros, c))]
    normals = np.array([[0, -1], [1, 0], [0, 1], [-1, 0]], dtype=float)
    vals = np.array([f(p) if callable(f) else np.full(len(c), float(f)) for p in sides])
    incoming = angular.directions @ normals.T < 0          # (n_dirs, 4)
    return np.where(incoming[:, :, None], vals[None, :, :], 0.0)


def solve_rte(grid, sigma_a, sigma_s, f, angular, g=0.8, tol=1e-8, max_iter=20000,
              phase=None):
    """Source iteration for v . grad u + sigma_t u = sigma_s K u with inflow f.

    Parameters
    ----------
    grid : TransportGrid
    sigma_a, sigma_s : array_like (nx, nx) or callable on (m, 2) points
        Coefficients at cell centres.
    f : callable or float
        Isotropic inflow on the boundary, evaluated at face midpoints.
    angular : AngularGrid
    tol : float
        Stop once the max-norm update of u falls below ``tol`` times max|u|.
    """
    nx = grid.nx
    pts = grid.cell_points()

    def cell_values(c):
        if callable(c):
            return np.asarray(c(pts), dtype=float).reshape(nx, nx)
        arr = np.asarray(c, dtype=float)
        return np.full((nx, nx), float(arr)) if arr.ndim == 0 else arr.reshape(nx, nx)

    sa, ss = cell_values(sigma_a), cell_values(sigma_s)
    if np.any(sa < 0) or np.any(ss < 0):
        raise InvalidParameterError("transport coefficients must be non-negative")
    st = sa + ss
    K = phase if phase is not None else hg_phase_matrix(g, angular)
    mu = np.ascontiguousarray(angular.directions[:, 0])
    eta = np.ascontiguousarray(angular.directions[:, 1])
    inflow = np.ascontiguousarray(_boundary_inflow(grid, angular, f))
    nd = angular.n_dirs

    u = np.zeros((nd, nx, nx))
    q = np.zeros_like(u)
    new = np.empty_like(u)
    residuals = []
    rho = float("nan")
    for it in range(1, max_iter + 1):
        _sweep(mu, eta, st, q, inflow, grid.h, new)
        change = np.max(np.abs(new - u))
        scale = max(np.max(np.abs(new)), 1e-300)
        residuals.append(change / scale)
        if len(residuals) > 3:
            rho = residuals[-1] / residuals[-2]
        u, new = new, u
        if residuals[-1] <= tol:
            break
        q = ss[None] * np.tensordot(K, u, axes=(1, 0))
    else:
        raise NonConvergenceError(
            f"source iteration did not converge in {max_iter} sweeps",
            residuals[-1], rho)
    U = np.tensordot(angular.weights, u, axes=(0, 0))
    return TransportSolution(grid, angular, u, U, it, rho, residuals)


def angular_average(solution):
    """U = sum_k w_k u_k."""
    return np.tensordot(solution.angular.weights, solution.u, axes=(0, 0))


def rte_on_mesh(solution, mesh):
    """Bilinear interpolation of U from cell centres to mesh nodes.

    Nodes outside the outermost centres are extrapolated linearly.
    """
    c = solution.grid.centers
    interp = RegularGridInterpolator((c, c), solution.U, method="linear",
                                     bounds_error=False, fill_value=None)
    return interp(mesh.nodes)
