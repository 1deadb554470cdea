"""Projected limited-memory BFGS and adjoint-state gradient helpers."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, LineSearchStall

__all__ = [
    "LbfgsOptions", "OptimizeResult", "lbfgs_minimize", "adjoint_gradient",
    "fd_gradient_check", "save_trace_csv", "FreeNodeMap",
]


@dataclass
class LbfgsOptions:
    memory: int = 10
    max_iters: int = 200
    gtol: float = 1e-8           # relative to the initial projected gradient
    ftol: float = 0.0            # relative objective decrease; 0 disables the test
    c1: float = 1e-4
    min_step: float = 1e-16
    lower: object = -np.inf
    upper: object = np.inf

    def __post_init__(self):
        if self.memory < 1:
            raise InvalidParameterError("L-BFGS memory must be at least 1")
        lo, hi = np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)
        if np.any(lo >= hi):
            raise InvalidParameterError("lower bounds must be strictly below upper bounds")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def _projected_gradient(x, g, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def _two_loop(q, pairs):
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q = q - a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q = q * ((s @ y) / (y @ y))
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q = q + (a - b) * s
    return q


def lbfgs_minimize(fun, x0, opts=None, callback=None):
    """Minimize ``fun`` over a box with projected L-BFGS.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (value, gradient)``.
    x0 : ndarray
        Starting point; projected onto the box first.
    opts : LbfgsOptions

    Returns
    -------
    OptimizeResult
        The trace holds one dict per accepted iterate with keys
        ``iteration, objective, grad_norm, step``.

    Raises
    ------
    LineSearchStall
        When backtracking falls below ``opts.min_step``; carries the best iterate.
    """
    opts = opts or LbfgsOptions()
    lo = np.broadcast_to(np.asarray(opts.lower, dtype=float), np.shape(x0))
    hi = np.broadcast_to(np.asarray(opts.upper, dtype=float), np.shape(x0))
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = fun(x)
    pg = _projected_gradient(x, g, lo, hi)
    gnorm0 = np.max(np.abs(pg))
    trace = [dict(iteration=0, objective=float(f), grad_norm=float(gnorm0), step=0.0)]
    pairs = []
    if gnorm0 == 0.0:
        return OptimizeResult(x, float(f), 0.0, 0, True, "zero gradient at start", trace)
    gnorm = gnorm0
    message, converged, it = "iteration limit", False, 0
    for it in range(1, opts.max_iters + 1):
        free = pg != 0.0
        if pairs:
            d = -_two_loop(np.where(free, g, 0.0), pairs)
            d[~free] = 0.0
            if d @ pg >= 0:
                pairs.clear()
        if not pairs:
            d = -pg / np.max(np.abs(pg))
        slope = d @ pg
        t = 1.0
        while True:
            x_new = np.clip(x + t * d, lo, hi)
            if np.array_equal(x_new, x):
                # the step has rounded away; nothing left to backtrack
                raise LineSearchStall(f"step vanished at iteration {it}", x, trace)
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + opts.c1 * (g @ (x_new - x)) and f_new <= f:
                break
            t *= 0.5
            if t < opts.min_step or slope == 0:
                raise LineSearchStall(
                    f"no Armijo step above {opts.min_step:g} at iteration {it}", x, trace)
        s, y = x_new - x, g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > opts.memory:
                pairs.pop(0)
        f_old = f
        x, f, g = x_new, f_new, g_new
        pg = _projected_gradient(x, g, lo, hi)
        gnorm = np.max(np.abs(pg))
        trace.append(dict(iteration=it, objective=float(f), grad_norm=float(gnorm), step=float(t)))
        if callback is not None:
            callback(x, f)
        if gnorm <= opts.gtol * gnorm0:
            message, converged = "projected gradient below tolerance", True
            break
        if opts.ftol > 0 and f_old - f <= opts.ftol * max(abs(f_old), 1e-300):
            message, converged = "relative decrease below tolerance", True
            break
    return OptimizeResult(x, float(f), float(gnorm), it, converged, message, trace)


def adjoint_gradient(model, sig, factorization, x, dJ_dPhi, chain, drop_absorption=False):
    """Gradient of J(Phi(c)) with respect to a nodal coefficient c.

    One extra solve with the (symmetric) forward matrix gives the adjoint
    state; ``chain[j]`` is d sigma_j / d c for the moment stack ``sig``.
    """
    lam = factorization.solve(dJ_dPhi)
    sens = model.moment_sensitivity(sig, lam, x, drop_absorption)
    return -(np.asarray(chain) @ sens), lam


def fd_gradient_check(fun, x, n_directions=10, h=1e-5, seed=0, mask=None):
    """Largest relative error between adjoint and central-difference slopes.

    Returns (max_error, per-direction errors).
    """
    if not (1e-7 <= h <= 1e-3):
        raise InvalidParameterError("finite-difference step must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    _, g = fun(x)
    scale = np.maximum(np.abs(x), 1.0)
    errs = []
    for _ in range(n_directions):
        d = rng.standard_normal(x.shape) * scale
        if mask is not None:
            d[~mask] = 0.0
        exact = g @ d
        fp, _ = fun(x + h * d)
        fm, _ = fun(x - h * d)
        approx = (fp - fm) / (2 * h)
        errs.append(abs(exact - approx) / max(abs(exact), 1e-300))
    return max(errs), errs


def save_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "grad_norm", "step"])
        for row in trace:
            w.writerow([row["iteration"], repr(row["objective"]), repr(row["grad_norm"]),
                        repr(row["step"])])


class FreeNodeMap:
    """Embed the free (interior) values into a full nodal field with fixed boundary values."""

    def __init__(self, fixed_mask, fixed_values):
        self.fixed = np.asarray(fixed_mask, dtype=bool)
        self.free = ~self.fixed
        self.base = np.asarray(fixed_values, dtype=float).copy()

    def full(self, z):
        out = self.base.copy()
        out[self.free] = z
        return out

    def restrict(self, v):
        return np.asarray(v)[self.free]
