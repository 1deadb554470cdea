"""Single-coefficient reconstructions from one internal datum H.

* absorption: one linear solve with the absorption term moved to the load,
  then a pointwise ratio;
* Grueneisen: one forward solve and a pointwise ratio;
* scattering: regularized misfit minimization with adjoint gradients.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import mesh as fem
from .errors import (InvalidParameterError, UndefinedRegionError,
                     UnreliableReconstructionError)
from .forward import OpticalCoefficients, SpnModel, phi_floor, sigma_chain, sigma_moments
from .optimize import FreeNodeMap, LbfgsOptions, adjoint_gradient, lbfgs_minimize

__all__ = [
    "ReconResult", "VNReport", "safe_ratio", "solve_absorption_eliminated",
    "reconstruct_sigma_a", "reconstruct_gruneisen", "reconstruct_sigma_s",
    "SigmaSObjective", "misfit_matrix", "diagnostic_VN",
]

MAX_FLAGGED_FRACTION = 0.05


@dataclass
class ReconResult:
    recovered: np.ndarray
    relative_l2_error: float = float("nan")
    flags: np.ndarray = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)
    phi0: np.ndarray = field(default=None, repr=False)
    message: str = ""

    @property
    def n_flagged(self):
        return 0 if self.flags is None else int(np.count_nonzero(self.flags))

    @property
    def iterations(self):
        return max(len(self.trace) - 1, 0)

    def summary(self):
        obj = self.trace[-1]["objective"] if self.trace else float("nan")
        return (f"relative_l2_error = {self.relative_l2_error!r}\n"
                f"flagged_nodes = {self.n_flagged}\n"
                f"iterations = {self.iterations}\n"
                f"final_objective = {obj!r}\n")


def _error(mesh, rec, truth):
    return float("nan") if truth is None else fem.relative_l2_error(mesh, rec, truth)


def safe_ratio(mesh, num, den, floor=None, max_fraction=MAX_FLAGGED_FRACTION):
    """num / den with nodes below the floor flagged and filled from the nearest good node.

    Raises UnreliableReconstructionError when more than ``max_fraction`` of the
    nodes are flagged.
    """
    den = np.asarray(den, dtype=float)
    floor = phi_floor(den) if floor is None else floor
    flags = np.abs(den) < floor
    frac = flags.mean()
    if frac > max_fraction:
        raise UnreliableReconstructionError(
            f"{100 * frac:.1f}% of nodes fall below the division floor", flags)
    out = np.zeros_like(den)
    good = ~flags
    out[good] = np.asarray(num, dtype=float)[good] / den[good]
    if flags.any():
        _, idx = cKDTree(mesh.nodes[good]).query(mesh.nodes[flags])
        out[flags] = out[good][idx]
    return out, flags


def _require_simplified(simplified):
    if not simplified:
        raise InvalidParameterError(
            "eliminating sigma_a through the datum needs sigma_n free of sigma_a (simplified=True)")


def solve_absorption_eliminated(model, H, upsilon, sigma_s, f, factorization=None, sig=None):
    """Solve the modified system where the sigma_0 term becomes the known load (H/Upsilon) s_1.

    Returns (x, sig, factorization).
    """
    if sig is None:
        zeros = np.zeros_like(sigma_s)
        sig = sigma_moments(OpticalCoefficients(zeros, sigma_s, zeros + 1.0, model.g), model.N)
    if factorization is None:
        factorization = model.factorize(model.assemble(sig, drop_absorption=True))
    rhs = model.load(f) - model.absorption_load(np.asarray(H) / upsilon)
    return factorization.solve(rhs), sig, factorization


def reconstruct_sigma_a(mesh, H, upsilon, sigma_s, f, N, g=0.8, truth=None,
                        simplified=True, model=None):
    """Recover sigma_a from one datum with sigma_s and Upsilon known.

    The absorption volume term equals (H/Upsilon)(s_1 . Psi) once the
    relation sigma_a = H / (Upsilon phi_0) is used, so Phi solves a linear
    system with a known load; sigma_a follows as a pointwise ratio.
    """
    _require_simplified(simplified)
    if np.any(np.asarray(upsilon) <= 0):
        raise InvalidParameterError("Upsilon must be positive")
    model = model or SpnModel(mesh, N, g)
    x, _, _ = solve_absorption_eliminated(model, H, upsilon, sigma_s, f)
    phi0 = model.phi0(x)
    sa, flags = safe_ratio(mesh, H, upsilon * phi0)
    return ReconResult(sa, _error(mesh, sa, truth), flags, phi0=phi0,
                       message="linear solve and pointwise ratio")


def reconstruct_gruneisen(mesh, H, sigma_a, sigma_s, f, N, g=0.8, truth=None,
                          simplified=True, model=None):
    """Recover Upsilon = H / (sigma_a phi_0) from a fully known forward solve."""
    sigma_a = np.asarray(sigma_a, dtype=float)
    zero = sigma_a <= 0
    if zero.any():
        raise UndefinedRegionError("Upsilon is undefined where sigma_a vanishes",
                                   np.flatnonzero(zero))
    model = model or SpnModel(mesh, N, g)
    coeffs = OpticalCoefficients(sigma_a, sigma_s, np.ones_like(sigma_a), g)
    sol = model.forward(coeffs, f, simplified)
    ups, flags = safe_ratio(mesh, H, sigma_a * sol.phi0)
    return ReconResult(ups, _error(mesh, ups, truth), flags, phi0=sol.phi0,
                       message="forward solve and pointwise ratio")


def misfit_matrix(mesh, norm="H1"):
    """Weight W of the discrete misfit e^T W e: mass (+ stiffness for H1)."""
    M = fem.assemble_mass(mesh)
    if norm == "L2":
        return M
    if norm == "H1":
        return (M + fem.assemble_stiffness(mesh, 1.0)).tocsr()
    raise InvalidParameterError(f"unknown misfit norm {norm!r}")


class SigmaSObjective:
    """J(sigma_s) = 1/2 |Upsilon sigma_a phi_0(sigma_s) - H*|_W^2 + beta/2 |grad sigma_s|^2.

    Called on the free (interior) nodal values; boundary values stay fixed.
    """

    def __init__(self, mesh, H_star, sigma_a, upsilon, sigma_s_fixed, f, N, g=0.8,
                 beta=0.0, norm="H1", simplified=True, model=None):
        if beta < 0:
            raise InvalidParameterError("regularization weight must be non-negative")
        self.mesh = mesh
        self.model = model or SpnModel(mesh, N, g)
        self.H_star = np.asarray(H_star, dtype=float)
        self.sigma_a = np.asarray(sigma_a, dtype=float)
        self.upsilon = np.asarray(upsilon, dtype=float)
        self.weight = self.upsilon * self.sigma_a
        self.W = misfit_matrix(mesh, norm)
        self.K = fem.assemble_stiffness(mesh, 1.0)
        self.beta = beta
        self.simplified = simplified
        self.load = self.model.load(f)
        self.map = FreeNodeMap(mesh.boundary_mask, sigma_s_fixed)
        self.chain = sigma_chain(self.model.g, self.model.N, simplified)[0]
        self.n_evals = 0

    def coefficients(self, sigma_s):
        return OpticalCoefficients(self.sigma_a, sigma_s, self.upsilon, self.model.g)

    def predict(self, sigma_s):
        sig = sigma_moments(self.coefficients(sigma_s), self.model.N, self.simplified)
        fac = self.model.factorize(self.model.assemble(sig))
        x = fac.solve(self.load)
        return self.weight * self.model.phi0(x), x, sig, fac

    def full(self, z):
        return self.map.full(z)

    def __call__(self, z):
        self.n_evals += 1
        s = self.map.full(z)
        Hp, x, sig, fac = self.predict(s)
        r = Hp - self.H_star
        Wr = self.W @ r
        Ks = self.K @ s
        value = 0.5 * r @ Wr + 0.5 * self.beta * s @ Ks
        dJ = np.concatenate([c * (self.weight * Wr) for c in self.model.s1])
        grad, _ = adjoint_gradient(self.model, sig, fac, x, dJ, self.chain)
        grad = grad + self.beta * Ks
        return value, self.map.restrict(grad)


def reconstruct_sigma_s(mesh, H_star, sigma_a, upsilon, sigma_s_fixed, f, N, g=0.8,
                        beta=0.0, norm="H1", truth=None, x0=None, opts=None,
                        simplified=True):
    """Regularized misfit minimization for sigma_s with boundary values held fixed.

    The initial guess defaults to the constant equal to the mean boundary value.
    """
    obj = SigmaSObjective(mesh, H_star, sigma_a, upsilon, sigma_s_fixed, f, N, g,
                          beta, norm, simplified)
    opts = opts or LbfgsOptions(lower=0.5, upper=50.0)
    if x0 is None:
        x0 = np.full(np.count_nonzero(obj.map.free),
                     float(np.mean(np.asarray(sigma_s_fixed)[mesh.boundary_nodes])))
    else:
        x0 = obj.map.restrict(x0)
    res = lbfgs_minimize(obj, x0, opts)
    s = obj.map.full(res.x)
    return ReconResult(s, _error(mesh, s, truth), np.zeros(mesh.n_nodes, dtype=bool),
                       res.trace, message=res.message)


@dataclass
class VNReport:
    values: np.ndarray
    positive_fraction: float
    note: str = ("evaluated without the term carrying the non-computable "
                 "constant; the remaining three terms are reported")


def diagnostic_VN(mesh, model, Phi1, sigma_s1, sigma_a, upsilon, H1, lam, c_lower):
    """Pointwise sufficient-condition field for scattering stability.

    V = (sigma_s1 + 2 c_lower - lam) w^2 + kappa_N (H1/Upsilon) w
        - (1/sigma_s1) grad(H1/(Upsilon sigma_a)) . grad w,   w = s_1 . Q Phi_1
    """
    if not (0.0 < lam < 2.0 * c_lower):
        raise InvalidParameterError("lambda must lie in (0, 2 c_lower)")
    mats = model.mats
    w = mats.s1 @ (mats.Q @ np.asarray(Phi1))
    gu = fem.nodal_gradient(mesh, np.asarray(H1) / (upsilon * sigma_a))
    gw = fem.nodal_gradient(mesh, w)
    V = ((sigma_s1 + 2 * c_lower - lam) * w ** 2 + mats.kappaN * (H1 / upsilon) * w
         - np.sum(gu * gw, axis=1) / sigma_s1)
    return VNReport(V, float(np.mean(V > 0)))
