"""Two-coefficient reconstructions from two or more internal data sets.

Nonlinear paths:

* (sigma_a, Upsilon): the cross products H_i phi0_j - H_j phi0_i do not
  depend on Upsilon, so sigma_a is fitted first and Upsilon follows from an
  averaged ratio;
* (sigma_s, sigma_a): the ratio H_1 / H_2 equals phi0_1 / phi0_2 where Phi_i
  solves the system with the absorption term eliminated through H_i, which
  depends on sigma_s alone; sigma_a is recovered afterwards.

Linearized path: crossing quantities, the linearized forward map and a
regularized least-squares solve for the absorption perturbation.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse.linalg as spla

from . import mesh as fem
from .errors import (DegeneratePairError, IllPosedError, InvalidParameterError,
                     NonConvergenceError, UnidentifiableError, UnreliableReconstructionError)
from .forward import OpticalCoefficients, SpnModel, phi_floor, sigma_chain, sigma_moments
from .inverse import (ReconResult, _error, misfit_matrix, reconstruct_sigma_a, safe_ratio,
                      solve_absorption_eliminated)
from .optimize import FreeNodeMap, LbfgsOptions, adjoint_gradient, lbfgs_minimize

__all__ = [
    "MultiSourceData", "JointResult", "crossing_quantity", "AbsorptionGruneisenObjective",
    "reconstruct_sigma_a_upsilon", "ScatteringRatioObjective",
    "reconstruct_sigma_s_sigma_a", "LinearizedBackground", "linearized_forward_map",
    "linearized_crossing_recon", "delta_upsilon",
]


@dataclass
class MultiSourceData:
    sources: list
    data: list

    def __post_init__(self):
        if len(self.sources) != len(self.data) or len(self.data) < 2:
            raise InvalidParameterError("need at least two sources with one datum each")
        self.data = [np.asarray(H, dtype=float) for H in self.data]
        self.sources = [np.asarray(f, dtype=float) for f in self.sources]

    def __len__(self):
        return len(self.data)

    def pairs(self):
        return list(combinations(range(len(self)), 2))


@dataclass
class JointResult:
    first: ReconResult
    second: ReconResult
    trace: list = field(default_factory=list, repr=False)


def crossing_quantity(i, j, dH, phi0, sigma_a, upsilon):
    """H_ij = phi0_i dH_j / (sigma_a Upsilon) - phi0_j dH_i / (sigma_a Upsilon)."""
    if i == j:
        raise DegeneratePairError("crossing quantity needs two distinct sources")
    w = np.asarray(sigma_a) * np.asarray(upsilon)
    if np.any(w <= 0):
        raise InvalidParameterError("sigma_a Upsilon must be positive")
    return (phi0[i] * dH[j] - phi0[j] * dH[i]) / w


def _check_identifiable(mesh, data):
    # every pair has (numerically) proportional data -> ratios carry no information
    M = fem.assemble_mass(mesh)
    for i, j in data.pairs():
        Hi, Hj = data.data[i], data.data[j]
        c = (Hi @ M @ Hj) / (Hj @ M @ Hj)
        r = Hi - c * Hj
        if r @ M @ r > 1e-20 * (Hi @ M @ Hi):
            return
    raise UnidentifiableError("all source pairs give proportional data")


class AbsorptionGruneisenObjective:
    """1/2 sum_{i<j} |H_i phi0_j - H_j phi0_i|_M^2 + alpha/2 |grad sigma_a|^2 over sigma_a."""

    def __init__(self, mesh, data, sigma_s, sigma_a_fixed, N, g=0.8, alpha=0.0, model=None):
        if alpha < 0:
            raise InvalidParameterError("regularization weight must be non-negative")
        self.mesh = mesh
        self.model = model or SpnModel(mesh, N, g)
        self.data = data
        self.sigma_s = np.asarray(sigma_s, dtype=float)
        self.M = fem.assemble_mass(mesh)
        self.K = fem.assemble_stiffness(mesh, 1.0)
        self.alpha = alpha
        self.loads = [self.model.load(f) for f in data.sources]
        self.map = FreeNodeMap(mesh.boundary_mask, sigma_a_fixed)
        self.chain = sigma_chain(self.model.g, self.model.N, True)[1]

    def solve(self, sigma_a):
        coeffs = OpticalCoefficients(sigma_a, self.sigma_s, np.ones_like(sigma_a), self.model.g)
        sig = sigma_moments(coeffs, self.model.N)
        fac = self.model.factorize(self.model.assemble(sig))
        xs = [fac.solve(b) for b in self.loads]
        return xs, sig, fac

    def __call__(self, z):
        sa = self.map.full(z)
        xs, sig, fac = self.solve(sa)
        phi = [self.model.phi0(x) for x in xs]
        H = self.data.data
        value = 0.0
        dphi = [np.zeros_like(p) for p in phi]
        for i, j in self.data.pairs():
            r = H[i] * phi[j] - H[j] * phi[i]
            Mr = self.M @ r
            value += 0.5 * r @ Mr
            dphi[j] += H[i] * Mr
            dphi[i] -= H[j] * Mr
        Ks = self.K @ sa
        value += 0.5 * self.alpha * sa @ Ks
        grad = self.alpha * Ks
        for x, d in zip(xs, dphi):
            dJ = np.concatenate([c * d for c in self.model.s1])
            grad = grad + adjoint_gradient(self.model, sig, fac, x, dJ, self.chain)[0]
        return value, self.map.restrict(grad)


def reconstruct_sigma_a_upsilon(mesh, data, sigma_s, sigma_a_fixed, N, g=0.8, alpha=1e-8,
                                truth_sigma_a=None, truth_upsilon=None, x0=None, opts=None):
    """Fit sigma_a to the Upsilon-free cross products.

    Upsilon then follows as mean_i H_i / (sigma_a phi0_i).
    """
    _check_identifiable(mesh, data)
    obj = AbsorptionGruneisenObjective(mesh, data, sigma_s, sigma_a_fixed, N, g, alpha)
    opts = opts or LbfgsOptions(lower=1e-3, upper=0.5)
    if x0 is None:
        x0 = np.full(np.count_nonzero(obj.map.free),
                     float(np.mean(np.asarray(sigma_a_fixed)[mesh.boundary_nodes])))
    else:
        x0 = obj.map.restrict(x0)
    res = lbfgs_minimize(obj, x0, opts)
    sa = obj.map.full(res.x)
    xs, _, _ = obj.solve(sa)
    ups = np.zeros(mesh.n_nodes)
    flags = np.zeros(mesh.n_nodes, dtype=bool)
    for H, x in zip(data.data, xs):
        u, fl = safe_ratio(mesh, H, sa * obj.model.phi0(x))
        ups += u / len(data)
        flags |= fl
    first = ReconResult(sa, _error(mesh, sa, truth_sigma_a), np.zeros(mesh.n_nodes, bool),
                        res.trace, message=res.message)
    second = ReconResult(ups, _error(mesh, ups, truth_upsilon), flags,
                         message="averaged ratio over sources")
    return JointResult(first, second, res.trace)


class ScatteringRatioObjective:
    """1/2 |H_1/H_2 - phi0_1/phi0_2|_W^2 + alpha/2 |grad sigma_s|^2 over sigma_s.

    Phi_i solves the system with the absorption term replaced by the known
    load (H_i / Upsilon) s_1, so the ratio depends on sigma_s only.
    """

    def __init__(self, mesh, data, upsilon, sigma_s_fixed, N, g=0.8, alpha=0.0,
                 norm="H1", model=None):
        if len(data) != 2:
            raise InvalidParameterError("the ratio objective uses exactly two data sets")
        if alpha < 0:
            raise InvalidParameterError("regularization weight must be non-negative")
        self.mesh = mesh
        self.model = model or SpnModel(mesh, N, g)
        self.data = data
        self.upsilon = np.asarray(upsilon, dtype=float)
        try:
            self.ratio, _ = safe_ratio(mesh, data.data[0], data.data[1])
        except UnreliableReconstructionError as exc:
            raise IllPosedError(f"data ratio is ill-defined: {exc}") from exc
        self.W = misfit_matrix(mesh, norm)
        self.K = fem.assemble_stiffness(mesh, 1.0)
        self.alpha = alpha
        self.map = FreeNodeMap(mesh.boundary_mask, sigma_s_fixed)
        self.chain = sigma_chain(self.model.g, self.model.N, True)[0]

    def solve(self, sigma_s):
        xs, sig, fac = [], None, None
        for H, f in zip(self.data.data, self.data.sources):
            x, sig, fac = solve_absorption_eliminated(self.model, H, self.upsilon, sigma_s, f,
                                                      factorization=fac, sig=sig)
            xs.append(x)
        return xs, sig, fac

    def __call__(self, z):
        s = self.map.full(z)
        xs, sig, fac = self.solve(s)
        p1, p2 = (self.model.phi0(x) for x in xs)
        p2 = np.where(np.abs(p2) < phi_floor(p2), phi_floor(p2), p2)
        r = self.ratio - p1 / p2
        Wr = self.W @ r
        Ks = self.K @ s
        value = 0.5 * r @ Wr + 0.5 * self.alpha * s @ Ks
        grad = self.alpha * Ks
        for x, d in zip(xs, (-Wr / p2, Wr * p1 / p2 ** 2)):
            dJ = np.concatenate([c * d for c in self.model.s1])
            grad = grad + adjoint_gradient(self.model, sig, fac, x, dJ, self.chain,
                                           drop_absorption=True)[0]
        return value, self.map.restrict(grad)


def reconstruct_sigma_s_sigma_a(mesh, data, upsilon, sigma_s_fixed, N, g=0.8, alpha=1e-8,
                                norm="H1", source_index=0, truth_sigma_s=None,
                                truth_sigma_a=None, x0=None, opts=None):
    """Fit sigma_s to the data ratio, then recover sigma_a from one source with that sigma_s."""
    _check_identifiable(mesh, data)
    obj = ScatteringRatioObjective(mesh, data, upsilon, sigma_s_fixed, N, g, alpha, norm)
    opts = opts or LbfgsOptions(lower=0.5, upper=50.0)
    if x0 is None:
        x0 = np.full(np.count_nonzero(obj.map.free),
                     float(np.mean(np.asarray(sigma_s_fixed)[mesh.boundary_nodes])))
    else:
        x0 = obj.map.restrict(x0)
    res = lbfgs_minimize(obj, x0, opts)
    s = obj.map.full(res.x)
    first = ReconResult(s, _error(mesh, s, truth_sigma_s), np.zeros(mesh.n_nodes, bool),
                        res.trace, message=res.message)
    second = reconstruct_sigma_a(mesh, data.data[source_index], upsilon, s,
                                 data.sources[source_index], N, g, truth=truth_sigma_a,
                                 model=obj.model)
    return JointResult(first, second, res.trace)


class LinearizedBackground:
    """Background forward solutions and the factorized operator for the linearized problem."""

    def __init__(self, mesh, coeffs, sources, N, model=None):
        self.mesh = mesh
        self.model = model or SpnModel(mesh, N, coeffs.g)
        self.coeffs = coeffs
        sig = sigma_moments(coeffs, self.model.N)
        self.fac = self.model.factorize(self.model.assemble(sig))
        self.xs = [self.fac.solve(self.model.load(f)) for f in sources]
        self.phi0 = [self.model.phi0(x) for x in self.xs]
        self.lumped = self.model.lumped

    def lift(self, v):
        return np.concatenate([c * v for c in self.model.s1])


def linearized_forward_map(delta_sigma_a, background):
    """delta Phi_j solving A dPhi_j = -(d A / d sigma_a)[delta] Phi_j for every source j."""
    bg = background
    d = np.asarray(delta_sigma_a, dtype=float)
    return [bg.fac.solve(-bg.lift(bg.lumped * p * d)) for p in bg.phi0]


def _crossing_model(delta, bg, pairs):
    dx = linearized_forward_map(delta, bg)
    dphi = [bg.model.phi0(x) for x in dx]
    return [bg.phi0[i] * dphi[j] - bg.phi0[j] * dphi[i] for i, j in pairs]


def _crossing_adjoint(ws, bg, pairs):
    out = np.zeros(bg.mesh.n_nodes)
    s1 = bg.model.s1
    for (i, j), w in zip(pairs, ws):
        for a, b, sign in ((i, j, 1.0), (j, i, -1.0)):
            # term sign * phi0_a * (s_1 . dPhi_b), dPhi_b = -A^{-1} lift(m phi0_b delta)
            y = bg.fac.solve(bg.lift(bg.phi0[a] * w))
            out -= sign * bg.lumped * bg.phi0[b] * (s1 @ bg.model.split(y))
    return out


def linearized_crossing_recon(crossing, background, alpha=1e-8, pairs=None, tol=1e-10,
                              maxiter=None):
    """Regularized least squares for delta sigma_a from crossing quantities.

    Solves (G^T M G + alpha K) delta = G^T M crossing by conjugate gradients
    with delta = 0 on the boundary.
    """
    if alpha <= 0:
        raise IllPosedError(
            "the crossing map is compact; a positive regularization weight is required")
    bg = background
    mesh = bg.mesh
    pairs = pairs or list(combinations(range(len(bg.xs)), 2))
    if len(crossing) != len(pairs):
        raise InvalidParameterError("one crossing quantity per source pair is required")
    M = fem.assemble_mass(mesh)
    K = fem.assemble_stiffness(mesh, 1.0)
    free = ~mesh.boundary_mask
    nf = int(np.count_nonzero(free))

    def embed(z):
        d = np.zeros(mesh.n_nodes)
        d[free] = z
        return d

    def normal(z):
        d = embed(z)
        hs = _crossing_model(d, bg, pairs)
        return (_crossing_adjoint([M @ h for h in hs], bg, pairs) + alpha * (K @ d))[free]

    rhs = _crossing_adjoint([M @ np.asarray(c) for c in crossing], bg, pairs)[free]
    if not np.any(rhs):
        return np.zeros(mesh.n_nodes)
    op = spla.LinearOperator((nf, nf), matvec=normal, dtype=float)
    z, info = spla.cg(op, rhs, rtol=tol, atol=0.0, maxiter=maxiter or 10 * nf)
    if info != 0:
        res = np.linalg.norm(normal(z) - rhs) / np.linalg.norm(rhs)
        raise NonConvergenceError(f"normal-equation CG stopped with residual {res:.2e}", res)
    return embed(z)


def delta_upsilon(dH, delta_sigma_a, dPhi, background):
    """dU = mean_j (dH_j - U sigma_a s_1.dPhi_j - U dsigma_a phi0_j) / (sigma_a phi0_j)."""
    bg = background
    c = bg.coeffs
    out = np.zeros(bg.mesh.n_nodes)
    for H, dx, p in zip(dH, dPhi, bg.phi0):
        dphi = bg.model.phi0(dx)
        out += (H - c.upsilon * c.sigma_a * dphi - c.upsilon * delta_sigma_a * p) / (c.sigma_a * p)
    return out / len(dH)
