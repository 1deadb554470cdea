"""Finite-element SP_N forward model and the internal datum H = Upsilon sigma_a phi_0.

Unknowns are the combined moments Phi = (varphi_1, ..., varphi_{(N+1)/2})
stored block by block: ``x.reshape(n_half, n_nodes)[n - 1]`` is varphi_n.

The discrete bilinear form is

    sum_n  K[1/((4n-1) sigma_{2n-1})]           (diagonal blocks)
  + sum_k  (4k-3) s_k^T s_k  (x)  D[sigma_{2k-2}]  (volume coupling)
  + R M^-1  (x)  B                                  (boundary coupling)

where ``K`` is the P1 stiffness matrix, ``D`` the nodal-quadrature (lumped)
mass with the coefficient and ``B`` the boundary mass.  The volume sum is
exactly M^-T L^-1 Sigma_e M^-1 written as a sum of rank-one pieces.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as fem
from .errors import DegenerateCoefficientError, InvalidParameterError, SolverError
from .spn_matrices import SpnMatrices, build_matrices

__all__ = [
    "OpticalCoefficients", "SpnSolution", "Datum", "SpnModel", "Factorization",
    "sigma_moments", "assemble_forward", "apply_load", "solve_forward",
    "compute_datum", "phi_floor", "save_field_csv",
]


@dataclass
class OpticalCoefficients:
    """Nodal absorption, scattering and Grueneisen fields plus the anisotropy."""

    sigma_a: np.ndarray
    sigma_s: np.ndarray
    upsilon: np.ndarray
    g: float = 0.8

    def __post_init__(self):
        self.sigma_a = np.asarray(self.sigma_a, dtype=float)
        self.sigma_s = np.asarray(self.sigma_s, dtype=float)
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        for name in ("sigma_a", "sigma_s", "upsilon"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                raise InvalidParameterError(f"{name} must be finite")
            if np.any(v < 0):
                raise InvalidParameterError(f"{name} must be non-negative")
        if not (-1.0 < self.g < 1.0):
            raise InvalidParameterError(f"anisotropy g must lie in (-1, 1), got {self.g}")

    def replace(self, **kw):
        d = dict(sigma_a=self.sigma_a, sigma_s=self.sigma_s, upsilon=self.upsilon, g=self.g)
        d.update(kw)
        return OpticalCoefficients(**d)


@dataclass
class SpnSolution:
    Phi: np.ndarray          # (n_half, n_nodes)
    phi0: np.ndarray
    N: int
    s1: np.ndarray = field(repr=False)

    @property
    def moments(self):
        """Even Legendre moments phi_0, phi_2, ..., phi_{N-1} (rows of M^-1 Phi)."""
        from .spn_matrices import build_S_closed_form
        return build_S_closed_form(self.N) @ self.Phi


@dataclass
class Datum:
    H: np.ndarray
    source_id: str = ""
    model: str = ""
    noise: str = "none"


def sigma_moments(coeffs, N, simplified=True):
    """Stack of sigma_0 .. sigma_N, shape (N + 1, n_nodes).

    sigma_0 = sigma_a; for n >= 1, sigma_n = sigma_a + (1 - g^n) sigma_s, or
    (1 - g^n) sigma_s when ``simplified``.
    """
    g = coeffs.g
    out = np.empty((N + 1, coeffs.sigma_a.size))
    out[0] = coeffs.sigma_a
    for n in range(1, N + 1):
        out[n] = (1.0 - g ** n) * coeffs.sigma_s
        if not simplified:
            out[n] += coeffs.sigma_a
    return out


def sigma_chain(g, N, simplified=True):
    """d sigma_n / d sigma_s and d sigma_n / d sigma_a for n = 0..N."""
    n = np.arange(N + 1)
    ds = np.where(n == 0, 0.0, 1.0 - float(g) ** n)
    da = np.where(n == 0, 1.0, 0.0 if simplified else 1.0)
    return ds, da


class Factorization:
    """Sparse LU of a symmetric system with a residual check on every solve."""

    def __init__(self, A, tol=1e-10):
        self.A = sp.csc_matrix(A)
        self.tol = tol
        self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A",
                             options=dict(SymmetricMode=True))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        res = np.linalg.norm(b - self.A @ x) / bnorm
        if res > self.tol:
            # one step of iterative refinement before giving up
            x += self._lu.solve(b - self.A @ x)
            res = np.linalg.norm(b - self.A @ x) / bnorm
        if not np.isfinite(res) or res > self.tol:
            raise SolverError(f"relative residual {res:.3e} above {self.tol:.1e}", res)
        return x


class SpnModel:
    """SP_N discretization on one mesh for one (N, g)."""

    def __init__(self, mesh, N, g=0.8, tol=1e-10):
        self.mesh = mesh
        self.mats = N if isinstance(N, SpnMatrices) else build_matrices(N, g)
        self.N = self.mats.N
        self.g = self.mats.g
        self.n_half = self.mats.n_half
        self.tol = tol
        self.weights = self.mats.volume_weights()
        self.lumped = fem.lumped_mass(mesh)
        self.bmass = fem.assemble_boundary_mass(mesh, 1.0)
        self._boundary_block = sp.kron(sp.csr_matrix(self.mats.RMinv), self.bmass, format="csr")

    @property
    def s1(self):
        return self.mats.s1

    @property
    def size(self):
        return self.n_half * self.mesh.n_nodes

    def check_stiffness(self, sig):
        for n in range(1, self.n_half + 1):
            s = sig[2 * n - 1]
            if np.any(s[self.mesh.triangles].mean(axis=1) <= 0.0) or np.any(s <= 0.0):
                raise DegenerateCoefficientError(
                    f"sigma_{2 * n - 1} vanishes on part of the mesh")

    def assemble(self, sig, drop_absorption=False):
        """Block matrix for the moment stack ``sig`` (output of ``sigma_moments``).

        ``drop_absorption`` removes the sigma_0 volume piece, leaving the
        modified form used when sigma_a is eliminated through the datum.
        """
        self.check_stiffness(sig)
        nb = self.n_half
        blocks = [[None] * nb for _ in range(nb)]
        for n in range(1, nb + 1):
            blocks[n - 1][n - 1] = fem.assemble_stiffness(
                self.mesh, 1.0 / ((4 * n - 1) * sig[2 * n - 1]))
        A = sp.bmat(blocks, format="csr")
        k0 = 2 if drop_absorption else 1
        for k in range(k0, nb + 1):
            diag = sp.diags(self.lumped * sig[2 * k - 2])
            A = A + sp.kron(sp.csr_matrix(self.weights[k - 1]), diag, format="csr")
        A = A + self._boundary_block
        return (0.5 * (A + A.T)).tocsr()

    def load(self, f):
        """Right-hand side of the boundary load: block n = k_{2n-1} B f."""
        bf = self.bmass @ np.asarray(f, dtype=float)
        return np.concatenate([k * bf for k in self.mats.kvec])

    def absorption_load(self, h_over_upsilon):
        """Vector of int (H/Upsilon)(s_1 . Psi) with nodal quadrature."""
        v = self.lumped * h_over_upsilon
        return np.concatenate([s * v for s in self.s1])

    def factorize(self, A):
        return Factorization(A, self.tol)

    def split(self, x):
        return np.asarray(x).reshape(self.n_half, self.mesh.n_nodes)

    def phi0(self, x):
        return self.s1 @ self.split(x)

    def solution(self, x):
        Phi = self.split(x).copy()
        return SpnSolution(Phi=Phi, phi0=self.s1 @ Phi, N=self.N, s1=self.s1)

    def moment_sensitivity(self, sig, lam, x, drop_absorption=False):
        """d(lam^T A x) / d sigma_j(node), shape (N + 1, n_nodes)."""
        L = self.split(lam)
        X = self.split(x)
        out = np.zeros((self.N + 1, self.mesh.n_nodes))
        for n in range(1, self.n_half + 1):
            j = 2 * n - 1
            dk = fem.stiffness_coefficient_gradient(self.mesh, X[n - 1], L[n - 1])
            out[j] = -dk / ((4 * n - 1) * sig[j] ** 2)
        S = self.mats.S
        k0 = 2 if drop_absorption else 1
        for k in range(k0, self.n_half + 1):
            out[2 * k - 2] = ((4 * k - 3) * self.lumped
                              * (S[k - 1] @ L) * (S[k - 1] @ X))
        return out

    def forward(self, coeffs, f, simplified=True):
        sig = sigma_moments(coeffs, self.N, simplified)
        A = self.assemble(sig)
        x = self.factorize(A).solve(self.load(f))
        return self.solution(x)


def assemble_forward(mesh, matrices, coeffs, simplified=True):
    """Symmetric block matrix of the SP_N weak form on ``mesh``."""
    model = SpnModel(mesh, matrices)
    return model.assemble(sigma_moments(coeffs, model.N, simplified))


def apply_load(mesh, matrices, f):
    return SpnModel(mesh, matrices).load(f)


def solve_forward(mesh, matrices, coeffs, f, simplified=True, tol=1e-10):
    """Solve the SP_N boundary-value problem; returns Phi and phi_0 = s_1 . Phi."""
    return SpnModel(mesh, matrices, tol=tol).forward(coeffs, f, simplified)


def compute_datum(solution, coeffs, source_id="", model=None):
    """Internal datum H = Upsilon sigma_a phi_0, nodewise."""
    H = coeffs.upsilon * coeffs.sigma_a * solution.phi0
    return Datum(H=H, source_id=source_id,
                 model=model if model is not None else f"SP{solution.N}")


def phi_floor(phi0):
    """Division floor 1e-10 max|phi_0| used wherever phi_0 appears in a denominator."""
    return 1e-10 * float(np.max(np.abs(phi0)))


def save_field_csv(path, mesh, values, header="value"):
    data = np.column_stack([mesh.nodes, values])
    np.savetxt(path, data, delimiter=",", header=f"x,y,{header}", comments="",
               fmt="%.17g")
