"""Uniform triangulation of the unit square and P1 finite elements on it.

Nodes are numbered row by row, ``node = j * (n + 1) + i`` for the point
``(i / n, j / n)``.  Each grid square is cut along its (0,0)-(1,1)
diagonal into two counterclockwise triangles.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidCoefficientError, InvalidParameterError, SolverError

__all__ = [
    "Mesh", "NodalField", "generate_uniform_mesh", "assemble_stiffness",
    "assemble_mass", "assemble_boundary_mass", "lumped_mass", "solve_spd",
    "stiffness_coefficient_gradient", "nodal_gradient", "l2_norm",
    "relative_l2_error", "save_mesh", "load_mesh", "interpolate_field",
]

_SIDES = ("bottom", "right", "top", "left")


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_sides: np.ndarray
    n: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def boundary_nodes(self):
        if "bnodes" not in self._cache:
            self._cache["bnodes"] = np.unique(self.boundary_edges)
        return self._cache["bnodes"]

    @property
    def boundary_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @property
    def interior_nodes(self):
        return np.flatnonzero(~self.boundary_mask)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def _geometry(self):
        if "geom" not in self._cache:
            p = self.nodes[self.triangles]
            area = self.signed_areas()
            # gradients of the barycentric coordinates, one (3, 2) block per triangle
            x, y = p[..., 0], p[..., 1]
            bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
            by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
            grads = np.stack([bx, by], axis=2) / (2.0 * area)[:, None, None]
            local_k = area[:, None, None] * np.einsum("tad,tbd->tab", grads, grads)
            rows = np.repeat(self.triangles, 3, axis=1).ravel()
            cols = np.tile(self.triangles, (1, 3)).ravel()
            self._cache["geom"] = (area, grads, local_k, rows, cols)
        return self._cache["geom"]

    def edge_lengths(self):
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def evaluate(self, values, points):
        """Evaluate the P1 interpolant of nodal ``values`` at ``points`` (k, 2)."""
        return interpolate_field(self, values, points)


@dataclass(eq=False)
class NodalField:
    """One scalar per mesh node."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise InvalidParameterError(
                f"field has {self.values.shape} values for {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("field values must be finite")


def generate_uniform_mesh(n):
    """Structured mesh with ``n`` subdivisions per side."""
    if int(n) != n or n < 1:
        raise InvalidParameterError(f"subdivision count must be >= 1, got {n}")
    n = int(n)
    t = np.arange(n + 1) / n
    X, Y = np.meshgrid(t, t)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    a = (j * (n + 1) + i).ravel()
    b, c, d = a + 1, a + n + 2, a + n + 1
    triangles = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    k = np.arange(n)
    edges = [
        np.column_stack([k, k + 1]),                                    # bottom
        np.column_stack([k * (n + 1) + n, (k + 1) * (n + 1) + n]),      # right
        np.column_stack([n * (n + 1) + k + 1, n * (n + 1) + k]),        # top
        np.column_stack([(k + 1) * (n + 1), k * (n + 1)]),              # left
    ]
    sides = np.repeat(np.arange(4), n)
    return Mesh(nodes=nodes, triangles=triangles, boundary_edges=np.concatenate(edges),
                edge_sides=sides, n=n)


def _values(coeff, mesh):
    if isinstance(coeff, NodalField):
        return coeff.values
    arr = np.asarray(coeff, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_nodes, float(arr))
    return arr


def assemble_stiffness(mesh, coeff):
    """P1 stiffness matrix of int c grad u . grad v, c averaged per triangle."""
    c = _values(coeff, mesh)
    if np.any(c <= 0.0):
        raise InvalidCoefficientError("stiffness coefficient must be strictly positive")
    _, _, local_k, rows, cols = mesh._geometry()
    ct = c[mesh.triangles].mean(axis=1)
    data = (ct[:, None, None] * local_k).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(mesh.n_nodes,) * 2)


def stiffness_coefficient_gradient(mesh, u, w):
    """d/dc_a of w^T K[c] u for every node a (K linear in the nodal c)."""
    _, _, local_k, _, _ = mesh._geometry()
    ut = u[mesh.triangles]
    wt = w[mesh.triangles]
    per_tri = np.einsum("ta,tab,tb->t", wt, local_k, ut) / 3.0
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(per_tri, 3),
                       minlength=mesh.n_nodes)


def _mass_tensor_weights():
    # int over a triangle of lambda_a lambda_b lambda_c, divided by the area
    w = np.empty((3, 3, 3))
    for idx in np.ndindex(3, 3, 3):
        w[idx] = {1: 1.0 / 10.0, 2: 1.0 / 30.0, 3: 1.0 / 60.0}[len(set(idx))]
    return w


_MASS3 = _mass_tensor_weights()


def assemble_mass(mesh, coeff=1.0, lumped=False):
    """P1 mass matrix of int c u v with c the P1 interpolant of nodal values.

    With ``lumped=True`` the nodal (vertex) quadrature is used instead, which
    gives the diagonal matrix ``diag(m * c)`` with ``m`` the lumped masses.
    """
    c = _values(coeff, mesh)
    if lumped:
        return sp.diags(lumped_mass(mesh) * c).tocsr()
    area, _, _, rows, cols = mesh._geometry()
    ct = c[mesh.triangles]
    local = area[:, None, None] * np.einsum("tc,abc->tab", ct, _MASS3)
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)


def lumped_mass(mesh):
    """Nodal quadrature weights (row sums of the unit mass matrix)."""
    if "lumped" not in mesh._cache:
        area = mesh._geometry()[0]
        mesh._cache["lumped"] = np.bincount(mesh.triangles.ravel(),
                                            weights=np.repeat(area / 3.0, 3),
                                            minlength=mesh.n_nodes)
    return mesh._cache["lumped"]


def assemble_boundary_mass(mesh, coeff=1.0):
    """P1 edge mass of int_{boundary} c u v ds with c linear along each edge."""
    c = _values(coeff, mesh)
    e = mesh.boundary_edges
    h = mesh.edge_lengths()
    ca, cb = c[e[:, 0]], c[e[:, 1]]
    aa = h * (3 * ca + cb) / 12.0
    bb = h * (ca + 3 * cb) / 12.0
    ab = h * (ca + cb) / 12.0
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    data = np.concatenate([aa, bb, ab, ab])
    return sp.csr_matrix((data, (rows, cols)), shape=(mesh.n_nodes,) * 2)


def solve_spd(A, b, tol=1e-10, method="cg", maxiter=None, x0=None):
    """Solve the symmetric positive definite system ``A x = b``.

    ``method="cg"`` runs Jacobi-preconditioned conjugate gradients capped at
    ten times the unknown count; ``method="direct"`` uses a sparse LU
    factorization.  Either way the relative residual is checked against
    ``tol`` and ``SolverError`` is raised when it is not met.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
    elif method == "cg":
        n = A.shape[0]
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("matrix has a nonpositive diagonal entry")
        x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
        r = b - A @ x
        z = r / d
        p = z.copy()
        rz = r @ z
        cap = 10 * n if maxiter is None else maxiter
        for _ in range(cap):
            if np.linalg.norm(r) <= tol * bnorm:
                break
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            z = r / d
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
    else:
        raise InvalidParameterError(f"unknown solver method {method!r}")
    res = np.linalg.norm(b - A @ x) / bnorm
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"relative residual {res:.3e} above tolerance {tol:.1e}", res)
    return x


def nodal_gradient(mesh, values):
    """Area-weighted average of the piecewise-constant P1 gradient at each node."""
    area, grads, _, _, _ = mesh._geometry()
    g_tri = np.einsum("ta,tad->td", values[mesh.triangles], grads)
    out = np.zeros((mesh.n_nodes, 2))
    wsum = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area, 3),
                       minlength=mesh.n_nodes)
    for d in range(2):
        out[:, d] = np.bincount(mesh.triangles.ravel(),
                                weights=np.repeat(area * g_tri[:, d], 3),
                                minlength=mesh.n_nodes) / wsum
    return out


def _unit_mass(mesh):
    if "mass1" not in mesh._cache:
        mesh._cache["mass1"] = assemble_mass(mesh, 1.0)
    return mesh._cache["mass1"]


def l2_norm(mesh, values):
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(max(v @ (_unit_mass(mesh) @ v), 0.0)))


def relative_l2_error(mesh, approx, truth):
    """||approx - truth|| / ||truth|| in the P1 mass-matrix norm."""
    return l2_norm(mesh, np.asarray(approx) - np.asarray(truth)) / l2_norm(mesh, truth)


def interpolate_field(mesh, values, points):
    """Evaluate the P1 field of a uniform mesh at arbitrary points in the unit square."""
    n = mesh.n
    if n <= 0:
        raise InvalidParameterError("point location needs a structured mesh")
    pts = np.clip(np.asarray(points, dtype=float), 0.0, 1.0)
    sx = pts[:, 0] * n
    sy = pts[:, 1] * n
    i = np.minimum(np.floor(sx).astype(int), n - 1)
    j = np.minimum(np.floor(sy).astype(int), n - 1)
    xi = sx - i
    eta = sy - j
    a = j * (n + 1) + i
    va, vb, vc, vd = values[a], values[a + 1], values[a + n + 2], values[a + n + 1]
    lower = xi >= eta
    return np.where(lower,
                    va + xi * (vb - va) + eta * (vc - vb),
                    va + xi * (vc - vd) + eta * (vd - va))


def save_mesh(mesh, path):
    """Plain-text dump: header, coordinates, triangles, boundary edges with side tag."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
        for (p, q), s in zip(mesh.boundary_edges, mesh.edge_sides):
            fh.write(f"{p} {q} {_SIDES[s]}\n")


def load_mesh(path):
    with open(path) as fh:
        nn, nt, nb = (int(v) for v in fh.readline().split())
        nodes = np.array([[float(v) for v in fh.readline().split()] for _ in range(nn)])
        tris = np.array([[int(v) for v in fh.readline().split()] for _ in range(nt)])
        edges, sides = [], []
        for _ in range(nb):
            p, q, s = fh.readline().split()
            edges.append((int(p), int(q)))
            sides.append(_SIDES.index(s))
    n = int(round(np.sqrt(nn))) - 1
    structured = (n + 1) ** 2 == nn and nt == 2 * n * n
    return Mesh(nodes=nodes, triangles=tris, boundary_edges=np.array(edges),
                edge_sides=np.array(sides), n=n if structured else 0)
