"""Coefficient phantoms, boundary sources and data noise models.

All phantoms are defined in the continuum and sampled at mesh nodes, so two
meshes that share a node produce the same value there.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import erfc

from . import mesh as fem
from .errors import InvalidParameterError

__all__ = [
    "PhantomSpec", "NoiseSpec", "generate_phantom", "evaluate_phantom",
    "boundary_source", "add_pointwise_noise", "add_fourier_noise", "add_noise",
    "default_phantoms", "SHEPP_LOGAN_ELLIPSES", "DEFAULT_DISKS",
]

# modified Shepp-Logan: (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

# six disks of decreasing radius on a ring around the centre: (x0, y0, r)
DEFAULT_DISKS = tuple(
    (0.5 + 0.22 * np.cos(t), 0.5 + 0.22 * np.sin(t), r)
    for t, r in zip(np.pi / 2 + 2 * np.pi * np.arange(6) / 6,
                    (0.10, 0.085, 0.07, 0.06, 0.05, 0.04))
)

# smooth Grueneisen bumps: (x0, y0, width, amplitude in [0, 1])
DEFAULT_BLOBS = ((0.35, 0.62, 0.13, 1.0), (0.66, 0.36, 0.10, 0.75), (0.62, 0.70, 0.07, 0.5))

_KINDS = ("shepp_logan", "disks", "smooth_blobs", "constant")


@dataclass(frozen=True)
class PhantomSpec:
    """Description of a piecewise-smooth coefficient field on the unit square.

    Parameters
    ----------
    kind : {"shepp_logan", "disks", "smooth_blobs", "constant"}
    lo, hi : float
        Background and peak values; the field stays inside ``[lo, hi]``.
    edge_width : float
        Scale of the error-function blend across inclusion edges.
    ring_width : float
        Distance from the boundary inside which the field equals ``lo``.
    geometry : tuple
        Ellipse, disk or blob list; empty selects the default set.
    """

    kind: str = "constant"
    lo: float = 1.0
    hi: float = 1.0
    edge_width: float = 2.0 / 64
    ring_width: float = 2.0 / 64
    box: tuple = (0.2, 0.8)
    geometry: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameterError(f"unknown phantom kind {self.kind!r}")
        if self.lo < 0 or self.hi < self.lo:
            raise InvalidParameterError("phantom range must satisfy 0 <= lo <= hi")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "pointwise"
    gamma: float = 0.0
    seed: int = 0
    grid_n: int = 128

    def __post_init__(self):
        if self.kind not in ("pointwise", "fourier", "none"):
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}")
        if self.gamma < 0:
            raise InvalidParameterError("noise level must be non-negative")
        if self.kind == "fourier" and (self.grid_n < 2 or self.grid_n & (self.grid_n - 1)):
            raise InvalidParameterError("Fourier grid size must be a power of two")

    def describe(self):
        if self.kind == "none" or self.gamma == 0:
            return "none"
        return f"{self.kind}:gamma={self.gamma:g}:seed={self.seed}"


def _ramp(d, width):
    # 1 well inside (d < 0), 0 well outside, smooth error-function edge;
    # a smooth edge keeps P1 transfer between non-nested meshes second order
    if width <= 0:
        return (d <= 0).astype(float)
    return 0.5 * erfc(2.0 * d / width)


def _shepp_logan(x, y, spec):
    a0, a1 = spec.box
    half = 0.5 * (a1 - a0)
    # map the box onto [-1, 1]^2 with y pointing up
    u = (x - 0.5 * (a0 + a1)) / half
    v = (y - 0.5 * (a0 + a1)) / half
    ellipses = spec.geometry or SHEPP_LOGAN_ELLIPSES
    img = np.zeros_like(x)
    for amp, a, b, x0, y0, ang in ellipses:
        t = np.deg2rad(ang)
        xr = (u - x0) * np.cos(t) + (v - y0) * np.sin(t)
        yr = -(u - x0) * np.sin(t) + (v - y0) * np.cos(t)
        rho = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        # radial distance to the edge, back in unit-square length
        d = (rho - 1.0) * min(a, b) * half
        img += amp * _ramp(d, spec.edge_width)
    return np.clip(img, 0.0, 1.0)


def _disks(x, y, spec):
    disks = spec.geometry or DEFAULT_DISKS
    img = np.zeros_like(x)
    for x0, y0, r in disks:
        d = np.hypot(x - x0, y - y0) - r
        img = np.maximum(img, _ramp(d, spec.edge_width))
    return img


def _blobs(x, y, spec):
    blobs = spec.geometry or DEFAULT_BLOBS
    img = np.zeros_like(x)
    for x0, y0, w, amp in blobs:
        img += amp * np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2 * w * w))
    # taper to zero near the boundary ring so the known boundary value is lo
    dist = np.minimum.reduce([x, 1 - x, y, 1 - y])
    r = spec.ring_width
    s = np.clip((dist - r) / (2 * r), 0.0, 1.0) if r > 0 else np.ones_like(x)
    taper = s * s * (3 - 2 * s)
    return np.clip(img * taper, 0.0, 1.0)


def evaluate_phantom(spec, points):
    """Evaluate the continuum phantom at an array of points (m, 2)."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    if spec.kind == "constant":
        return np.full(len(pts), float(spec.lo))
    shape = {"shepp_logan": _shepp_logan, "disks": _disks, "smooth_blobs": _blobs}[spec.kind]
    img = shape(x, y, spec)
    val = spec.lo + (spec.hi - spec.lo) * img
    dist = np.minimum.reduce([x, 1 - x, y, 1 - y])
    val[dist <= spec.ring_width + 1e-12] = spec.lo
    return val


def generate_phantom(spec, mesh):
    """Nodal samples of a phantom on ``mesh``."""
    return evaluate_phantom(spec, mesh.nodes)


def default_phantoms():
    """Absorption, scattering and Grueneisen specs used by the experiments."""
    return {
        "sigma_a": PhantomSpec("shepp_logan", 0.01, 0.05),
        "sigma_s": PhantomSpec("disks", 5.0, 10.0),
        "upsilon": PhantomSpec("smooth_blobs", 0.8, 1.2),
    }


def boundary_source(name, mesh):
    """Boundary illumination f1 = 1 + x or f2 = 1 + sin(4 pi x) as a nodal field.

    Values are filled on every node; only boundary values enter the load.
    """
    x = mesh.nodes[:, 0]
    if name == "f1":
        return 1.0 + x
    if name == "f2":
        return 1.0 + np.sin(4.0 * np.pi * x)
    raise InvalidParameterError(f"unknown boundary source {name!r}")


def add_pointwise_noise(H, spec):
    """Multiplicative noise H (1 + gamma u), u uniform on [-1, 1] per node."""
    H = np.asarray(H, dtype=float)
    if spec.gamma == 0 or spec.kind == "none":
        return H.copy()
    rng = np.random.default_rng(spec.seed)
    return H * (1.0 + spec.gamma * rng.uniform(-1.0, 1.0, size=H.shape))


def _symmetric_uniform(rng, n):
    # uniform field with u(k) = u(-k) so the perturbed spectrum stays Hermitian
    u = rng.uniform(-1.0, 1.0, size=(n, n))
    idx = np.arange(n)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    pi, pj = (-ii) % n, (-jj) % n
    canonical = (ii * n + jj) <= (pi * n + pj)
    return np.where(canonical, u, u[pi, pj])


def add_fourier_noise(H, spec, mesh, return_grid=False):
    """Multiply every Fourier mode of H by (1 + gamma u) on a uniform grid.

    H is sampled on a ``grid_n`` x ``grid_n`` grid covering the closed unit
    square and perturbed in frequency space.  Only the perturbation is
    interpolated back and added to H, so gamma = 0 returns H exactly and the
    grid round trip adds no interpolation error of its own.
    """
    H = np.asarray(H, dtype=float)
    n = spec.grid_n
    t = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    grid = fem.interpolate_field(mesh, H, np.column_stack([X.ravel(), Y.ravel()])).reshape(n, n)
    if spec.gamma == 0 or spec.kind == "none":
        noisy = grid.copy()
    else:
        rng = np.random.default_rng(spec.seed)
        u = _symmetric_uniform(rng, n)
        spectrum = np.fft.fft2(grid) * (1.0 + spec.gamma * u)
        out = np.fft.ifft2(spectrum)
        imag = np.max(np.abs(out.imag))
        if imag > 1e-12 * max(1.0, np.max(np.abs(grid))):
            raise AssertionError(f"perturbed field not real: imaginary part {imag:.2e}")
        noisy = out.real
    delta = RegularGridInterpolator((t, t), noisy - grid)(np.clip(mesh.nodes, 0.0, 1.0))
    back = H + delta
    if return_grid:
        return back, grid, noisy
    return back


def add_noise(H, spec, mesh):
    if spec.kind == "fourier":
        return add_fourier_noise(H, spec, mesh)
    return add_pointwise_noise(H, spec)
