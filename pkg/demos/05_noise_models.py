"""The two noise models applied to an internal datum.

Pointwise noise multiplies each nodal value; Fourier noise perturbs the
modes of H sampled on a uniform grid, which spreads the sharp absorption
edges into a smooth but domain-wide perturbation.
"""

import numpy as np

from qpat import OpticalCoefficients, SpnModel, generate_uniform_mesh
from qpat.mesh import assemble_stiffness, l2_norm
from qpat.phantoms import NoiseSpec, add_noise, boundary_source, default_phantoms, generate_phantom

mesh = generate_uniform_mesh(32)
ph = default_phantoms()
c = OpticalCoefficients(*(generate_phantom(ph[k], mesh)
                          for k in ("sigma_a", "sigma_s", "upsilon")), 0.8)
H = c.upsilon * c.sigma_a * SpnModel(mesh, 3).forward(c, boundary_source("f1", mesh)).phi0
K = assemble_stiffness(mesh, 1.0)


def h1_semi(v):
    return np.sqrt(v @ (K @ v))


for spec in (NoiseSpec("pointwise", 0.02, seed=0), NoiseSpec("fourier", 0.02, seed=0)):
    e = add_noise(H, spec, mesh) - H
    print(f"{spec.kind:>9}: relative L2 {l2_norm(mesh, e) / l2_norm(mesh, H):.3%}, "
          f"relative H1 seminorm {h1_semi(e) / h1_semi(H):.3%}")
