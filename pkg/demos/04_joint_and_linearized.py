"""Two-coefficient recovery from two illuminations.

The joint fit of absorption and Grueneisen uses the product-form misfit
over both sources.  The linearized problem shows how the crossing
quantity between two sources determines a small absorption change.
"""

import numpy as np

from qpat import OpticalCoefficients, SpnModel, generate_uniform_mesh, relative_l2_error
from qpat.joint import (LinearizedBackground, MultiSourceData, crossing_quantity,
                        linearized_crossing_recon, linearized_forward_map,
                        reconstruct_sigma_a_upsilon)
from qpat.optimize import LbfgsOptions
from qpat.phantoms import boundary_source, default_phantoms, generate_phantom

N = 3
mesh = generate_uniform_mesh(24)
ph = default_phantoms()
c = OpticalCoefficients(*(generate_phantom(ph[k], mesh)
                          for k in ("sigma_a", "sigma_s", "upsilon")), 0.8)
sources = [boundary_source(s, mesh) for s in ("f1", "f2")]
model = SpnModel(mesh, N)
data = MultiSourceData(sources, [c.upsilon * c.sigma_a * model.forward(c, f).phi0
                                 for f in sources])

res = reconstruct_sigma_a_upsilon(mesh, data, c.sigma_s, c.sigma_a, N, alpha=1e-8,
                                  truth_sigma_a=c.sigma_a, truth_upsilon=c.upsilon,
                                  opts=LbfgsOptions(max_iters=30, lower=1e-3, upper=0.5))
print(f"joint fit, 30 its: sigma_a {res.first.relative_l2_error:.1%}, "
      f"Upsilon {res.second.relative_l2_error:.1%}")

# linearized problem: a Gaussian bump in sigma_a, seen through the crossing quantity
bg = LinearizedBackground(mesh, c, sources, N)
r2 = ((mesh.nodes - 0.5) ** 2).sum(axis=1)
bump = 5e-3 * np.exp(-r2 / 0.02) * (~mesh.boundary_mask)
dPhi = linearized_forward_map(bump, bg)
dH = np.array([c.upsilon * (bump * p + c.sigma_a * bg.model.phi0(x))
               for p, x in zip(bg.phi0, dPhi)])
crossing = crossing_quantity(0, 1, dH, bg.phi0, c.sigma_a, c.upsilon)
for alpha in (1e-8, 1e-10, 1e-12):
    delta = linearized_crossing_recon([crossing], bg, alpha=alpha)
    print(f"linearized, alpha {alpha:.0e}: bump error {relative_l2_error(mesh, delta, bump):.1%}")
