"""Forward SP_N solves on the phantom, compared with a transport reference.

The SP_N fluence converges quickly in N; the gap to the discrete-ordinates
solution of the full transport equation levels off once N >= 7.
"""

import time

from qpat import OpticalCoefficients, SpnModel, generate_uniform_mesh, relative_l2_error
from qpat.phantoms import boundary_source, default_phantoms, evaluate_phantom, generate_phantom
from qpat.rte import AngularGrid, TransportGrid, rte_on_mesh, solve_rte

mesh = generate_uniform_mesh(32)
ph = default_phantoms()
c = OpticalCoefficients(*(generate_phantom(ph[k], mesh) for k in ("sigma_a", "sigma_s",
                                                                  "upsilon")), 0.8)
f = boundary_source("f1", mesh)

t0 = time.perf_counter()
grid = TransportGrid(96)
ref = solve_rte(grid, lambda p: evaluate_phantom(ph["sigma_a"], p),
                lambda p: evaluate_phantom(ph["sigma_s"], p),
                lambda p: 1.0 + p[:, 0], AngularGrid.equispaced(32), g=0.8)
phi_rte = rte_on_mesh(ref, mesh)
print(f"transport reference: {ref.iterations} source iterations, "
      f"{time.perf_counter() - t0:.1f} s")

previous = None
for N in (1, 3, 5, 7, 9):
    phi0 = SpnModel(mesh, N).forward(c, f).phi0
    step = ""
    if previous is not None:
        step = f"  change from N-2: {relative_l2_error(mesh, phi0, previous):.1e}"
    print(f"SP{N}: relative L2 gap to transport {relative_l2_error(mesh, phi0, phi_rte):.4f}{step}")
    previous = phi0

H = c.upsilon * c.sigma_a * previous
print(f"internal datum H: min {H.min():.3e}, max {H.max():.3e}")
