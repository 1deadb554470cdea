"""SP_N moment-closure matrices and the bounds they satisfy.

Builds the matrices for every odd order up to 17, prints the spectral
bounds that make the block forward operator coercive, and checks the
closed-form inverse of M.
"""

import numpy as np

from qpat.spn_matrices import build_M, build_S_closed_form, build_matrices, verify_bounds

print(f"{'N':>3} {'|SM-I|':>9} {'|M|_F^2':>8} {'(N+1)/2':>8} {'lmin R':>9} {'bound':>9}")
for N in range(1, 18, 2):
    err = np.max(np.abs(build_S_closed_form(N) @ build_M(N) - np.eye((N + 1) // 2)))
    rep = verify_bounds(N)
    print(f"{N:>3} {err:9.1e} {rep.frob_sq:8.3f} {(N + 1) / 2:8.1f} "
          f"{rep.lambda_min_R:9.4f} {rep.lambda_min_bound:9.4f}")

# the boundary coupling R M^{-1} is what enters the Robin term of the block system
mats = build_matrices(3, g=0.8)
print("\nSP3 boundary coupling R M^-1:\n", np.array2string(mats.RMinv, precision=4))
