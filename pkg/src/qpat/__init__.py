"""Simplified spherical harmonics (SP_N) toolkit for quantitative photoacoustic tomography.

Modules
-------
spn_matrices  moment-closure matrices and their bound checks
mesh          P1 finite elements on the unit square
forward       block SP_N forward solver and internal data
rte           discrete-ordinates transport reference solver
optimize      projected L-BFGS and adjoint gradients
inverse       single-coefficient reconstructions
joint         two-coefficient and linearized reconstructions
phantoms      phantoms, boundary sources and noise models
experiments   config-driven experiment runner behind the ``qpat`` command
"""

from .errors import QpatError
from .forward import OpticalCoefficients, SpnModel
from .mesh import generate_uniform_mesh, relative_l2_error
from .spn_matrices import build_matrices

__version__ = "0.1.0"

__all__ = ["QpatError", "OpticalCoefficients", "SpnModel", "generate_uniform_mesh",
           "relative_l2_error", "build_matrices", "__version__"]
