"""Density layouts of several materials that extremize a plate's basic frequency."""
from .eig import ConvergenceError, EigenPair, NumericalError, principal_eigenpair, rayleigh_quotient
from .fem import CLAMPED, HINGED, assemble, assemble_mass
from .mesh import (
    MeshError, TriMesh, element_measures, generate_crescent, generate_disk, generate_ellipse,
    generate_rectangle, generate_rectangle_with_hole, load_mesh, save_mesh,
)
from .optimize import (
    OptConfig, OptRun, PlateProblem, maximize_eigenvalue, minimize_eigenvalue, multistart,
    optimize, run_metadata,
)
from .rearrange import (
    DensityField, RearrangementClass, bathtub_maximize, bathtub_minimize, partial_swap,
)

__version__ = "0.1.0"
