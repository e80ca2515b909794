"""Single-view tomographic reconstruction of axially symmetric objects.

Box-constrained L1/L2 and TV reconstructions by ADMM on an onion-peeling
(parallel or cone beam) projection operator, with analytic phantoms and
quality metrics.
"""

__version__ = "0.1.0"

from .grid import BeamMode, Field2D, ImagingGeometry, magnification, make_field  # noqa: E402
from .abelop import SparseOperator, apply, apply_adjoint, build_operator  # noqa: E402
from .solvers import ReconResult, SolverParams, reconstruct_l1l2, reconstruct_tv  # noqa: E402

__all__ = [
    "BeamMode", "Field2D", "ImagingGeometry", "magnification", "make_field",
    "SparseOperator", "apply", "apply_adjoint", "build_operator",
    "ReconResult", "SolverParams", "reconstruct_l1l2", "reconstruct_tv",
]
