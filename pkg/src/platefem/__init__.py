"""Stabilized C0 finite elements for Kirchhoff plate bending.

Deflection/rotation formulation with interior stabilization, consistent
free-boundary terms, residual error indicators and adaptive refinement.
"""

__version__ = "0.1.0"

from .assembly import (MaterialParams, StabilizationParams, assemble,
                       auto_stabilization, estimate_inverse_constants,
                       moment_tensor, sym_grad)
from .cases import case_clamped_poly, case_free_edge, case_lshape
from .estimator import adaptive_loop, compute_indicators, dorfler_mark
from .mesh import (BoundaryLabel, Mesh, bisect_marked, load_mesh,
                   lshape_mesh, mesh_stats, save_mesh, uniform_refine,
                   unit_square_mesh)
from .solve_post import (ShearField, Solution, error_vs_exact,
                         error_vs_reference, recover_shear, solve,
                         triple_norm)
from .space import FeSpacePair, build_spaces
from .study import StudyResult, export, run_study

__all__ = [
    "MaterialParams", "StabilizationParams", "assemble",
    "auto_stabilization", "estimate_inverse_constants", "moment_tensor",
    "sym_grad", "case_clamped_poly", "case_free_edge", "case_lshape",
    "adaptive_loop", "compute_indicators", "dorfler_mark",
    "BoundaryLabel", "Mesh", "bisect_marked", "load_mesh", "lshape_mesh",
    "mesh_stats", "save_mesh", "uniform_refine", "unit_square_mesh",
    "ShearField", "Solution", "error_vs_exact", "error_vs_reference",
    "recover_shear", "solve", "triple_norm", "FeSpacePair", "build_spaces",
    "StudyResult", "export", "run_study",
]
