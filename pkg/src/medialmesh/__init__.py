"""Structure-aware medial axis transform.

Particle-based optimization of medial spheres constrained by restricted
power diagram error metrics, producing a medial mesh decomposed into
sheets, seams, and junctions, with evaluation metrics.
"""

from .config import PipelineConfig
from .mesh_io import TetDomain, load_tet_mesh, normalize, detect_features
from .geom import (SurfacePoint, ConvexCellPiece, build_closest_point_index,
                   poisson_disk_pins, clip_convex, knn)
from .rpd import Sphere, PowerCell, MedialMesh, compute_rpd, sample_cell, \
    subvolume_clusters, dual_medial_mesh
from .spheres import SqemSystem, assemble_sqem, classify_case, solve_sqem, \
    shrink_sphere, optimize_sphere_tangents, project_sphere
from .optimizer import OptState, compute_sigma, particle_pair, \
    total_energy_forces, project_gradient, inner_loop, initialize, \
    preserve_features, run_pipeline
from .structure import classify_sphere, extract_structure, prune_invalid, \
    enforce_thinness
from .metrics import recover_second_tangent, mser, triangle_quality, ter, hausdorff

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "TetDomain", "load_tet_mesh", "normalize", "detect_features",
    "SurfacePoint", "ConvexCellPiece", "build_closest_point_index",
    "poisson_disk_pins", "clip_convex", "knn",
    "Sphere", "PowerCell", "MedialMesh", "compute_rpd", "sample_cell",
    "subvolume_clusters", "dual_medial_mesh",
    "SqemSystem", "assemble_sqem", "classify_case", "solve_sqem",
    "shrink_sphere", "optimize_sphere_tangents", "project_sphere",
    "OptState", "compute_sigma", "particle_pair", "total_energy_forces",
    "project_gradient", "inner_loop", "initialize", "preserve_features",
    "run_pipeline",
    "classify_sphere", "extract_structure", "prune_invalid", "enforce_thinness",
    "recover_second_tangent", "mser", "triangle_quality", "ter", "hausdorff",
    "__version__",
]
