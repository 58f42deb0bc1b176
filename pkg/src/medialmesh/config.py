"""Pipeline configuration: every tunable knob in one place.

Defaults follow the reference parameter set: gamma=40 surface pins,
c_sigma=0.3 kernel coefficient, 10 KNN force neighbors, inner gradient
tolerance 5e-3 (normalized units), outer structure tolerance 3e-4,
at most 30 outer iterations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class PipelineConfig:
    gamma: float = 40.0            # surface pin density: spacing = bbox_diag / gamma
    c_sigma: float = 0.3           # kernel width coefficient: sigma = c_sigma * sqrt(area / n)
    phi_deg: float = 30.0          # sharp-feature dihedral threshold (degrees)
    knn: int = 10                  # particle force neighbors
    grad_tol: float = 5e-3         # inner loop stop: max-norm of projected gradient
    outer_tol: float = 3e-4        # outer loop stop: |delta(seam+junction)| / count
    max_outer: int = 30
    max_inner: int = 100           # L-BFGS iteration cap per inner loop
    lbfgs_memory: int = 7
    seed: int = 0
    samples_per_cell: int = 64     # target sample count per power cell
    samples_per_piece: int = 4     # minimum samples per convex piece
    min_samples_per_cell: int = 32
    tau_rank: float = 1e-2         # singular value ratio threshold for case analysis
    theta_cluster_deg: float = 30.0  # sub-volume clustering angle
    knn_rpd: int = 24              # initial security-radius candidate count
    eps_rel: float = 1e-9          # global geometric tolerance, relative to bbox_diag
    knn_refresh_per_eval: bool = True  # refresh force KNN per L-BFGS evaluation
    insert_cap_ratio: float = 0.2  # feature-preservation insertion cap per outer pass
    hd_samples: int = 100_000      # Hausdorff samples per side
    workers: int = 1               # thread workers for the parallel stages

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls(**json.loads(text))


# Sphere structural classes (tangent-region counts; T1^2/T1^3 are the
# zero-radius external feature spheres on sharp edges / corners).
T2_SHEET = "T2_sheet"
T3_SEAM = "T3_seam"
T4_JUNCTION = "T4_junction"
T1_2_FEATURE_EDGE = "T1_2_feature_edge"
T1_3_CORNER = "T1_3_corner"
T1_SPIKE = "T1_spike"
UNKNOWN = "unknown"

# SQEM solution-space case labels.
FULL_RANK = "FULL_RANK"
LINE = "LINE"
PLANE = "PLANE"
UNDER = "UNDER"
