"""Robust projective structure-from-motion with DAQ self-calibration."""
from .estimator import SelfCalibratingSfM, check_measurement_matrix, check_track_mask
from .evalkit import (
    ClassificationReport,
    ReconstructionReport,
    aggregate_sweep,
    error_2d,
    error_3d,
    f1_score,
    focal_error,
)
from .exceptions import ConfigError, GeometryError
from .factorization import (
    DepthAssignment,
    MeasurementMatrix,
    build_measurement_matrix,
    epipole,
    estimate_depths,
    estimate_fundamental,
    normalize_first_camera,
    rank4_project,
    sturm_triggs_factorize,
    weighted_reprojection_residual,
)
from .geometry import ProjectiveReconstruction, apply_homography, dehomogenize, project_point
from .selfcalib import (
    CalibrationEstimate,
    daq_from_calibration,
    daq_residual,
    diac_project,
    intrinsics_from_diac,
    metric_upgrade,
)
from .solver import SolveResult, SolverConfig, solve
from .synthgen import GroundTruthScene, SceneConfig, add_noise, generate_scene, inject_outliers, make_problem, pad_matrix

__version__ = "0.1.0"

__all__ = [
    "CalibrationEstimate",
    "ClassificationReport",
    "ConfigError",
    "DepthAssignment",
    "GeometryError",
    "GroundTruthScene",
    "MeasurementMatrix",
    "ProjectiveReconstruction",
    "ReconstructionReport",
    "SceneConfig",
    "SelfCalibratingSfM",
    "SolveResult",
    "SolverConfig",
    "add_noise",
    "aggregate_sweep",
    "apply_homography",
    "build_measurement_matrix",
    "check_measurement_matrix",
    "check_track_mask",
    "daq_from_calibration",
    "daq_residual",
    "dehomogenize",
    "diac_project",
    "epipole",
    "error_2d",
    "error_3d",
    "estimate_depths",
    "estimate_fundamental",
    "f1_score",
    "focal_error",
    "generate_scene",
    "inject_outliers",
    "intrinsics_from_diac",
    "make_problem",
    "metric_upgrade",
    "normalize_first_camera",
    "pad_matrix",
    "project_point",
    "rank4_project",
    "solve",
    "sturm_triggs_factorize",
    "weighted_reprojection_residual",
]
