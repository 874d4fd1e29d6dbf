"""Rotation-translation-decoupled visual-inertial initialization.

The package recovers gyroscope bias, per-keyframe velocities, gravity, and
metric scale for a short camera+IMU segment, given unit bearing
correspondences and up-to-scale camera translations.  Bias comes from a
weighted eigenvalue minimization over epipolar normal fields; velocity,
gravity, and scale from a linear solve; gravity is then refined on the
known-magnitude manifold.
"""
from .bias import (
    BearingPair,
    BiasEstimate,
    Extrinsics,
    KeyframePairProblem,
    estimate_bias,
)
from .dataset import (
    GroundTruth,
    InitSegment,
    KeyframeObservations,
    export_asl,
    load_asl,
    load_tracks,
    segment,
    segment_truths,
)
from .errors import (
    DatasetError,
    DegeneratePatchError,
    ScenarioError,
    UnobservableError,
    VinitError,
)
from .metrics import (
    AggregateReport,
    SegmentMetrics,
    aggregate,
    evaluate_segment,
    run_ablation,
    run_segments,
    umeyama_alignment,
)
from .pipeline import InitResult, build_problems, initialize_segment
from .preintegration import (
    ImuSample,
    Preintegration,
    apply_gyro_bias,
    predict_state,
    preintegrate,
    preintegrate_arrays,
)
from .refine import (
    RefinementState,
    exact_norm_vector,
    gravity_to_rotation,
    recover_velocities,
    refine_scale_gravity,
)
from .synthetic import ScenarioConfig, generate
from .uncertainty import (
    CameraIntrinsics,
    FeatureUncertainty,
    PatchData,
    bearing_covariance,
    klt_covariance,
    pixel_to_bearing,
    sigma_points,
    unproject_unscented,
)
from .vgs import SegmentPoses, VgsSolution, solve_vgs

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "BearingPair",
    "BiasEstimate",
    "CameraIntrinsics",
    "DatasetError",
    "DegeneratePatchError",
    "Extrinsics",
    "FeatureUncertainty",
    "GroundTruth",
    "ImuSample",
    "InitResult",
    "InitSegment",
    "KeyframeObservations",
    "KeyframePairProblem",
    "PatchData",
    "Preintegration",
    "RefinementState",
    "ScenarioConfig",
    "ScenarioError",
    "SegmentMetrics",
    "SegmentPoses",
    "UnobservableError",
    "VgsSolution",
    "VinitError",
    "aggregate",
    "apply_gyro_bias",
    "bearing_covariance",
    "build_problems",
    "estimate_bias",
    "evaluate_segment",
    "exact_norm_vector",
    "export_asl",
    "generate",
    "gravity_to_rotation",
    "initialize_segment",
    "klt_covariance",
    "load_asl",
    "load_tracks",
    "pixel_to_bearing",
    "predict_state",
    "preintegrate",
    "preintegrate_arrays",
    "recover_velocities",
    "refine_scale_gravity",
    "run_ablation",
    "run_segments",
    "segment",
    "segment_truths",
    "sigma_points",
    "solve_vgs",
    "umeyama_alignment",
    "unproject_unscented",
]
