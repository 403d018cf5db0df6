"""Silhouette-based articulated pose estimation with generalized Chamfer distances."""

from .benchmark import (
    BenchmarkReport,
    FramePair,
    Model,
    PairRecord,
    Sequence,
    SyntheticModelSpec,
    generate_sequence,
    joint_error,
    make_model,
    run_benchmark,
    sample_pairs,
    summarize,
)
from .chamfer import (
    ChamferConfig,
    CircularMode,
    Correspondence,
    Correspondences,
    DistanceField2D,
    DistanceTensor3D,
    Variant,
    build_df2,
    build_dt3,
    chamfer_score,
    circular_distance,
    multiview_score,
    prepare_fields,
    select_correspondences,
)
from .errors import (
    BehindCameraError,
    DegenerateInputError,
    EmptyMaskError,
    EstimationFailedError,
    InvalidArgumentError,
    NoCorrespondenceError,
    RankDeficiencyError,
    SilposeError,
)
from .kinematics import (
    Bone,
    PoseVector,
    RigidTransform,
    SkinnedMesh,
    Skeleton,
    Twist,
    bone_transforms,
    exp_map,
    joint_positions,
    skin,
)
from .projection import Camera, PixelPoint, PluckerLine, backproject, project, ray_residual
from .silhouette import (
    BinaryMask,
    Contour,
    OrientedContour,
    RimProjection,
    extract_contour,
    orient_contour,
    render_silhouette,
    rim_vertices,
)
from .solver import CameraTarget, PoseEstimate, SolverConfig, estimate_pose, linearize, solve_step

__version__ = "0.1.0"
