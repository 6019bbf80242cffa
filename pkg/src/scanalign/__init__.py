"""Scan alignment toolkit for spinning LiDAR.

Spherical range-image projection, offline PCA surface normals, KD-tree
correspondence search, point-to-plane and plane-to-plane losses with analytic
gradients over quaternion + translation, a direct scan-to-scan odometry
optimizer, and segment-based trajectory error evaluation.
"""

from scanalign.geometry import (
    DegenerateQuaternionError,
    RelativeTransform,
    rotation_jacobian_wrt_quaternion,
)
from scanalign.scan_io import (
    PointCloudScan,
    PoseRecord,
    load_kitti_bin,
    read_trajectory,
    write_trajectory,
)
from scanalign.range_image import ProjectionConfig, RangeImage, pixel_neighborhood, project
from scanalign.normals import NormalField, compute_normals, load_normals, save_normals
from scanalign.alignment import (
    CorrespondenceSet,
    GradientReport,
    LossReport,
    NoOverlapError,
    SpatialIndex,
    build_index,
    compute_gradient,
    compute_loss,
    find_correspondences,
)
from scanalign.odometry import AlignmentResult, OptimizerConfig, align, run_sequence
from scanalign.evaluation import (
    SegmentErrorStats,
    pose_deviation_series,
    relative_errors,
    trajectory_path_lengths,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "CorrespondenceSet",
    "DegenerateQuaternionError",
    "GradientReport",
    "LossReport",
    "NoOverlapError",
    "NormalField",
    "OptimizerConfig",
    "PointCloudScan",
    "PoseRecord",
    "ProjectionConfig",
    "RangeImage",
    "RelativeTransform",
    "SegmentErrorStats",
    "SpatialIndex",
    "align",
    "build_index",
    "compute_gradient",
    "compute_loss",
    "compute_normals",
    "find_correspondences",
    "load_kitti_bin",
    "load_normals",
    "pixel_neighborhood",
    "pose_deviation_series",
    "project",
    "read_trajectory",
    "relative_errors",
    "rotation_jacobian_wrt_quaternion",
    "run_sequence",
    "save_normals",
    "trajectory_path_lengths",
    "write_trajectory",
]
