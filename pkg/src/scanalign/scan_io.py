"""Scan loading and trajectory file I/O.

Scans are read from the packed binary format used by the KITTI odometry
distribution: consecutive little-endian float32 quadruples (x, y, z,
reflectance), no header. Trajectories use the 12-number-per-line pose text
format (top three rows of the homogeneous matrix, row major).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

POINT_RECORD_BYTES = 16  # 4 x float32

ROTATION_DRIFT_TOLERANCE = 1e-6


class ScanFormatError(ValueError):
    """Scan file does not match the packed float32 quadruple layout."""


class TrajectoryFormatError(ValueError):
    """Trajectory file line cannot be parsed as 12 decimals."""


class PoseValidationError(ValueError):
    """Parsed pose violates rotation-matrix invariants."""


@dataclass(frozen=True)
class PointCloudScan:
    """One LiDAR revolution: points in the sensor frame plus their ranges.

    ``ranges[i]`` always equals the Euclidean norm of ``points[i]``; zero-range
    or non-finite returns never survive construction through the loaders.
    """

    points: np.ndarray  # (n, 3) float64, meters
    ranges: np.ndarray  # (n,) float64, meters
    source_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        rng = np.asarray(self.ranges, dtype=float).reshape(-1)
        if pts.shape[0] != rng.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {rng.shape[0]} ranges")
        pts.setflags(write=False)
        rng.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ranges", rng)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_points(cls, points, source_id: str = "") -> "PointCloudScan":
        """Build a scan from raw xyz rows, dropping zero-range and non-finite returns."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        finite = np.all(np.isfinite(pts), axis=1)
        pts = pts[finite]
        ranges = np.linalg.norm(pts, axis=1)
        keep = ranges > 0.0
        return cls(points=pts[keep], ranges=ranges[keep], source_id=source_id)


@dataclass(frozen=True)
class PoseRecord:
    """World pose of one frame: orthonormal rotation (det +1) and translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    frame_index: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        drift = np.abs(rot @ rot.T - np.eye(3)).max()
        if drift > ROTATION_DRIFT_TOLERANCE:
            raise PoseValidationError(
                f"rotation deviates from orthonormal by {drift:.3e} (frame {self.frame_index})"
            )
        if np.linalg.det(rot) < 0:
            raise PoseValidationError(
                f"rotation has negative determinant (frame {self.frame_index})"
            )
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be non-negative, got {self.frame_index}")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls, frame_index: int = 0) -> "PoseRecord":
        return cls(rotation=np.eye(3), translation=np.zeros(3), frame_index=frame_index)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


class Trajectory(list):
    """List of PoseRecord with read metadata attached.

    ``reorthonormalized_frames`` lists frame indices whose rotation block
    drifted past the tolerance on read and was projected back to SO(3).
    """

    def __init__(self, poses=(), reorthonormalized_frames=()):
        super().__init__(poses)
        self.reorthonormalized_frames: list[int] = list(reorthonormalized_frames)


def load_kitti_bin(path: str | os.PathLike) -> PointCloudScan:
    """Load one scan from a packed (x, y, z, reflectance) float32 file.

    Reflectance is discarded; the processing pipeline consumes geometry and
    range only. Points with zero range or non-finite coordinates are dropped.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        valid_bytes = (len(raw) // POINT_RECORD_BYTES) * POINT_RECORD_BYTES
        raise ScanFormatError(
            f"{path}: file length {len(raw)} is not a multiple of {POINT_RECORD_BYTES}; "
            f"trailing partial record starts at byte offset {valid_bytes}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloudScan.from_points(data[:, :3].astype(float), source_id=path.stem)


def write_trajectory(poses, path: str | os.PathLike) -> None:
    """Write poses as one 12-decimal line each (3x4 block, row major).

    Decimals are serialized with 12 significant digits, enough to round-trip
    float32-precision source data losslessly.
    """
    poses = list(poses)
    if not poses:
        raise ValueError("cannot write an empty trajectory")
    for i, pose in enumerate(poses):
        if pose.frame_index != i:
            raise ValueError(
                f"frame indices must be contiguous from 0; position {i} has index {pose.frame_index}"
            )
    lines = []
    for pose in poses:
        block = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
        lines.append(" ".join(f"{v:.12g}" for v in block.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path: str | os.PathLike) -> Trajectory:
    """Parse a pose-per-line trajectory file, inverse of ``write_trajectory``.

    Rotation blocks whose orthonormality drift exceeds 1e-6 are projected back
    onto SO(3) via SVD and flagged in ``Trajectory.reorthonormalized_frames``.
    A reflection block (determinant -1) is rejected outright.
    """
    path = Path(path)
    poses = []
    flagged = []
    with path.open("r") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise TrajectoryFormatError(
                    f"{path}: line {line_no} has {len(fields)} fields, expected 12"
                )
            try:
                values = np.array([float(f) for f in fields])
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}: line {line_no}: {exc}") from exc
            block = values.reshape(3, 4)
            rot, trans = block[:, :3], block[:, 3]
            if np.linalg.det(rot) < 0:
                raise PoseValidationError(
                    f"{path}: line {line_no}: rotation determinant is negative"
                )
            drift = np.abs(rot @ rot.T - np.eye(3)).max()
            if drift > ROTATION_DRIFT_TOLERANCE:
                u, _, vt = np.linalg.svd(rot)
                rot = u @ vt
                if np.linalg.det(rot) < 0:
                    raise PoseValidationError(
                        f"{path}: line {line_no}: nearest orthonormal matrix is a reflection"
                    )
                flagged.append(line_no - 1)
            poses.append(PoseRecord(rotation=rot, translation=trans, frame_index=line_no - 1))
    return Trajectory(poses, reorthonormalized_frames=flagged)
