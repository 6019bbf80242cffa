"""Segment-based relative trajectory error metrics.

For every start frame and every segment length, the ground-truth and
estimated relative motions over the segment are compared; translational error
is reported in percent of segment length and rotational error in degrees per
unit length (per 100 m for driving sequences, per 10 m for indoor runs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)
INDOOR_LENGTHS = (5.0, 10.0, 25.0, 40.0, 60.0, 100.0)

ROTATION_UNIT_SCALE = {"per_100m": 100.0, "per_10m": 10.0}


@dataclass(frozen=True)
class LengthErrors:
    t_rel: float  # percent
    r_rel: float  # degrees per unit length
    segment_count: int


@dataclass(frozen=True)
class SegmentErrorStats:
    """Per-length and overall averages; means run over segments, not lengths."""

    per_length: dict
    mean_t_rel: float
    mean_r_rel: float
    r_rel_unit: str
    total_segments: int

    def to_dict(self) -> dict:
        return {
            "r_rel_unit": self.r_rel_unit,
            "mean_t_rel_percent": self.mean_t_rel,
            "mean_r_rel": self.mean_r_rel,
            "total_segments": self.total_segments,
            "per_length": {
                f"{length:g}": {
                    "t_rel_percent": stats.t_rel,
                    "r_rel": stats.r_rel,
                    "segment_count": stats.segment_count,
                }
                for length, stats in sorted(self.per_length.items())
            },
        }


def trajectory_path_lengths(poses) -> np.ndarray:
    """Cumulative path length at each frame; starts at zero."""
    poses = list(poses)
    if len(poses) < 2:
        raise ValueError(f"need at least 2 poses, got {len(poses)}")
    translations = np.array([p.translation for p in poses])
    steps = np.linalg.norm(np.diff(translations, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in radians; the acos argument is clamped into [-1, 1]."""
    trace = float(np.trace(rotation))
    return float(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0)))


def _stacked_matrices(poses) -> np.ndarray:
    return np.stack([p.as_matrix() for p in poses])


def _stacked_inverses(mats: np.ndarray) -> np.ndarray:
    inv = np.empty_like(mats)
    rot_t = np.transpose(mats[:, :3, :3], (0, 2, 1))
    inv[:, :3, :3] = rot_t
    inv[:, :3, 3] = -np.einsum("nij,nj->ni", rot_t, mats[:, :3, 3])
    inv[:, 3, :3] = 0.0
    inv[:, 3, 3] = 1.0
    return inv


def relative_errors(
    gt,
    est,
    lengths=KITTI_LENGTHS,
    r_rel_unit: str = "per_100m",
) -> SegmentErrorStats:
    """Average segment errors between frame-aligned trajectories.

    Every frame is a segment start; the endpoint is the first frame whose
    ground-truth path length meets or exceeds start + L (no interpolation).
    Segments running past the end of the trajectory are skipped.
    """
    gt, est = list(gt), list(est)
    if len(gt) != len(est):
        raise ValueError(f"trajectory lengths differ: gt {len(gt)} vs est {len(est)}")
    if r_rel_unit not in ROTATION_UNIT_SCALE:
        raise ValueError(f"unknown rotation unit {r_rel_unit!r}")
    if len(gt) < 2:
        raise ValueError("need at least 2 poses to evaluate")
    unit_scale = ROTATION_UNIT_SCALE[r_rel_unit]

    path = trajectory_path_lengths(gt)
    gt_mats = _stacked_matrices(gt)
    est_mats = _stacked_matrices(est)
    gt_inv = _stacked_inverses(gt_mats)
    est_inv = _stacked_inverses(est_mats)

    per_length: dict[float, LengthErrors] = {}
    t_sum_all = 0.0
    r_sum_all = 0.0
    count_all = 0

    for length in lengths:
        ends = np.searchsorted(path, path + float(length), side="left")
        starts = np.nonzero(ends < len(gt))[0]
        if starts.size == 0:
            per_length[float(length)] = LengthErrors(t_rel=0.0, r_rel=0.0, segment_count=0)
            continue
        ends = ends[starts]

        rel_gt = np.einsum("nij,njk->nik", gt_inv[starts], gt_mats[ends])
        rel_est = np.einsum("nij,njk->nik", est_inv[starts], est_mats[ends])
        rel_est_inv = _stacked_inverses(rel_est)
        error = np.einsum("nij,njk->nik", rel_est_inv, rel_gt)
        # inv(A) @ A is the identity in algebra but not in floats; restore it
        # where the relative motions agree bitwise so identical trajectories
        # evaluate to exact zeros.
        same = np.all(rel_est == rel_gt, axis=(1, 2))
        error[same] = np.eye(4)

        t_err = np.linalg.norm(error[:, :3, 3], axis=1)
        traces = np.einsum("nii->n", error[:, :3, :3])
        r_err = np.degrees(np.arccos(np.clip((traces - 1.0) / 2.0, -1.0, 1.0)))

        t_rel = t_err / float(length) * 100.0
        r_rel = r_err / float(length) * unit_scale

        per_length[float(length)] = LengthErrors(
            t_rel=float(t_rel.mean()),
            r_rel=float(r_rel.mean()),
            segment_count=int(starts.size),
        )
        t_sum_all += float(t_rel.sum())
        r_sum_all += float(r_rel.sum())
        count_all += int(starts.size)

    return SegmentErrorStats(
        per_length=per_length,
        mean_t_rel=t_sum_all / count_all if count_all else 0.0,
        mean_r_rel=r_sum_all / count_all if count_all else 0.0,
        r_rel_unit=r_rel_unit,
        total_segments=count_all,
    )


@dataclass(frozen=True)
class DeviationSeries:
    """Per-step relative-motion deviations between two trajectories."""

    frames: np.ndarray  # (m,) frame index of the step end
    d_translation: np.ndarray  # (m, 3) meters
    d_rotation: np.ndarray  # (m, 3) roll, pitch, yaw in radians

    def __len__(self) -> int:
        return self.frames.shape[0]


def pose_deviation_series(a, b) -> DeviationSeries:
    """Per-frame deviation between the relative steps of two trajectories.

    For each consecutive frame pair the relative motions ra and rb are
    compared via d = inverse(ra) * rb; the translation of d and the
    roll-pitch-yaw of its rotation form one row of plot-ready output.
    """
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValueError(f"trajectory lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        return DeviationSeries(
            frames=np.zeros(0, dtype=np.int64),
            d_translation=np.zeros((0, 3)),
            d_rotation=np.zeros((0, 3)),
        )

    a_mats = _stacked_matrices(a)
    b_mats = _stacked_matrices(b)
    rel_a = np.einsum("nij,njk->nik", _stacked_inverses(a_mats[:-1]), a_mats[1:])
    rel_b = np.einsum("nij,njk->nik", _stacked_inverses(b_mats[:-1]), b_mats[1:])
    dev = np.einsum("nij,njk->nik", _stacked_inverses(rel_a), rel_b)

    return DeviationSeries(
        frames=np.arange(1, len(a), dtype=np.int64),
        d_translation=dev[:, :3, 3].copy(),
        d_rotation=np.stack([_roll_pitch_yaw(m[:3, :3]) for m in dev]),
    )


def _roll_pitch_yaw(rotation: np.ndarray) -> np.ndarray:
    """Intrinsic roll (x), pitch (y), yaw (z) angles of a rotation matrix."""
    pitch = np.arcsin(np.clip(-rotation[2, 0], -1.0, 1.0))
    if abs(rotation[2, 0]) < 1.0 - 1e-12:
        roll = np.arctan2(rotation[2, 1], rotation[2, 2])
        yaw = np.arctan2(rotation[1, 0], rotation[0, 0])
    else:
        roll = np.arctan2(-rotation[1, 2], rotation[1, 1])
        yaw = 0.0
    return np.array([roll, pitch, yaw])


def write_deviation_table(series: DeviationSeries, path) -> None:
    """TSV with one row per step: frame, dx, dy, dz, droll, dpitch, dyaw."""
    rows = ["frame\tdx\tdy\tdz\tdroll\tdpitch\tdyaw"]
    for i in range(len(series)):
        t = series.d_translation[i]
        r = series.d_rotation[i]
        rows.append(
            f"{series.frames[i]}\t{t[0]:.10g}\t{t[1]:.10g}\t{t[2]:.10g}"
            f"\t{r[0]:.10g}\t{r[1]:.10g}\t{r[2]:.10g}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def format_table(stats: SegmentErrorStats) -> str:
    """Fixed-width text table with one row per segment length plus the means."""
    unit_label = {"per_100m": "deg/100m", "per_10m": "deg/10m"}[stats.r_rel_unit]
    lines = [
        f"{'length [m]':>12} {'t_rel [%]':>12} {f'r_rel [{unit_label}]':>16} {'segments':>10}"
    ]
    for length, entry in sorted(stats.per_length.items()):
        lines.append(
            f"{length:>12g} {entry.t_rel:>12.6f} {entry.r_rel:>16.6f} {entry.segment_count:>10d}"
        )
    lines.append(
        f"{'mean':>12} {stats.mean_t_rel:>12.6f} {stats.mean_r_rel:>16.6f} {stats.total_segments:>10d}"
    )
    return "\n".join(lines)


def write_summary(stats: SegmentErrorStats, path) -> None:
    """Machine-readable JSON rendering of the stats."""
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
