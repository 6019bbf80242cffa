import numpy as np
import pytest

from scanalign.evaluation import (
    KITTI_LENGTHS,
    format_table,
    pose_deviation_series,
    relative_errors,
    rotation_angle,
    trajectory_path_lengths,
    write_summary,
)
from scanalign.scan_io import PoseRecord
from scanalign.synthetic import make_transform


def straight_line(count, spacing=1.0, scale=1.0):
    return [
        PoseRecord(
            rotation=np.eye(3),
            translation=np.array([k * spacing * scale, 0.0, 0.0]),
            frame_index=k,
        )
        for k in range(count)
    ]


def yawing_path(count, yaw_step_deg, spacing=1.0):
    poses = []
    transform = make_transform([0, 0, 1], 0.0, [0, 0, 0])
    step = make_transform([0, 0, 1], yaw_step_deg, [spacing, 0, 0])
    for k in range(count):
        poses.append(
            PoseRecord(
                rotation=transform.rotation_matrix(),
                translation=transform.t,
                frame_index=k,
            )
        )
        transform = transform.compose(step)
    return poses


class TestPathLengths:
    def test_unit_spacing(self):
        path = trajectory_path_lengths(straight_line(4))
        np.testing.assert_allclose(path, [0, 1, 2, 3])

    def test_single_pose_rejected(self):
        with pytest.raises(ValueError):
            trajectory_path_lengths(straight_line(1))

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        poses = []
        position = np.zeros(3)
        total = 0.0
        for k in range(50):
            poses.append(
                PoseRecord(rotation=np.eye(3), translation=position.copy(), frame_index=k)
            )
            step = rng.normal(size=3)
            total += np.linalg.norm(step)
            position += step
        path = trajectory_path_lengths(poses)
        assert abs(path[-1] - (total - np.linalg.norm(step))) < 1e-9
        assert np.all(np.diff(path) >= 0)


class TestRelativeErrors:
    def test_identical_trajectories_give_zero(self):
        gt = yawing_path(1100, yaw_step_deg=0.05)
        stats = relative_errors(gt, gt, lengths=(100.0, 200.0))
        assert stats.total_segments > 0
        for entry in stats.per_length.values():
            assert entry.t_rel == 0.0
            assert entry.r_rel == 0.0
        assert stats.mean_t_rel == 0.0
        assert stats.mean_r_rel == 0.0

    def test_scaled_straight_line(self):
        gt = straight_line(1001)
        est = straight_line(1001, scale=1.01)
        stats = relative_errors(gt, est, lengths=KITTI_LENGTHS)
        for length, entry in stats.per_length.items():
            assert abs(entry.t_rel - 1.0) < 1e-6, length
            assert entry.r_rel == 0.0
        assert abs(stats.mean_t_rel - 1.0) < 1e-6

    def test_segment_count_1000m_l100(self):
        gt = straight_line(1001)
        stats = relative_errors(gt, gt, lengths=(100.0,))
        assert stats.per_length[100.0].segment_count == 901

    def test_segment_counts_all_lengths(self):
        # i is a valid start iff path(i) + L <= 1000, so 1001 - L starts
        gt = straight_line(1001)
        stats = relative_errors(gt, gt, lengths=KITTI_LENGTHS)
        for length in KITTI_LENGTHS:
            assert stats.per_length[length].segment_count == 1001 - int(length)

    def test_short_trajectory_gives_zero_counts(self):
        gt = straight_line(5)
        stats = relative_errors(gt, gt, lengths=(100.0,))
        assert stats.total_segments == 0
        assert stats.per_length[100.0].segment_count == 0
        assert stats.mean_t_rel == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            relative_errors(straight_line(5), straight_line(6))

    def test_invariant_under_global_rigid_transform(self):
        # non-integer spacing keeps segment boundaries away from exact
        # frame-position ties, where endpoint selection is knife-edge
        rng = np.random.default_rng(1)
        gt = yawing_path(400, yaw_step_deg=0.2, spacing=0.937)
        est = yawing_path(400, yaw_step_deg=0.21, spacing=0.937)
        world = make_transform([0.3, 0.8, 0.2], 35.0, rng.normal(size=3) * 10)

        def moved(poses):
            out = []
            for pose in poses:
                m = world.as_matrix() @ pose.as_matrix()
                out.append(
                    PoseRecord(rotation=m[:3, :3], translation=m[:3, 3], frame_index=pose.frame_index)
                )
            return out

        base = relative_errors(gt, est, lengths=(100.0, 200.0))
        shifted = relative_errors(moved(gt), moved(est), lengths=(100.0, 200.0))
        assert abs(base.mean_t_rel - shifted.mean_t_rel) < 1e-9
        assert abs(base.mean_r_rel - shifted.mean_r_rel) < 1e-9

    def test_densified_straight_line_unchanged(self):
        gt = straight_line(301)
        est = straight_line(301, scale=1.01)
        dense_gt = straight_line(601, spacing=0.5)
        dense_est = straight_line(601, spacing=0.5, scale=1.01)
        coarse = relative_errors(gt, est, lengths=(100.0,))
        dense = relative_errors(dense_gt, dense_est, lengths=(100.0,))
        assert abs(coarse.per_length[100.0].t_rel - dense.per_length[100.0].t_rel) < 1e-9

    def test_rotation_unit_scaling(self):
        gt = yawing_path(300, yaw_step_deg=0.0)
        est = yawing_path(300, yaw_step_deg=0.05)
        per_100 = relative_errors(gt, est, lengths=(100.0,), r_rel_unit="per_100m")
        per_10 = relative_errors(gt, est, lengths=(100.0,), r_rel_unit="per_10m")
        ratio = per_100.per_length[100.0].r_rel / per_10.per_length[100.0].r_rel
        assert abs(ratio - 10.0) < 1e-9
        assert per_100.r_rel_unit == "per_100m"
        assert per_10.r_rel_unit == "per_10m"


class TestRotationAngle:
    def test_identity_is_zero(self):
        assert rotation_angle(np.eye(3)) == 0.0

    def test_known_angle(self):
        rot = make_transform([0, 0, 1], 40.0, [0, 0, 0]).rotation_matrix()
        assert abs(np.degrees(rotation_angle(rot)) - 40.0) < 1e-9

    def test_clamps_near_identity(self):
        # trace can exceed 3 by rounding; acos argument must be clamped
        rot = np.eye(3) * (1 + 1e-15)
        assert rotation_angle(rot) == 0.0


class TestPoseDeviationSeries:
    def test_identical_trajectories_are_zero(self):
        poses = yawing_path(50, yaw_step_deg=0.3)
        series = pose_deviation_series(poses, poses)
        assert len(series) == 49
        np.testing.assert_allclose(series.d_translation, 0.0, atol=1e-12)
        np.testing.assert_allclose(series.d_rotation, 0.0, atol=1e-12)

    def test_constant_step_offset_shows_up_per_frame(self):
        a = straight_line(20)
        b = [
            PoseRecord(
                rotation=np.eye(3),
                translation=np.array([k * 1.1, 0.0, 0.0]),
                frame_index=k,
            )
            for k in range(20)
        ]
        series = pose_deviation_series(a, b)
        np.testing.assert_allclose(series.d_translation[:, 0], 0.1, atol=1e-12)
        np.testing.assert_allclose(series.d_translation[:, 1:], 0.0, atol=1e-12)
        np.testing.assert_allclose(series.d_rotation, 0.0, atol=1e-12)

    def test_yaw_offset_appears_in_z_component(self):
        a = yawing_path(10, yaw_step_deg=0.0)
        b = yawing_path(10, yaw_step_deg=2.0)
        series = pose_deviation_series(a, b)
        np.testing.assert_allclose(np.degrees(series.d_rotation[:, 2]), 2.0, atol=1e-9)

    def test_empty_inputs(self):
        series = pose_deviation_series([], [])
        assert len(series) == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pose_deviation_series(straight_line(3), straight_line(4))


class TestReporting:
    def test_table_contains_all_lengths(self):
        gt = straight_line(1001)
        est = straight_line(1001, scale=1.01)
        stats = relative_errors(gt, est, lengths=(100.0, 200.0))
        table = format_table(stats)
        assert "100" in table and "200" in table and "mean" in table

    def test_summary_round_trips_through_json(self, tmp_path):
        import json

        gt = straight_line(1001)
        est = straight_line(1001, scale=1.01)
        stats = relative_errors(gt, est, lengths=(100.0,))
        path = tmp_path / "summary.json"
        write_summary(stats, path)
        payload = json.loads(path.read_text())
        assert payload["per_length"]["100"]["segment_count"] == 901
        assert abs(payload["per_length"]["100"]["t_rel_percent"] - 1.0) < 1e-6
