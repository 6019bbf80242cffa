import json

import numpy as np
import pytest

from scanalign.cli import main
from scanalign.geometry import RelativeTransform
from scanalign.scan_io import PoseRecord, read_trajectory, write_trajectory
from scanalign.synthetic import make_transform

from conftest import build_sequence_dataset, transform_errors

ALPHA_ARGS = ["--alpha", "1.0"]


@pytest.fixture
def static_dataset(tmp_path):
    scans = tmp_path / "scans"
    build_sequence_dataset(scans, count=10)
    return scans


@pytest.fixture
def moving_dataset(tmp_path):
    scans = tmp_path / "scans"
    step = make_transform([0.1, 0.2, 1.0], 1.0, [0.08, -0.04, 0.02])
    build_sequence_dataset(scans, count=4, step=step)
    return scans, step


class TestNormalsCommand:
    def test_creates_one_cache_per_scan(self, static_dataset, tmp_path, capsys):
        out = tmp_path / "caches"
        code = main(
            ["normals", "--scans", str(static_dataset), "--out", str(out)] + ALPHA_ARGS
        )
        assert code == 0
        assert len(list(out.glob("*.normals"))) == 10
        assert "normals:" in capsys.readouterr().out

    def test_missing_directory_exits_2(self, tmp_path, capsys):
        code = main(["normals", "--scans", str(tmp_path / "nope")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_rerun_is_bit_identical(self, static_dataset, tmp_path):
        out1, out2 = tmp_path / "c1", tmp_path / "c2"
        for out in (out1, out2):
            assert main(
                ["normals", "--scans", str(static_dataset), "--out", str(out)] + ALPHA_ARGS
            ) == 0
        for cache in sorted(out1.glob("*.normals")):
            assert cache.read_bytes() == (out2 / cache.name).read_bytes()


class TestOdometryCommand:
    def test_static_sequence_writes_identity_lines(self, static_dataset, tmp_path, capsys):
        out = tmp_path / "traj.txt"
        code = main(
            ["odometry", "--scans", str(static_dataset), "--out", str(out)] + ALPHA_ARGS
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 10
        assert all(line == "1 0 0 0 0 1 0 0 0 0 1 0" for line in lines)
        assert "per-frame alignment time" in capsys.readouterr().out

    def test_known_transform_sequence_matches_composition(self, moving_dataset, tmp_path):
        scans, step = moving_dataset
        out = tmp_path / "traj.txt"
        code = main(
            ["odometry", "--scans", str(scans), "--out", str(out)] + ALPHA_ARGS
        )
        assert code == 0
        poses = read_trajectory(out)
        expected = RelativeTransform.identity()
        for k, pose in enumerate(poses):
            estimate = RelativeTransform.from_rotation_matrix(pose.rotation, pose.translation)
            rot_err, trans_err = transform_errors(estimate, expected)
            assert rot_err < 0.15 * max(k, 1)
            assert trans_err < 0.015 * max(k, 1)
            expected = expected.compose(step)

    def test_deterministic_mode_byte_identical(self, moving_dataset, tmp_path):
        scans, _ = moving_dataset
        t1, t2 = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (t1, t2):
            assert main(
                ["odometry", "--scans", str(scans), "--out", str(out), "--deterministic"]
                + ALPHA_ARGS
            ) == 0
        assert t1.read_bytes() == t2.read_bytes()

    def test_too_few_scans_exits_2(self, tmp_path):
        lonely = tmp_path / "one"
        build_sequence_dataset(lonely, count=1)
        code = main(["odometry", "--scans", str(lonely), "--out", str(tmp_path / "t.txt")])
        assert code == 2

    def test_pairwise_failure_writes_partial_and_exits_1(self, tmp_path, capsys):
        import struct

        scans = tmp_path / "scans"
        build_sequence_dataset(scans, count=2)
        # a third scan with no overlap: alignment of frame 2 must fail
        rng = np.random.default_rng(3)
        far = rng.normal(size=(200, 3)) + np.array([500.0, 0.0, 0.0])
        with open(scans / "000002.bin", "wb") as handle:
            for p in far:
                handle.write(struct.pack("<4f", p[0], p[1], p[2], 0.0))
        out = tmp_path / "traj.txt"
        code = main(
            ["odometry", "--scans", str(scans), "--out", str(out),
             "--optimizer-max-distance", "1.0"] + ALPHA_ARGS
        )
        assert code == 1
        partial = tmp_path / "traj.txt.partial"
        assert partial.exists()
        assert len(partial.read_text().strip().splitlines()) == 2
        assert not out.exists()
        assert "frame 2" in capsys.readouterr().err


class TestEvalCommand:
    def write_line(self, tmp_path, name, count, scale=1.0):
        poses = [
            PoseRecord(
                rotation=np.eye(3),
                translation=np.array([k * scale, 0.0, 0.0]),
                frame_index=k,
            )
            for k in range(count)
        ]
        path = tmp_path / name
        write_trajectory(poses, path)
        return path

    def test_identical_trajectories_print_zeros(self, tmp_path, capsys):
        gt = self.write_line(tmp_path, "gt.txt", 1001)
        code = main(["eval", "--gt", str(gt), "--est", str(gt)])
        assert code == 0
        out = capsys.readouterr().out
        assert "0.000000" in out

    def test_scaled_fixture_reports_one_percent(self, tmp_path, capsys):
        gt = self.write_line(tmp_path, "gt.txt", 1001)
        est = self.write_line(tmp_path, "est.txt", 1001, scale=1.01)
        summary = tmp_path / "summary.json"
        code = main(["eval", "--gt", str(gt), "--est", str(est), "--summary", str(summary)])
        assert code == 0
        payload = json.loads(summary.read_text())
        for entry in payload["per_length"].values():
            assert abs(entry["t_rel_percent"] - 1.0) < 1e-6
        assert payload["per_length"]["100"]["segment_count"] == 901

    def test_deviation_table_written(self, tmp_path):
        gt = self.write_line(tmp_path, "gt.txt", 200)
        est = self.write_line(tmp_path, "est.txt", 200, scale=1.1)
        deviations = tmp_path / "dev.tsv"
        code = main(
            ["eval", "--gt", str(gt), "--est", str(est),
             "--lengths", "50", "--deviations", str(deviations)]
        )
        assert code == 0
        lines = deviations.read_text().strip().splitlines()
        assert lines[0].startswith("frame\t")
        assert len(lines) == 200  # header + one row per step
        first = lines[1].split("\t")
        assert abs(float(first[1]) - 0.1) < 1e-9  # 0.1 m extra per step in x

    def test_missing_file_exits_2(self, tmp_path):
        gt = self.write_line(tmp_path, "gt.txt", 10)
        assert main(["eval", "--gt", str(gt), "--est", str(tmp_path / "nope.txt")]) == 2

    def test_mismatched_lengths_exit_2(self, tmp_path):
        gt = self.write_line(tmp_path, "gt.txt", 10)
        est = self.write_line(tmp_path, "est.txt", 11)
        assert main(["eval", "--gt", str(gt), "--est", str(est)]) == 2


class TestLossCommand:
    def test_identity_on_identical_pair_is_zero(self, static_dataset, capsys):
        code = main(
            [
                "loss", "--dataset", str(static_dataset),
                "--source", "000000", "--target", "000001",
                "--q", "1", "0", "0", "0", "--t", "0", "0", "0",
            ]
            + ALPHA_ARGS
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["loss_total"] == 0.0
        np.testing.assert_allclose(payload["grad_q"], 0.0, atol=1e-12)
        np.testing.assert_allclose(payload["grad_t"], 0.0, atol=1e-12)
        assert payload["valid_pairs"] > 0

    def test_unknown_scan_exits_2(self, static_dataset):
        code = main(
            [
                "loss", "--dataset", str(static_dataset),
                "--source", "missing", "--target", "000000",
                "--q", "1", "0", "0", "0", "--t", "0", "0", "0",
            ]
        )
        assert code == 2


class TestConfigFile:
    def test_config_file_overridden_by_flags(self, static_dataset, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text(
            "sensor: vlp16\nnormals:\n  alpha: 0.25\n  half_window: 1\n"
        )
        out = tmp_path / "caches"
        code = main(
            [
                "normals", "--scans", str(static_dataset), "--out", str(out),
                "--config", str(config), "--alpha", "1.0",
            ]
        )
        assert code == 0
        from scanalign.normals import load_normals

        field = load_normals(next(iter(sorted(out.glob("*.normals")))))
        assert field.alpha == 1.0  # flag wins
        assert field.half_window == 1  # config file wins over default

    def test_unknown_preset_exits_2(self, static_dataset, tmp_path):
        code = main(
            ["normals", "--scans", str(static_dataset), "--out", str(tmp_path / "c"),
             "--sensor", "imaginary"]
        )
        assert code == 2
