"""Synthetic training data and input featurization for the harness.

The harness writes scans in the packed float32 (x, y, z, reflectance)
format the core ingests, and builds its own network-input range images from
them. It deliberately does not import the core library: scan files, the
config file, and the bridge are the only touch points.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Network input geometry: wide vertical window covering the synthetic room.
IMAGE_HEIGHT = 16
IMAGE_WIDTH = 64
FOV_UP_DEG = 20.0
FOV_DOWN_DEG = -60.0

# Matching sensor preset handed to the core via a config file.
CORE_CONFIG_YAML = """\
sensor: room
normals:
  alpha: 1.0
presets:
  room:
    height: 64
    width: 512
    fov_up_deg: 20.0
    fov_down_deg: -60.0
"""


def quaternion_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_quaternion(axis, angle_deg):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = np.deg2rad(angle_deg) / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quaternion_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def relative_rotation_angle_deg(q_a, q_b):
    """Angle of the rotation taking q_a to q_b, in degrees."""
    qa = np.asarray(q_a, dtype=float) / np.linalg.norm(q_a)
    qb = np.asarray(q_b, dtype=float) / np.linalg.norm(q_b)
    dot = abs(float(np.dot(qa, qb)))
    return float(np.degrees(2.0 * np.arccos(min(dot, 1.0))))


def room_scene(n_points=2000, seed=0) -> np.ndarray:
    """Floor disk, raised wall, and a raised cylinder arc, all well separated.

    The three patches occupy disjoint elevation bands in the range image so
    PCA windows never straddle two surfaces; that keeps the loss floor of a
    perfectly aligned pair near zero, which an overfitting run must reach.
    """
    rng = np.random.default_rng(seed)
    n_floor = n_points // 2
    n_wall = n_points // 4
    n_cyl = n_points - n_floor - n_wall

    radius = np.sqrt(rng.uniform(3.0**2, 7.0**2, n_floor))
    azimuth = rng.uniform(-np.pi, np.pi, n_floor)
    floor = np.column_stack(
        [radius * np.cos(azimuth), radius * np.sin(azimuth), np.full(n_floor, -1.5)]
    )
    wall = np.column_stack(
        [
            np.full(n_wall, 8.0),
            rng.uniform(-6.0, 6.0, n_wall),
            rng.uniform(0.8, 2.6, n_wall),
        ]
    )
    # front arc of a cylinder at (-5, 4): tangent planes stay > 1 m from the
    # sensor so the core's toward-sensor normal orientation is stable
    center = np.array([-5.0, 4.0])
    facing = np.arctan2(-center[1], -center[0])
    half_arc = np.arccos(2.5 / np.linalg.norm(center))
    theta = facing + rng.uniform(-half_arc, half_arc, n_cyl)
    cylinder = np.column_stack(
        [
            center[0] + 1.5 * np.cos(theta),
            center[1] + 1.5 * np.sin(theta),
            rng.uniform(0.5, 2.2, n_cyl),
        ]
    )
    return np.vstack([floor, wall, cylinder])


def write_scan_bin(path, points) -> None:
    points = np.asarray(points, dtype=np.float32)
    record = np.zeros((points.shape[0], 4), dtype="<f4")
    record[:, :3] = points
    Path(path).write_bytes(record.tobytes())


def range_image(points, height=IMAGE_HEIGHT, width=IMAGE_WIDTH,
                fov_up_deg=FOV_UP_DEG, fov_down_deg=FOV_DOWN_DEG) -> np.ndarray:
    """(4, H, W) network input: x, y, z, range channels, zeros where empty."""
    pts = np.asarray(points, dtype=float)
    ranges = np.linalg.norm(pts, axis=1)
    keep = ranges > 0
    pts, ranges = pts[keep], ranges[keep]

    fov_up = np.deg2rad(fov_up_deg)
    fov_down = np.deg2rad(fov_down_deg)
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    elevation = np.arcsin(np.clip(pts[:, 2] / ranges, -1.0, 1.0))
    in_fov = (elevation >= fov_down) & (elevation <= fov_up)
    pts, ranges = pts[in_fov], ranges[in_fov]
    azimuth, elevation = azimuth[in_fov], elevation[in_fov]

    cols = np.mod(np.floor((azimuth + np.pi) / (2 * np.pi) * width).astype(int), width)
    rows = np.clip(
        np.floor((fov_up - elevation) / (fov_up - fov_down) * height).astype(int),
        0, height - 1,
    )
    image = np.zeros((4, height, width), dtype=np.float32)
    order = np.argsort(-ranges)  # nearest written last
    image[0, rows[order], cols[order]] = pts[order, 0]
    image[1, rows[order], cols[order]] = pts[order, 1]
    image[2, rows[order], cols[order]] = pts[order, 2]
    image[3, rows[order], cols[order]] = ranges[order]
    return image


@dataclass(frozen=True)
class ScanPair:
    prev_id: str
    curr_id: str
    q_true: np.ndarray
    t_true: np.ndarray


def build_pair_dataset(root, pair_count=10, n_points=2000, seed=0):
    """Chained sequence of scans under varied per-step motions.

    Writes ``pair_count + 1`` scan files plus the core config, and returns
    the list of consecutive pairs with their ground-truth relative motions
    (current frame expressed in the previous frame).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "core_config.yaml").write_text(CORE_CONFIG_YAML)

    rng = np.random.default_rng(seed)
    points = room_scene(n_points=n_points, seed=seed)
    write_scan_bin(root / "000000.bin", points)

    pairs = []
    for k in range(1, pair_count + 1):
        axis = rng.normal(size=3)
        axis[2] += 1.5  # mostly-yaw motions, like a ground robot
        angle = rng.uniform(1.5, 4.5)
        translation = rng.uniform(-0.25, 0.25, size=3)
        translation[2] *= 0.3
        q = axis_angle_quaternion(axis, angle)
        rotation = quaternion_to_matrix(q)
        # points observed from the moved sensor: inverse transform
        points = (points - translation) @ rotation
        write_scan_bin(root / f"{k:06d}.bin", points)
        pairs.append(
            ScanPair(
                prev_id=f"{k - 1:06d}",
                curr_id=f"{k:06d}",
                q_true=q,
                t_true=np.asarray(translation, dtype=float),
            )
        )
    return pairs


def load_scan_bin(path) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4").reshape(-1, 4)
    return data[:, :3].astype(float)


def pair_input_images(root, pair: ScanPair):
    """Network input tensors for one pair, built from the on-disk scans."""
    prev_points = load_scan_bin(Path(root) / f"{pair.prev_id}.bin")
    curr_points = load_scan_bin(Path(root) / f"{pair.curr_id}.bin")
    return range_image(prev_points), range_image(curr_points)
