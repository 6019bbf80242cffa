import struct

import numpy as np
import pytest

from scanalign.evaluation import rotation_angle
from scanalign.normals import compute_normals
from scanalign.range_image import ProjectionConfig, project
from scanalign.synthetic import displaced_copy, make_transform, structured_scene

SCENE_PROJECTION = ProjectionConfig.from_degrees(
    height=64, width=512, fov_up_deg=20, fov_down_deg=-60
)
# The scene's floor is seen at grazing angles where adjacent rings differ by
# more than the 0.5 m production default, so the fixture widens the gate.
SCENE_ALPHA = 1.0


def scene_with_normals(n_points=5000, seed=1):
    scan = structured_scene(n_points=n_points, seed=seed)
    img = project(scan, SCENE_PROJECTION)
    normals = compute_normals(scan, img, alpha=SCENE_ALPHA)
    return scan, normals


def perturbed_pair(target, angle_deg, translation_m, axis=(0.2, 0.3, 1.0)):
    """Source scan displaced from ``target`` by a known transform."""
    direction = np.array([0.6, -0.55, 0.577])
    t_true = make_transform(
        axis, angle_deg, direction / np.linalg.norm(direction) * translation_m
    )
    source = displaced_copy(target, t_true)
    img = project(source, SCENE_PROJECTION)
    source_normals = compute_normals(source, img, alpha=SCENE_ALPHA)
    return source, source_normals, t_true


def transform_errors(estimated, true):
    """(rotation error in degrees, translation error in meters)."""
    residual = estimated.inverse().compose(true)
    return (
        float(np.degrees(rotation_angle(residual.rotation_matrix()))),
        float(np.linalg.norm(residual.t)),
    )


def mean_point_displacement(estimated, true, points):
    """Mean displacement the residual transform induces on scene points."""
    residual = estimated.inverse().compose(true)
    return float(np.linalg.norm(residual.apply(points) - points, axis=1).mean())


@pytest.fixture(scope="session")
def structured_pair():
    """Target scene with normals, cached for the whole session."""
    return scene_with_normals()


def write_scan_bin(path, scan):
    """Serialize a scan in the packed float32 quadruple layout."""
    with open(path, "wb") as handle:
        for point in scan.points:
            handle.write(struct.pack("<4f", point[0], point[1], point[2], 0.0))


def build_sequence_dataset(directory, count, step=None, n_points=2500, seed=2):
    """Write a directory of scans observed under constant per-frame motion.

    Returns the per-frame true transform (None means a static sequence).
    """
    directory.mkdir(parents=True, exist_ok=True)
    scan = structured_scene(n_points=n_points, seed=seed)
    for k in range(count):
        write_scan_bin(directory / f"{k:06d}.bin", scan)
        if step is not None and k < count - 1:
            scan = displaced_copy(scan, step)
    return step
