"""Synthetic scan generators for demos and verification.

All generators are deterministic for a fixed seed and produce scans in the
sensor frame (sensor at the origin).
"""

from __future__ import annotations

import numpy as np

from scanalign.geometry import RelativeTransform
from scanalign.scan_io import PointCloudScan


def plane_scan(
    z: float = -1.0,
    extent: float = 8.0,
    spacing: float = 0.2,
    source_id: str = "plane",
) -> PointCloudScan:
    """Horizontal plane at height ``z``, sampled on a square grid."""
    coords = np.arange(-extent, extent + spacing / 2, spacing)
    xs, ys = np.meshgrid(coords, coords)
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])
    return PointCloudScan.from_points(pts, source_id=source_id)


def sphere_scan(
    radius: float = 20.0,
    points_per_degree: float = 4.0,
    elevation_limit_deg: float = 12.0,
    source_id: str = "sphere",
) -> PointCloudScan:
    """Sphere centered at the sensor, sampled on an angular grid."""
    step = 1.0 / points_per_degree
    elevations = np.deg2rad(np.arange(-elevation_limit_deg, elevation_limit_deg + step / 2, step))
    azimuths = np.deg2rad(np.arange(-180.0, 180.0, step))
    el, az = np.meshgrid(elevations, azimuths)
    pts = radius * np.column_stack(
        [
            (np.cos(el) * np.cos(az)).ravel(),
            (np.cos(el) * np.sin(az)).ravel(),
            np.sin(el).ravel(),
        ]
    )
    return PointCloudScan.from_points(pts, source_id=source_id)


def structured_scene(
    n_points: int = 5000,
    seed: int = 0,
    source_id: str = "scene",
) -> PointCloudScan:
    """Floor plane, perpendicular wall, and a vertical cylinder.

    Surfaces with three distinct normal directions constrain all six degrees
    of freedom, so alignment against a rigidly moved copy has a unique
    minimum. Only sensor-visible surface patches are sampled, and the
    cylinder arc stays clear of grazing tangent planes whose toward-sensor
    normal orientation would be ambiguous.
    """
    rng = np.random.default_rng(seed)
    n_floor = n_points // 2
    n_wall = n_points // 4
    n_cyl = n_points - n_floor - n_wall

    floor = np.column_stack(
        [
            rng.uniform(-9.0, 9.0, n_floor),
            rng.uniform(-9.0, 9.0, n_floor),
            np.full(n_floor, -1.5),
        ]
    )
    wall = np.column_stack(
        [
            np.full(n_wall, 8.0),
            rng.uniform(-9.0, 9.0, n_wall),
            rng.uniform(-1.4, 2.0, n_wall),
        ]
    )
    # Front arc of the cylinder: outward radial direction n satisfies
    # n . center < -2.5, keeping every tangent plane at least 1 m from the
    # sensor so the orientation convention is stable under perturbation.
    center = np.array([-5.0, 4.0])
    facing = np.arctan2(-center[1], -center[0])
    half_arc = np.arccos(2.5 / np.linalg.norm(center))
    theta = facing + rng.uniform(-half_arc, half_arc, n_cyl)
    cylinder = np.column_stack(
        [
            center[0] + 1.5 * np.cos(theta),
            center[1] + 1.5 * np.sin(theta),
            rng.uniform(-1.4, 1.5, n_cyl),
        ]
    )
    return PointCloudScan.from_points(
        np.vstack([floor, wall, cylinder]), source_id=source_id
    )


def make_transform(
    axis,
    angle_deg: float,
    translation,
) -> RelativeTransform:
    """Unit-quaternion transform from an axis-angle rotation plus translation."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = np.deg2rad(angle_deg) / 2.0
    q = np.concatenate([[np.cos(half)], np.sin(half) * axis])
    return RelativeTransform(q=q, t=np.asarray(translation, dtype=float))


def displaced_copy(scan: PointCloudScan, transform: RelativeTransform) -> PointCloudScan:
    """The same geometry observed from a sensor moved by ``transform``.

    If ``transform`` maps the new sensor frame into the old one, the returned
    scan plays the source role and ``scan`` the target: applying ``transform``
    to the result reproduces ``scan`` exactly.
    """
    inv = transform.inverse()
    return PointCloudScan.from_points(
        inv.apply(scan.points), source_id=scan.source_id + "_moved"
    )
