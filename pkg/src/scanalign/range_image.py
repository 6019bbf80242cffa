"""Spherical projection of a scan onto a dense (x, y, z, range) image grid.

Columns discretize azimuth over the full circle (the image is circular along
its width), rows discretize elevation between the configured field-of-view
bounds. Pixel collisions keep the nearest return.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scanalign.scan_io import PointCloudScan


class InvalidPixelError(ValueError):
    """Neighborhood query centered on a pixel that holds no point."""


@dataclass(frozen=True)
class ProjectionConfig:
    """Image geometry: grid size and vertical field of view in radians."""

    height: int
    width: int
    fov_up: float
    fov_down: float

    def __post_init__(self):
        if self.height < 2:
            raise ValueError(f"height must be >= 2, got {self.height}")
        if self.width < 4:
            raise ValueError(f"width must be >= 4, got {self.width}")
        if not self.fov_up > self.fov_down:
            raise ValueError(
                f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})"
            )

    @classmethod
    def from_degrees(cls, height: int, width: int, fov_up_deg: float, fov_down_deg: float):
        return cls(
            height=height,
            width=width,
            fov_up=np.deg2rad(fov_up_deg),
            fov_down=np.deg2rad(fov_down_deg),
        )

    @property
    def fov_span(self) -> float:
        return self.fov_up - self.fov_down


@dataclass(frozen=True)
class RangeImage:
    """Projected scan: per-pixel (x, y, z, r) channels, validity, point indices.

    ``point_index`` maps each valid pixel back to the index of the nearest
    point (among collisions) in the source scan; -1 elsewhere.
    """

    channels: np.ndarray  # (H, W, 4)
    valid: np.ndarray  # (H, W) bool
    point_index: np.ndarray  # (H, W) int64, -1 where invalid
    config: ProjectionConfig

    def __post_init__(self):
        for arr in (self.channels, self.valid, self.point_index):
            arr.setflags(write=False)

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    def valid_count(self) -> int:
        return int(self.valid.sum())


def projected_coordinates(points: np.ndarray, cfg: ProjectionConfig):
    """Pixel coordinates (u, v) and an in-FOV mask for raw points.

    u = floor((azimuth + pi) / 2pi * W) mod W, azimuth = atan2(y, x);
    v = floor((fov_up - elevation) / fov_span * H) clamped to [0, H-1],
    elevation = asin(z / r). Points strictly outside the vertical field of
    view are masked out.
    """
    pts = np.asarray(points, dtype=float)
    ranges = np.linalg.norm(pts, axis=1)
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    with np.errstate(invalid="ignore"):
        elevation = np.arcsin(np.clip(pts[:, 2] / ranges, -1.0, 1.0))

    in_fov = (elevation >= cfg.fov_down) & (elevation <= cfg.fov_up) & (ranges > 0)

    u = np.floor((azimuth + np.pi) / (2.0 * np.pi) * cfg.width).astype(np.int64)
    u = np.mod(u, cfg.width)
    v = np.floor((cfg.fov_up - elevation) / cfg.fov_span * cfg.height).astype(np.int64)
    v = np.clip(v, 0, cfg.height - 1)
    return u, v, in_fov


def project(scan: PointCloudScan, cfg: ProjectionConfig) -> RangeImage:
    """Project a scan; collisions at a pixel keep the minimum-range point.

    Ties in range resolve to the smallest point index. Points outside the
    vertical field of view are dropped from the image (the scan itself is
    untouched; losses operate on scan points, not pixels).
    """
    h, w = cfg.height, cfg.width
    channels = np.zeros((h, w, 4))
    valid = np.zeros((h, w), dtype=bool)
    point_index = np.full((h, w), -1, dtype=np.int64)

    if len(scan) > 0:
        u, v, in_fov = projected_coordinates(scan.points, cfg)
        idx = np.nonzero(in_fov)[0]
        if idx.size > 0:
            ranges = scan.ranges[idx]
            # Write farthest first so the nearest lands last; among exact
            # range ties the smallest scan index wins.
            order = np.lexsort((-idx, -ranges))
            idx, u_s, v_s = idx[order], u[idx][order], v[idx][order]
            pts = scan.points[idx]
            channels[v_s, u_s, 0] = pts[:, 0]
            channels[v_s, u_s, 1] = pts[:, 1]
            channels[v_s, u_s, 2] = pts[:, 2]
            channels[v_s, u_s, 3] = scan.ranges[idx]
            valid[v_s, u_s] = True
            point_index[v_s, u_s] = idx

    return RangeImage(channels=channels, valid=valid, point_index=point_index, config=cfg)


def window_offsets(half_window: int, width: int):
    """Window offsets (rows x cols) with column wraparound deduplicated.

    When the window is wider than the image, each column participates exactly
    once.
    """
    if half_window < 1:
        raise ValueError(f"half_window must be >= 1, got {half_window}")
    rows = np.arange(-half_window, half_window + 1)
    if 2 * half_window + 1 >= width:
        cols = np.arange(width)
    else:
        cols = np.arange(-half_window, half_window + 1)
    return rows, cols


def pixel_neighborhood(img: RangeImage, u: int, v: int, half_window: int) -> np.ndarray:
    """Point indices of valid pixels around (u, v), center excluded.

    Columns wrap modulo the image width (circular image); rows outside
    [0, H-1] are clipped away. Raises if the center pixel is invalid.
    """
    if not (0 <= v < img.height and 0 <= u < img.width):
        raise InvalidPixelError(f"pixel (u={u}, v={v}) outside image bounds")
    if not img.valid[v, u]:
        raise InvalidPixelError(f"pixel (u={u}, v={v}) holds no point")

    rows, cols = window_offsets(half_window, img.width)
    out = []
    for dr in rows:
        r = v + dr
        if r < 0 or r >= img.height:
            continue
        for dc in cols:
            c = (u + dc) % img.width
            if r == v and c == u:
                continue
            if img.valid[r, c]:
                out.append(img.point_index[r, c])
    return np.array(sorted(out), dtype=np.int64)
