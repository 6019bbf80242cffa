"""Offline per-point surface normals from range-image neighborhoods.

For every valid pixel the points of a square window (columns wrapping around
the circular image) form a candidate neighborhood. Neighbors whose range
differs from the center by more than ``alpha`` are discarded; if fewer than
``min_valid_neighbors`` survive the point gets no normal. Otherwise the
normal is the smallest-eigenvalue eigenvector of the neighborhood covariance
(center included), oriented toward the sensor.

Normals are a precomputation: nothing here is differentiated, downstream
gradients only rotate the stored vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scanalign.range_image import RangeImage, window_offsets
from scanalign.scan_io import PointCloudScan

DEFAULT_ALPHA = 0.5  # meters
DEFAULT_MIN_VALID_NEIGHBORS = 5
DEFAULT_HALF_WINDOW = 2

# Neighborhoods whose two smallest covariance eigenvalues are comparable do
# not define a plane; they are rejected rather than given arbitrary normals.
EIGENVALUE_RATIO_LIMIT = 0.8
RANK_EPS = 1e-12
EIGENVALUE_TIE_EPS = 1e-12

CACHE_MAGIC = b"SANF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQdII")


class NormalCacheFormatError(ValueError):
    """Normal cache file is corrupt or from an incompatible version."""


@dataclass(frozen=True)
class NormalField:
    """Per-scan-point unit normals with validity flags and the gate parameters."""

    normals: np.ndarray  # (n, 3), zero rows where invalid
    valid: np.ndarray  # (n,) bool
    alpha: float
    min_valid_neighbors: int
    half_window: int

    def __post_init__(self):
        normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if normals.shape[0] != valid.shape[0]:
            raise ValueError("normals and validity flags disagree in length")
        normals.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "valid", valid)

    def __len__(self) -> int:
        return self.normals.shape[0]

    def valid_count(self) -> int:
        return int(self.valid.sum())


def compute_normals(
    scan: PointCloudScan,
    img: RangeImage,
    alpha: float = DEFAULT_ALPHA,
    min_valid_neighbors: int = DEFAULT_MIN_VALID_NEIGHBORS,
    half_window: int = DEFAULT_HALF_WINDOW,
) -> NormalField:
    """Estimate normals for every scan point represented by a valid pixel.

    Points without a pixel (outside the field of view, or shadowed by a
    nearer return at the same pixel) are marked invalid. The computation is
    fully vectorized and deterministic: identical inputs give bit-identical
    fields.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if min_valid_neighbors < 3:
        raise ValueError(
            f"min_valid_neighbors must be >= 3, got {min_valid_neighbors}"
        )
    if img.point_index.max(initial=-1) >= len(scan):
        raise ValueError("range image indexes points beyond the scan; scan/image mismatch")

    h, w = img.height, img.width
    rows, cols = window_offsets(half_window, w)
    offsets = [(dr, dc) for dr in rows for dc in cols if not (dr == 0 and dc == 0)]

    center_pos = img.channels[..., :3]
    center_range = img.channels[..., 3]

    k = len(offsets)
    nb_ok = np.zeros((h, w, k), dtype=bool)
    nb_rel = np.zeros((h, w, k, 3))
    row_idx = np.arange(h)

    for j, (dr, dc) in enumerate(offsets):
        shifted_valid = np.roll(img.valid, shift=(-dr, -dc), axis=(0, 1))
        shifted_pos = np.roll(center_pos, shift=(-dr, -dc), axis=(0, 1))
        shifted_range = np.roll(center_range, shift=(-dr, -dc), axis=(0, 1))
        row_in_bounds = (row_idx + dr >= 0) & (row_idx + dr < h)
        ok = shifted_valid & img.valid & row_in_bounds[:, None]
        ok &= np.abs(center_range - shifted_range) <= alpha
        nb_ok[..., j] = ok
        nb_rel[..., j, :] = np.where(ok[..., None], shifted_pos - center_pos, 0.0)

    counts = nb_ok.sum(axis=-1)
    candidate = img.valid & (counts >= min_valid_neighbors)

    n_points = len(scan)
    normals = np.zeros((n_points, 3))
    valid = np.zeros(n_points, dtype=bool)
    if not candidate.any():
        return NormalField(
            normals=normals,
            valid=valid,
            alpha=alpha,
            min_valid_neighbors=min_valid_neighbors,
            half_window=half_window,
        )

    vs, us = np.nonzero(candidate)
    rel = nb_rel[vs, us]  # (m, k, 3) neighbor offsets from the center point
    member_count = (counts[vs, us] + 1).astype(float)  # center included

    # Covariance about the neighborhood mean in center-relative coordinates;
    # the center contributes the zero vector.
    first_moment = rel.sum(axis=1)
    second_moment = np.einsum("mki,mkj->mij", rel, rel)
    mean = first_moment / member_count[:, None]
    cov = second_moment / member_count[:, None, None] - np.einsum("mi,mj->mij", mean, mean)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))

    eigvals, eigvecs = np.linalg.eigh(cov)

    center_points = center_pos[vs, us]
    chosen = eigvecs[:, :, 0]
    # Tie of the two smallest eigenvalues: pick, after orientation, the
    # candidate with lexicographically smallest (|nx|, |ny|, |nz|).
    tie = (eigvals[:, 1] - eigvals[:, 0]) <= EIGENVALUE_TIE_EPS
    if tie.any():
        alt = eigvecs[tie, :, 1]
        first = _oriented(chosen[tie], center_points[tie])
        second = _oriented(alt, center_points[tie])
        pick_second = _lex_less(np.abs(second), np.abs(first))
        chosen[tie] = np.where(pick_second[:, None], second, first)
    chosen = _oriented(chosen, center_points)

    well_conditioned = eigvals[:, 2] > 0
    well_conditioned &= eigvals[:, 1] > RANK_EPS * np.maximum(eigvals[:, 2], RANK_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(eigvals[:, 1] > 0, eigvals[:, 0] / eigvals[:, 1], np.inf)
    well_conditioned &= ratio <= EIGENVALUE_RATIO_LIMIT

    point_ids = img.point_index[vs, us]
    keep = well_conditioned
    normals[point_ids[keep]] = chosen[keep]
    valid[point_ids[keep]] = True

    return NormalField(
        normals=normals,
        valid=valid,
        alpha=alpha,
        min_valid_neighbors=min_valid_neighbors,
        half_window=half_window,
    )


def _oriented(normals: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Flip normals so they face the sensor origin (n . p <= 0)."""
    dots = np.einsum("mi,mi->m", normals, points)
    return np.where((dots > 0)[:, None], -normals, normals)


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rowwise lexicographic a < b for (m, 3) arrays."""
    less = np.zeros(a.shape[0], dtype=bool)
    decided = np.zeros(a.shape[0], dtype=bool)
    for col in range(a.shape[1]):
        less |= ~decided & (a[:, col] < b[:, col])
        decided |= a[:, col] != b[:, col]
    return less


def save_normals(field: NormalField, path) -> None:
    """Write a normal cache: header, packed float32 triples, validity bitmap."""
    path = Path(path)
    header = _HEADER.pack(
        CACHE_MAGIC,
        CACHE_VERSION,
        len(field),
        field.alpha,
        field.min_valid_neighbors,
        field.half_window,
    )
    body = field.normals.astype("<f4").tobytes()
    bitmap = np.packbits(field.valid).tobytes()
    path.write_bytes(header + body + bitmap)


def load_normals(path) -> NormalField:
    """Read a cache written by ``save_normals``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise NormalCacheFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, count, alpha, min_nb, half_window = _HEADER.unpack_from(raw, 0)
    if magic != CACHE_MAGIC:
        raise NormalCacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise NormalCacheFormatError(
            f"{path}: cache version {version} not supported (expected {CACHE_VERSION})"
        )
    body_bytes = count * 3 * 4
    bitmap_bytes = (count + 7) // 8
    expected = _HEADER.size + body_bytes + bitmap_bytes
    if len(raw) != expected:
        raise NormalCacheFormatError(
            f"{path}: expected {expected} bytes for {count} normals, found {len(raw)}"
        )
    normals = np.frombuffer(raw, dtype="<f4", count=count * 3, offset=_HEADER.size)
    normals = normals.reshape(count, 3).astype(float)
    bits = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size + body_bytes)
    valid = np.unpackbits(bits, count=count).astype(bool)
    return NormalField(
        normals=normals,
        valid=valid,
        alpha=alpha,
        min_valid_neighbors=min_nb,
        half_window=half_window,
    )
