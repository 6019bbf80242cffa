"""Line-delimited loss/gradient service for external trainers.

Requests arrive as one JSON object per line on standard input; each produces
exactly one JSON line on standard output. Responses may be emitted out of
order when a worker pool is configured; the echoed ``request_id`` correlates
them. Malformed or failing requests yield an error record and the stream
stays alive.

Request fields:
    request_id        any JSON value, echoed back verbatim
    source_scan_id    scan file stem under the dataset root
    target_scan_id    scan file stem under the dataset root
    q                 [w, x, y, z] quaternion, need not be normalized
    t                 [x, y, z] translation in meters
    lambda            optional weight of the point-to-plane term
    toggles           optional {"p2n": bool, "n2n": bool}
    max_distance      optional correspondence cutoff in meters

Response fields:
    request_id, loss_total, loss_p2n, loss_n2n, grad_q (4), grad_t (3),
    valid_pairs

Error record: {"request_id": ..., "error": "<message>"}.
"""

from __future__ import annotations

import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from scanalign.alignment import (
    build_index,
    compute_gradient,
    compute_loss,
    find_correspondences,
)
from scanalign.config import RunConfig
from scanalign.geometry import RelativeTransform
from scanalign.normals import compute_normals, load_normals
from scanalign.range_image import project
from scanalign.scan_io import load_kitti_bin


class UnknownScanError(KeyError):
    """Requested scan id does not resolve to a file under the dataset root."""


class Dataset:
    """Scan, normal-field, and KD-tree caches keyed by scan id.

    Normal caches are read from ``normals_dir`` when present; otherwise
    normals are computed on demand with the configured parameters and kept
    in memory. All caches are filled under a lock, then shared read-only.
    """

    def __init__(self, root: Path, cfg: RunConfig, normals_dir: Path | None = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise NotADirectoryError(f"dataset root {self.root} is not a directory")
        self.cfg = cfg
        self.normals_dir = Path(normals_dir) if normals_dir is not None else self.root
        self._scans: dict = {}
        self._normals: dict = {}
        self._indices: dict = {}
        self._lock = threading.Lock()

    def scan_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.bin"))

    def scan(self, scan_id: str):
        with self._lock:
            if scan_id not in self._scans:
                path = self.root / f"{scan_id}.bin"
                if not path.is_file():
                    raise UnknownScanError(f"unknown scan id {scan_id!r} (no {path})")
                self._scans[scan_id] = load_kitti_bin(path)
            return self._scans[scan_id]

    def normals(self, scan_id: str):
        with self._lock:
            cached = self._normals.get(scan_id)
        if cached is not None:
            return cached
        scan = self.scan(scan_id)
        cache_path = self.normals_dir / f"{scan_id}.normals"
        if cache_path.is_file():
            field = load_normals(cache_path)
            if len(field) != len(scan):
                raise ValueError(
                    f"normal cache {cache_path} covers {len(field)} points, "
                    f"scan has {len(scan)}"
                )
        else:
            img = project(scan, self.cfg.projection())
            field = compute_normals(
                scan,
                img,
                alpha=self.cfg.normals.alpha,
                min_valid_neighbors=self.cfg.normals.min_valid_neighbors,
                half_window=self.cfg.normals.half_window,
            )
        with self._lock:
            self._normals[scan_id] = field
        return field

    def index(self, scan_id: str):
        with self._lock:
            cached = self._indices.get(scan_id)
        if cached is not None:
            return cached
        index = build_index(self.scan(scan_id))
        with self._lock:
            self._indices[scan_id] = index
        return index


def evaluate_pair(
    dataset: Dataset,
    source_id: str,
    target_id: str,
    transform: RelativeTransform,
    lam: float,
    use_p2n: bool,
    use_n2n: bool,
    max_distance: float | None,
    strict_nk_denominator: bool = False,
) -> dict:
    """One loss + gradient evaluation; shared by the bridge and the CLI."""
    source = dataset.scan(source_id)
    target = dataset.scan(target_id)
    source_normals = dataset.normals(source_id)
    target_normals = dataset.normals(target_id)
    index = dataset.index(target_id)

    corr = find_correspondences(
        transform.apply(source.points),
        index,
        source_normals,
        target_normals,
        max_distance=max_distance,
    )
    loss = compute_loss(
        source, target, source_normals, target_normals, corr, transform,
        lam=lam, use_p2n=use_p2n, use_n2n=use_n2n,
        strict_nk_denominator=strict_nk_denominator,
    )
    grad = compute_gradient(
        source, target, source_normals, target_normals, corr, transform,
        lam=lam, use_p2n=use_p2n, use_n2n=use_n2n,
        strict_nk_denominator=strict_nk_denominator,
    )
    return {
        "loss_total": loss.total,
        "loss_p2n": loss.l_p2n,
        "loss_n2n": loss.l_n2n,
        "grad_q": list(grad.d_total_d_q),
        "grad_t": list(grad.d_total_d_t),
        "valid_pairs": loss.valid_pair_count,
    }


def handle_request(dataset: Dataset, line: str) -> dict:
    """Parse and evaluate one request line; never raises."""
    request_id = None
    try:
        payload = json.loads(line)
        if not isinstance(payload, dict):
            raise ValueError("request must be a JSON object")
        request_id = payload.get("request_id")
        for key in ("source_scan_id", "target_scan_id", "q", "t"):
            if key not in payload:
                raise ValueError(f"missing field {key!r}")
        q = np.asarray(payload["q"], dtype=float)
        t = np.asarray(payload["t"], dtype=float)
        transform = RelativeTransform(q=q, t=t)
        toggles = payload.get("toggles") or {}
        defaults = dataset.cfg.loss
        lam = float(payload.get("lambda", defaults.lam))
        max_distance = payload.get("max_distance", defaults.max_distance)
        result = evaluate_pair(
            dataset,
            str(payload["source_scan_id"]),
            str(payload["target_scan_id"]),
            transform,
            lam=lam,
            use_p2n=bool(toggles.get("p2n", defaults.p2n)),
            use_n2n=bool(toggles.get("n2n", defaults.n2n)),
            max_distance=None if max_distance is None else float(max_distance),
            strict_nk_denominator=defaults.strict_nk_denominator,
        )
        return {"request_id": request_id, **result}
    except Exception as exc:  # error record, stream must survive anything
        return {"request_id": request_id, "error": f"{type(exc).__name__}: {exc}"}


def serve(
    dataset: Dataset,
    stdin=None,
    stdout=None,
    workers: int = 1,
) -> int:
    """Serve requests until end of input. Returns the number handled."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    write_lock = threading.Lock()
    handled = 0

    def emit(record: dict):
        with write_lock:
            stdout.write(json.dumps(record) + "\n")
            stdout.flush()

    if workers <= 1:
        for line in stdin:
            if not line.strip():
                continue
            emit(handle_request(dataset, line))
            handled += 1
        return handled

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = []
        for line in stdin:
            if not line.strip():
                continue
            futures.append(pool.submit(lambda l=line: emit(handle_request(dataset, l))))
            handled += 1
        for future in futures:
            future.result()
    return handled
