"""Subprocess client for the scanalign loss/gradient bridge.

Spawns ``scanalign bridge`` (via ``python -m scanalign.cli``) over a dataset
directory and exchanges newline-delimited JSON. Requests within one batch are
pipelined; responses are correlated by request_id, so out-of-order replies
from a multi-worker bridge are handled transparently.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path


class BridgeError(RuntimeError):
    """The bridge answered with an error record."""


class BridgeClient:
    def __init__(self, dataset_dir, config_path=None, normals_dir=None, workers=1):
        cmd = [
            sys.executable, "-m", "scanalign.cli", "bridge",
            "--dataset", str(dataset_dir),
            "--workers", str(workers),
        ]
        if config_path is not None:
            cmd += ["--config", str(config_path)]
        if normals_dir is not None:
            cmd += ["--normals", str(normals_dir)]
        self._proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._next_id = 0

    def evaluate_batch(self, requests: list[dict]) -> list[dict]:
        """Send all requests, collect all responses; raises on error records.

        Each request dict needs source_scan_id, target_scan_id, q, t and may
        carry lambda/toggles/max_distance. Responses come back in request
        order regardless of arrival order.
        """
        if self._proc.poll() is not None:
            raise BridgeError("bridge process has exited")
        ids = []
        for request in requests:
            payload = dict(request)
            payload["request_id"] = self._next_id
            ids.append(self._next_id)
            self._next_id += 1
            self._proc.stdin.write(json.dumps(payload) + "\n")
        self._proc.stdin.flush()

        collected: dict = {}
        while len(collected) < len(ids):
            line = self._proc.stdout.readline()
            if not line:
                raise BridgeError("bridge closed the stream mid-batch")
            record = json.loads(line)
            collected[record.get("request_id")] = record

        ordered = [collected[i] for i in ids]
        for record in ordered:
            if "error" in record:
                raise BridgeError(record["error"])
        return ordered

    def evaluate(self, source_scan_id, target_scan_id, q, t, **extra) -> dict:
        request = {
            "source_scan_id": source_scan_id,
            "target_scan_id": target_scan_id,
            "q": [float(v) for v in q],
            "t": [float(v) for v in t],
        }
        request.update(extra)
        return self.evaluate_batch([request])[0]

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=30)

    def __enter__(self):
        return self

    def __exit__(self, *_exc):
        self.close()
