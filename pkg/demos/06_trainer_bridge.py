"""Drive the loss/gradient bridge the way an external trainer would.

The bridge is a long-running subprocess speaking newline-delimited JSON over
standard streams: a trainer sends predicted (q, t) for a scan pair and gets
back the loss terms, the valid-pair count, and analytic gradients at the
prediction. This demo spawns the real subprocess and round-trips a few
requests, including an error case.
"""

import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

from scanalign.synthetic import displaced_copy, make_transform, structured_scene

workdir = Path(tempfile.mkdtemp(prefix="scanalign_bridge_"))
scans_dir = workdir / "scans"
scans_dir.mkdir()

scan = structured_scene(n_points=2000, seed=9)
step = make_transform([0, 0, 1], 1.0, [0.1, 0.0, 0.0])
for k, s in enumerate([scan, displaced_copy(scan, step)]):
    with open(scans_dir / f"{k:06d}.bin", "wb") as handle:
        for p in s.points:
            handle.write(struct.pack("<4f", p[0], p[1], p[2], 0.0))

bridge = subprocess.Popen(
    [sys.executable, "-m", "scanalign.cli", "bridge",
     "--dataset", str(scans_dir), "--alpha", "1.0"],
    stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
)

requests = [
    # prediction at identity: a deliberately bad guess, gradients point home
    {"request_id": 0, "source_scan_id": "000001", "target_scan_id": "000000",
     "q": [1, 0, 0, 0], "t": [0, 0, 0]},
    # prediction at the true relative motion: loss collapses
    {"request_id": 1, "source_scan_id": "000001", "target_scan_id": "000000",
     "q": list(step.q), "t": list(step.t)},
    # unknown scan id: the stream answers with an error record and stays up
    {"request_id": 2, "source_scan_id": "nope", "target_scan_id": "000000",
     "q": [1, 0, 0, 0], "t": [0, 0, 0]},
]

for req in requests:
    bridge.stdin.write(json.dumps(req) + "\n")
bridge.stdin.flush()
bridge.stdin.close()

for line in bridge.stdout:
    response = json.loads(line)
    if "error" in response:
        print(f"request {response['request_id']}: error -> {response['error']}")
    else:
        print(
            f"request {response['request_id']}: loss={response['loss_total']:.6f} "
            f"(p2n {response['loss_p2n']:.6f}, n2n {response['loss_n2n']:.6f}), "
            f"valid_pairs={response['valid_pairs']}"
        )
        print(f"   grad_t = {[round(g, 5) for g in response['grad_t']]}")
bridge.wait(timeout=30)
print(f"bridge exited with status {bridge.returncode}")
