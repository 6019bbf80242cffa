"""Walk the geometric loss along one axis and verify its analytic gradient.

The combined loss couples a point-to-plane term (squared out-of-plane
distance to the matched target point) with a plane-to-plane term (squared
normal disagreement). For a flat scene translated along its normal the
point-to-plane term is exactly d^2, so both the values and the derivative are
checkable by eye.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from scanalign.alignment import (
    CorrespondenceSet,
    build_index,
    compute_gradient,
    compute_loss,
    find_correspondences,
)
from scanalign.geometry import RelativeTransform
from scanalign.normals import NormalField, compute_normals
from scanalign.range_image import ProjectionConfig, project
from scanalign.synthetic import displaced_copy, make_transform, structured_scene

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# --- hand-checkable case: plane vs itself, shifted along the normal
xs = np.linspace(-3, 3, 10)
grid = np.array([[x, y, 0.0] for x in xs for y in xs])
grid = grid[np.linalg.norm(grid, axis=1) > 0]
from scanalign.scan_io import PointCloudScan

plane = PointCloudScan.from_points(grid)
plane_normals = NormalField(
    normals=np.tile([0.0, 0.0, 1.0], (len(plane), 1)),
    valid=np.ones(len(plane), dtype=bool),
    alpha=0.5, min_valid_neighbors=5, half_window=2,
)
pairs = CorrespondenceSet(
    source_indices=np.arange(len(plane)), target_indices=np.arange(len(plane)),
    valid=np.ones(len(plane), dtype=bool), distances=np.zeros(len(plane)),
    max_distance_used=None, rejected_count=0,
)

offsets = np.linspace(-0.8, 0.8, 41)
losses = []
slopes = []
for d in offsets:
    transform = RelativeTransform(q=np.array([1.0, 0, 0, 0]), t=np.array([0.0, 0, d]))
    losses.append(
        compute_loss(plane, plane, plane_normals, plane_normals, pairs, transform).total
    )
    slopes.append(
        compute_gradient(plane, plane, plane_normals, plane_normals, pairs, transform)
        .d_total_d_t[2]
    )
print("offset d  loss (expect d^2)  dloss/dd (expect 2d)")
for d in (-0.5, -0.1, 0.3):
    i = int(np.argmin(np.abs(offsets - d)))
    print(f"{offsets[i]:+.2f}      {losses[i]:.6f}           {slopes[i]:+.6f}")

fig, ax = plt.subplots(figsize=(5, 4))
ax.plot(offsets, losses, label="measured loss")
ax.plot(offsets, offsets**2, "--", label="d^2")
ax.set_xlabel("translation along plane normal [m]")
ax.set_ylabel("loss")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "loss_curve.png", dpi=120)
print(f"wrote {OUT / 'loss_curve.png'}")

# --- full pipeline on a real pair: analytic gradient vs finite differences
cfg = ProjectionConfig.from_degrees(height=64, width=512, fov_up_deg=20, fov_down_deg=-60)
target = structured_scene(n_points=4000, seed=3)
t_true = make_transform([0.2, 0.3, 1.0], 2.0, [0.1, -0.1, 0.05])
source = displaced_copy(target, t_true)
tn = compute_normals(target, project(target, cfg), alpha=1.0)
sn = compute_normals(source, project(source, cfg), alpha=1.0)

transform = RelativeTransform(q=np.array([0.998, 0.01, 0.02, 0.03]), t=np.array([0.05, 0.0, 0.0]))
corr = find_correspondences(transform.apply(source.points), build_index(target), sn, tn)
analytic = compute_gradient(source, target, sn, tn, corr, transform).as_vector()

h = 1e-6
numeric = np.zeros(7)
params = np.concatenate([transform.q, transform.t])
for j in range(7):
    for sign in (1.0, -1.0):
        shifted = params.copy()
        shifted[j] += sign * h
        numeric[j] += sign * compute_loss(
            source, target, sn, tn, corr, RelativeTransform.from_parameters(shifted)
        ).total / (2 * h)

print("gradient check on the structured scene (frozen correspondences):")
print("  analytic:", np.array2string(analytic, precision=6))
print("  numeric: ", np.array2string(numeric, precision=6))
print(f"  max abs difference: {np.abs(analytic - numeric).max():.2e}")
