"""Direct minimization of the geometric loss for scan-to-scan odometry.

The optimizer runs first-order descent with a backtracking line search over
the raw 7-vector (quaternion, translation), renormalizing the quaternion
after every accepted step. It shares the gradient code with the trainer
bridge, so a passing odometry run doubles as an integration test of the
training signal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from scanalign.alignment import (
    LossReport,
    NoOverlapError,
    build_index,
    compute_gradient,
    compute_loss,
    find_correspondences,
)
from scanalign.geometry import RelativeTransform
from scanalign.normals import NormalField
from scanalign.scan_io import PointCloudScan, PoseRecord

DEFAULT_MAX_CORRESPONDENCE_DISTANCE = 2.0  # meters

_MAX_BACKTRACKS = 60
_STEP_GROWTH_CAP = 1e6


class OdometryNumericalError(RuntimeError):
    """Loss or gradient became non-finite; carries the iteration trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class SequenceAlignmentError(RuntimeError):
    """A pairwise alignment failed; carries the partial trajectory."""

    def __init__(self, message, frame_index, partial_trajectory):
        super().__init__(message)
        self.frame_index = frame_index
        self.partial_trajectory = list(partial_trajectory)


@dataclass(frozen=True)
class FixedStep:
    size: float

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("fixed step size must be positive")


@dataclass(frozen=True)
class Backtracking:
    beta: float = 0.5
    c: float = 1e-4

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("backtracking beta must lie in (0, 1)")
        if not 0 < self.c < 1:
            raise ValueError("backtracking c must lie in (0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 200
    loss_tolerance: float = 1e-12
    step_tolerance: float = 1e-10
    recorrespond_every: int = 1
    initializer: str = "constant_velocity"
    line_search: FixedStep | Backtracking = field(default_factory=Backtracking)
    max_correspondence_distance: float | None = DEFAULT_MAX_CORRESPONDENCE_DISTANCE

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.loss_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.recorrespond_every < 1:
            raise ValueError("recorrespond_every must be >= 1")
        if self.initializer not in ("identity", "constant_velocity"):
            raise ValueError(f"unknown initializer {self.initializer!r}")


@dataclass(frozen=True)
class AlignmentResult:
    transform: RelativeTransform
    final_loss: LossReport
    iterations: int
    converged: bool
    per_iteration_trace: list  # (loss, step_norm) per accepted step, entry 0 is the start


def align(
    source: PointCloudScan,
    target: PointCloudScan,
    source_normals: NormalField,
    target_normals: NormalField,
    cfg: OptimizerConfig | None = None,
    initial: RelativeTransform | None = None,
    lam: float = 1.0,
    use_p2n: bool = True,
    use_n2n: bool = True,
    strict_nk_denominator: bool = False,
) -> AlignmentResult:
    """Estimate the transform carrying ``source`` points into the ``target`` frame.

    Descends the combined loss from ``initial`` (identity by default),
    re-matching correspondences every ``cfg.recorrespond_every`` iterations.
    A step is accepted only if it keeps the traced loss non-increasing, so the
    returned transform is the best seen.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both scans must be non-empty")
    cfg = cfg or OptimizerConfig()

    index = build_index(target)

    def match(transform):
        return find_correspondences(
            transform.apply(source.points),
            index,
            source_normals,
            target_normals,
            max_distance=cfg.max_correspondence_distance,
        )

    def loss_at(transform, corr):
        return compute_loss(
            source, target, source_normals, target_normals, corr, transform,
            lam=lam, use_p2n=use_p2n, use_n2n=use_n2n,
            strict_nk_denominator=strict_nk_denominator,
        )

    def gradient_at(transform, corr):
        return compute_gradient(
            source, target, source_normals, target_normals, corr, transform,
            lam=lam, use_p2n=use_p2n, use_n2n=use_n2n,
            strict_nk_denominator=strict_nk_denominator,
        )

    x = (initial or RelativeTransform.identity()).normalized()
    corr = match(x)
    current = loss_at(x, corr).total
    trace = [(current, 0.0)]
    if not np.isfinite(current):
        raise OdometryNumericalError(f"initial loss is non-finite ({current})", trace)

    # The loss curvature in the quaternion block scales with the squared
    # point radius while the translation block is O(1); a fixed diagonal
    # scaling evens out the two blocks so one line-searched step length
    # serves both.
    scale_sq = max(float(np.mean(source.ranges**2)), 1.0)
    precondition = np.concatenate([np.full(4, 1.0 / scale_sq), np.ones(3)])

    converged = False
    iterations = 0
    last_accepted = current
    trial_step = 1.0

    for it in range(cfg.max_iterations):
        if it > 0 and it % cfg.recorrespond_every == 0:
            # Adopt the re-matched correspondences only if they do not raise
            # the loss at the current transform; this keeps the accepted-step
            # loss sequence non-increasing without stalling the descent.
            try:
                candidate_corr = match(x)
                candidate_loss = loss_at(x, candidate_corr).total
            except NoOverlapError:
                candidate_corr, candidate_loss = None, np.inf
            if candidate_corr is not None and candidate_loss <= current:
                corr = candidate_corr
                current = candidate_loss

        grad = gradient_at(x, corr).as_vector()
        if not np.all(np.isfinite(grad)):
            raise OdometryNumericalError("gradient is non-finite", trace)
        direction = precondition * grad
        slope = float(grad @ direction)
        direction_norm = float(np.linalg.norm(direction))
        if slope == 0.0:
            converged = True
            break

        params = x.as_parameters()
        accepted = None
        if isinstance(cfg.line_search, FixedStep):
            alpha = cfg.line_search.size
            candidate = RelativeTransform.from_parameters(params - alpha * direction).normalized()
            new_loss = loss_at(candidate, corr).total
            if np.isfinite(new_loss) and new_loss <= last_accepted:
                accepted = (candidate, new_loss, alpha)
        else:
            beta, c = cfg.line_search.beta, cfg.line_search.c
            alpha = trial_step
            for _ in range(_MAX_BACKTRACKS):
                candidate = RelativeTransform.from_parameters(
                    params - alpha * direction
                ).normalized()
                new_loss = loss_at(candidate, corr).total
                if (
                    np.isfinite(new_loss)
                    and new_loss <= current - c * alpha * slope
                    and new_loss <= last_accepted
                ):
                    accepted = (candidate, new_loss, alpha)
                    break
                alpha *= beta
            if accepted is not None:
                trial_step = min(alpha / beta, _STEP_GROWTH_CAP)

        if accepted is None:
            # No admissible step at any tried length: stationary for our purposes.
            converged = alpha * direction_norm < cfg.step_tolerance
            break

        x, new_loss, alpha = accepted
        step_norm = alpha * direction_norm
        delta = last_accepted - new_loss
        trace.append((new_loss, step_norm))
        last_accepted = new_loss
        current = new_loss
        iterations += 1

        if delta < cfg.loss_tolerance or step_norm < cfg.step_tolerance:
            converged = True
            break

    try:
        final_report = loss_at(x, match(x))
    except NoOverlapError:
        final_report = loss_at(x, corr)
    return AlignmentResult(
        transform=x,
        final_loss=final_report,
        iterations=iterations,
        converged=converged,
        per_iteration_trace=trace,
    )


def run_sequence(
    scans,
    normal_fields,
    cfg: OptimizerConfig | None = None,
    on_frame=None,
    **loss_kwargs,
) -> list[PoseRecord]:
    """Chain pairwise alignments into world poses, identity at frame 0.

    Each frame k is aligned as source against frame k-1 as target, and the
    per-step transform is composed onto the running pose. ``on_frame`` (if
    given) receives (frame_index, AlignmentResult, seconds) per pair.
    """
    scans = list(scans)
    normal_fields = list(normal_fields)
    if len(scans) < 2:
        raise ValueError(f"need at least 2 scans, got {len(scans)}")
    if len(normal_fields) != len(scans):
        raise ValueError("one normal field per scan is required")
    cfg = cfg or OptimizerConfig()

    poses = [PoseRecord.identity(0)]
    world = RelativeTransform.identity()
    previous_step: RelativeTransform | None = None

    for k in range(1, len(scans)):
        initial = previous_step if cfg.initializer == "constant_velocity" else None
        started = time.perf_counter()
        try:
            result = align(
                scans[k],
                scans[k - 1],
                normal_fields[k],
                normal_fields[k - 1],
                cfg,
                initial=initial,
                **loss_kwargs,
            )
        except (NoOverlapError, OdometryNumericalError, ValueError) as exc:
            raise SequenceAlignmentError(
                f"alignment of frame {k} against frame {k - 1} failed: {exc}",
                frame_index=k,
                partial_trajectory=poses,
            ) from exc
        elapsed = time.perf_counter() - started

        world = world.compose(result.transform)
        poses.append(
            PoseRecord(
                rotation=world.rotation_matrix(),
                translation=world.t,
                frame_index=k,
            )
        )
        previous_step = result.transform
        if on_frame is not None:
            on_frame(k, result, elapsed)

    return poses
