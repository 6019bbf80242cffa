"""Command-line surface: normals, odometry, eval, loss, bridge.

Exit codes: 0 success, 1 computation failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from scanalign import evaluation
from scanalign.bridge import Dataset, evaluate_pair, serve
from scanalign.config import ConfigError, LossParams, NormalsParams, RunConfig, load_config
from scanalign.geometry import RelativeTransform
from scanalign.normals import compute_normals, save_normals
from scanalign.odometry import (
    Backtracking,
    FixedStep,
    OptimizerConfig,
    SequenceAlignmentError,
    run_sequence,
)
from scanalign.range_image import project
from scanalign.scan_io import (
    PoseValidationError,
    TrajectoryFormatError,
    load_kitti_bin,
    read_trajectory,
    write_trajectory,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _fail(message: str, code: int) -> int:
    print(f"scanalign: error: {message}", file=sys.stderr)
    return code


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument("--sensor", default=None, help="sensor preset name")
    parser.add_argument(
        "--deterministic", action="store_true", help="force reproducible, ordered execution"
    )


def _add_normals_params(parser: argparse.ArgumentParser):
    parser.add_argument("--alpha", type=float, default=None, help="depth validity gate in meters")
    parser.add_argument("--min-valid-neighbors", type=int, default=None)
    parser.add_argument("--half-window", type=int, default=None)


def _add_loss_params(parser: argparse.ArgumentParser):
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="weight of the point-to-plane term")
    parser.add_argument("--no-p2n", action="store_true", help="disable the point-to-plane term")
    parser.add_argument("--no-n2n", action="store_true", help="disable the plane-to-plane term")
    parser.add_argument("--max-distance", type=float, default=None,
                        help="correspondence cutoff in meters")
    parser.add_argument("--strict-nk-denominator", action="store_true",
                        help="divide loss sums by the full source point count")


def _add_optimizer_params(parser: argparse.ArgumentParser):
    parser.add_argument("--max-iterations", type=int, default=None)
    parser.add_argument("--loss-tolerance", type=float, default=None)
    parser.add_argument("--step-tolerance", type=float, default=None)
    parser.add_argument("--recorrespond-every", type=int, default=None)
    parser.add_argument("--initializer", choices=["identity", "constant_velocity"], default=None)
    parser.add_argument("--fixed-step", type=float, default=None,
                        help="use fixed-step line search with this size")
    parser.add_argument("--optimizer-max-distance", type=float, default=None,
                        help="correspondence cutoff used inside the optimizer")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "sensor", None):
        cfg = replace(cfg, sensor=args.sensor)
    if getattr(args, "deterministic", False):
        cfg = replace(cfg, deterministic_mode=True)

    if hasattr(args, "alpha"):
        normals = cfg.normals
        normals = NormalsParams(
            alpha=args.alpha if args.alpha is not None else normals.alpha,
            min_valid_neighbors=(
                args.min_valid_neighbors
                if args.min_valid_neighbors is not None
                else normals.min_valid_neighbors
            ),
            half_window=(
                args.half_window if args.half_window is not None else normals.half_window
            ),
        )
        cfg = replace(cfg, normals=normals)

    if hasattr(args, "lam"):
        loss = cfg.loss
        loss = LossParams(
            lam=args.lam if args.lam is not None else loss.lam,
            p2n=False if args.no_p2n else loss.p2n,
            n2n=False if args.no_n2n else loss.n2n,
            max_distance=(
                args.max_distance if args.max_distance is not None else loss.max_distance
            ),
            strict_nk_denominator=args.strict_nk_denominator or loss.strict_nk_denominator,
        )
        cfg = replace(cfg, loss=loss)

    if hasattr(args, "max_iterations"):
        opt = cfg.optimizer
        line_search = opt.line_search
        if args.fixed_step is not None:
            line_search = FixedStep(size=args.fixed_step)
        opt = OptimizerConfig(
            max_iterations=(
                args.max_iterations if args.max_iterations is not None else opt.max_iterations
            ),
            loss_tolerance=(
                args.loss_tolerance if args.loss_tolerance is not None else opt.loss_tolerance
            ),
            step_tolerance=(
                args.step_tolerance if args.step_tolerance is not None else opt.step_tolerance
            ),
            recorrespond_every=(
                args.recorrespond_every
                if args.recorrespond_every is not None
                else opt.recorrespond_every
            ),
            initializer=args.initializer if args.initializer is not None else opt.initializer,
            line_search=line_search,
            max_correspondence_distance=(
                args.optimizer_max_distance
                if args.optimizer_max_distance is not None
                else opt.max_correspondence_distance
            ),
        )
        cfg = replace(cfg, optimizer=opt)
    return cfg


def _list_scans(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.bin"))


def cmd_normals(args) -> int:
    cfg = _config_from_args(args)
    scans_dir = Path(args.scans)
    if not scans_dir.is_dir():
        return _fail(f"scan directory {scans_dir} does not exist", EXIT_USAGE)
    out_dir = Path(args.out) if args.out else scans_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = _list_scans(scans_dir)
    if not paths:
        return _fail(f"no .bin scans under {scans_dir}", EXIT_USAGE)

    projection = cfg.projection()
    total_points = 0
    total_valid = 0
    for path in paths:
        scan = load_kitti_bin(path)
        img = project(scan, projection)
        field = compute_normals(
            scan,
            img,
            alpha=cfg.normals.alpha,
            min_valid_neighbors=cfg.normals.min_valid_neighbors,
            half_window=cfg.normals.half_window,
        )
        save_normals(field, out_dir / f"{path.stem}.normals")
        total_points += len(field)
        total_valid += field.valid_count()

    print(
        f"normals: {len(paths)} scans, {total_valid}/{total_points} points with valid normals"
    )
    return EXIT_OK


def cmd_odometry(args) -> int:
    cfg = _config_from_args(args)
    scans_dir = Path(args.scans)
    if not scans_dir.is_dir():
        return _fail(f"scan directory {scans_dir} does not exist", EXIT_USAGE)
    paths = _list_scans(scans_dir)
    if len(paths) < 2:
        return _fail(f"need at least 2 scans under {scans_dir}, found {len(paths)}", EXIT_USAGE)

    dataset = Dataset(scans_dir, cfg, normals_dir=args.normals)
    scans = [dataset.scan(p.stem) for p in paths]
    fields = [dataset.normals(p.stem) for p in paths]

    timings: list[float] = []

    def on_frame(_k, _result, seconds):
        timings.append(seconds * 1000.0)

    out_path = Path(args.out)
    try:
        poses = run_sequence(
            scans,
            fields,
            cfg.optimizer,
            on_frame=on_frame,
            lam=cfg.loss.lam,
            use_p2n=cfg.loss.p2n,
            use_n2n=cfg.loss.n2n,
            strict_nk_denominator=cfg.loss.strict_nk_denominator,
        )
    except SequenceAlignmentError as exc:
        partial_path = out_path.with_name(out_path.name + ".partial")
        write_trajectory(exc.partial_trajectory, partial_path)
        return _fail(
            f"{exc} (partial trajectory written to {partial_path})", EXIT_FAILURE
        )

    write_trajectory(poses, out_path)
    print(f"odometry: {len(poses)} poses written to {out_path}")
    if timings:
        print(
            "per-frame alignment time: "
            f"mean {statistics.mean(timings):.1f} ms, "
            f"median {statistics.median(timings):.1f} ms, "
            f"max {max(timings):.1f} ms"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    for path in (args.gt, args.est):
        if not Path(path).is_file():
            return _fail(f"trajectory file {path} does not exist", EXIT_USAGE)
    try:
        gt = read_trajectory(args.gt)
        est = read_trajectory(args.est)
    except (TrajectoryFormatError, PoseValidationError) as exc:
        return _fail(str(exc), EXIT_USAGE)

    lengths = (
        tuple(float(v) for v in args.lengths)
        if args.lengths
        else (evaluation.INDOOR_LENGTHS if args.unit == "per_10m" else evaluation.KITTI_LENGTHS)
    )
    try:
        stats = evaluation.relative_errors(gt, est, lengths=lengths, r_rel_unit=args.unit)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)

    print(evaluation.format_table(stats))
    if args.summary:
        evaluation.write_summary(stats, args.summary)
        print(f"summary written to {args.summary}")
    if args.deviations:
        series = evaluation.pose_deviation_series(gt, est)
        evaluation.write_deviation_table(series, args.deviations)
        print(f"per-frame deviations written to {args.deviations}")
    return EXIT_OK


def cmd_loss(args) -> int:
    cfg = _config_from_args(args)
    root = Path(args.dataset)
    if not root.is_dir():
        return _fail(f"dataset root {root} does not exist", EXIT_USAGE)
    dataset = Dataset(root, cfg, normals_dir=args.normals)
    try:
        transform = RelativeTransform(q=np.array(args.q), t=np.array(args.t))
        result = evaluate_pair(
            dataset,
            args.source,
            args.target,
            transform,
            lam=cfg.loss.lam,
            use_p2n=cfg.loss.p2n,
            use_n2n=cfg.loss.n2n,
            max_distance=cfg.loss.max_distance,
            strict_nk_denominator=cfg.loss.strict_nk_denominator,
        )
    except (KeyError, FileNotFoundError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    except Exception as exc:
        return _fail(f"{type(exc).__name__}: {exc}", EXIT_FAILURE)
    print(json.dumps(result))
    return EXIT_OK


def cmd_bridge(args) -> int:
    cfg = _config_from_args(args)
    root = Path(args.dataset)
    if not root.is_dir():
        return _fail(f"dataset root {root} does not exist", EXIT_USAGE)
    dataset = Dataset(root, cfg, normals_dir=args.normals)
    workers = 1 if cfg.deterministic_mode else max(1, args.workers)
    serve(dataset, workers=workers)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanalign",
        description="LiDAR scan alignment, odometry, and trajectory evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_normals = sub.add_parser("normals", help="precompute normal caches for a scan directory")
    p_normals.add_argument("--scans", required=True, help="directory of .bin scans")
    p_normals.add_argument("--out", default=None, help="cache output directory (default: scans)")
    _add_common(p_normals)
    _add_normals_params(p_normals)
    p_normals.set_defaults(func=cmd_normals)

    p_odo = sub.add_parser("odometry", help="run scan-to-scan odometry over a directory")
    p_odo.add_argument("--scans", required=True, help="directory of .bin scans")
    p_odo.add_argument("--normals", default=None, help="directory of .normals caches")
    p_odo.add_argument("--out", required=True, help="output trajectory file")
    _add_common(p_odo)
    _add_normals_params(p_odo)
    _add_loss_params(p_odo)
    _add_optimizer_params(p_odo)
    p_odo.set_defaults(func=cmd_odometry)

    p_eval = sub.add_parser("eval", help="segment-based trajectory error evaluation")
    p_eval.add_argument("--gt", required=True, help="ground-truth trajectory file")
    p_eval.add_argument("--est", required=True, help="estimated trajectory file")
    p_eval.add_argument("--lengths", nargs="+", type=float, default=None)
    p_eval.add_argument("--unit", choices=["per_100m", "per_10m"], default="per_100m")
    p_eval.add_argument("--summary", default=None, help="write JSON summary here")
    p_eval.add_argument("--deviations", default=None,
                        help="write per-frame relative deviations (TSV) here")
    p_eval.set_defaults(func=cmd_eval)

    p_loss = sub.add_parser("loss", help="one-shot loss/gradient for a scan pair")
    p_loss.add_argument("--dataset", required=True, help="directory of .bin scans")
    p_loss.add_argument("--normals", default=None, help="directory of .normals caches")
    p_loss.add_argument("--source", required=True, help="source scan id")
    p_loss.add_argument("--target", required=True, help="target scan id")
    p_loss.add_argument("--q", nargs=4, type=float, required=True, metavar=("W", "X", "Y", "Z"))
    p_loss.add_argument("--t", nargs=3, type=float, required=True, metavar=("X", "Y", "Z"))
    _add_common(p_loss)
    _add_normals_params(p_loss)
    _add_loss_params(p_loss)
    p_loss.set_defaults(func=cmd_loss)

    p_bridge = sub.add_parser("bridge", help="serve loss/gradient requests over stdio")
    p_bridge.add_argument("--dataset", required=True, help="directory of .bin scans")
    p_bridge.add_argument("--normals", default=None, help="directory of .normals caches")
    p_bridge.add_argument("--workers", type=int, default=1)
    _add_common(p_bridge)
    _add_normals_params(p_bridge)
    _add_loss_params(p_bridge)
    p_bridge.set_defaults(func=cmd_bridge)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except NotADirectoryError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except Exception as exc:
        return _fail(f"{type(exc).__name__}: {exc}", EXIT_FAILURE)


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
