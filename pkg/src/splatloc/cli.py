"""Command line interface: ``splatloc {render,refine,experiment,compare}``.

Rasterizer threads default to ``$SPLATLOC_THREADS`` (or all cores).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import SplatlocError
from .harness import ExperimentConfig, Report, run_experiment
from .images import load_png, save_png
from .pose import (
    DEFAULT_SCHEDULE,
    Pose,
    StepSchedule,
    inject_noise,
    look_at,
    median_errors,
    pose_error,
    read_pose_file,
    write_pose_file,
)
from .renderer import Camera, render, set_threads
from .scene import SyntheticSpec, generate_synthetic, load_scene
from .search import SearchOptions, refine, result_summary, write_trace_jsonl


def _add_scene(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", type=Path, help="scene file (.ply or .json)")
    g.add_argument("--synthetic", type=int, metavar="COUNT", help="generate a synthetic scene (uses --seed)")
    p.add_argument("--extent", type=float, default=1.0, help="synthetic half-width (default 1.0)")
    p.add_argument("--scale-range", type=float, nargs=2, default=(0.01, 0.05), metavar=("LO", "HI"))


def _add_camera(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--fov", type=float, default=60.0, help="horizontal field of view in degrees")
    p.add_argument("--intrinsics", type=float, nargs=4, metavar=("FX", "FY", "CX", "CY"),
                   help="overrides --fov")


def _add_pose(p: argparse.ArgumentParser, prefix: str, required: bool) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument(f"--{prefix}", type=float, nargs=7, metavar="V", help="qw qx qy qz tx ty tz (world to camera)")
    g.add_argument(f"--{prefix}-look-at", type=float, nargs=3, metavar=("EX", "EY", "EZ"),
                   help="camera center looking at the origin")
    g.add_argument(f"--{prefix}-file", type=Path, help="pose file; pick the entry with --name")


def _scene(args):
    if args.scene is not None:
        if not args.scene.is_file():
            raise FileNotFoundError(f"scene file not found: {args.scene}")
        return load_scene(args.scene)
    return generate_synthetic(SyntheticSpec(count=args.synthetic, extent=args.extent,
                                            scale_range=tuple(args.scale_range), seed=args.seed))


def _camera(args) -> Camera:
    if args.intrinsics:
        fx, fy, cx, cy = args.intrinsics
        return Camera(fx, fy, cx, cy, args.width, args.height)
    return Camera.from_fov(args.width, args.height, args.fov)


def _pose(args, prefix: str) -> Pose | None:
    attr = prefix.replace("-", "_")
    vals = getattr(args, attr)
    if vals is not None:
        return Pose(vals[:4], vals[4:])
    eye = getattr(args, f"{attr}_look_at")
    if eye is not None:
        return look_at(eye)
    path = getattr(args, f"{attr}_file")
    if path is None:
        return None
    if not path.is_file():
        raise FileNotFoundError(f"pose file not found: {path}")
    poses = read_pose_file(path)
    if args.name is None:
        if len(poses) != 1:
            raise SplatlocError(f"{path} holds {len(poses)} poses; choose one with --name")
        return next(iter(poses.values()))
    if args.name not in poses:
        raise SplatlocError(f"{path} has no pose named {args.name!r}")
    return poses[args.name]


def cmd_render(args) -> int:
    img = render(_scene(args), _camera(args), _pose(args, "pose"), args.opacity_mode)
    save_png(img, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_refine(args) -> int:
    scene = _scene(args)
    cam = _camera(args)
    gt = _pose(args, "gt")
    if args.query is not None:
        query = load_png(args.query, srgb=args.srgb)
    elif gt is not None:
        query = render(scene, cam, gt, args.opacity_mode)
    else:
        raise SplatlocError("need --query or a GT pose to render the query from")

    init = _pose(args, "init")
    if init is None:
        if gt is None or args.noise is None:
            raise SplatlocError("need an initial pose, or a GT pose together with --noise")
        init = inject_noise(gt, args.noise[0], args.noise[1], args.seed)

    schedule = StepSchedule.from_list(json.loads(args.schedule)) if args.schedule else DEFAULT_SCHEDULE
    opts = SearchOptions(
        stagnation_limit=args.stagnation, max_expansions=args.max_expansions, decimation=args.decimation,
        opacity_mode=args.opacity_mode, workers=args.workers,
    )
    res = refine(scene, cam, query, init, schedule, args.heuristic, opts)
    summary = result_summary(res)
    if gt is not None:
        e0, e1 = pose_error(init, gt), pose_error(res.best_pose, gt)
        summary["init_error"] = [e0.translation_error, e0.rotation_error]
        summary["refined_error"] = [e1.translation_error, e1.rotation_error]
    text = json.dumps(summary, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.out_pose:
        write_pose_file(args.out_pose, {args.name or "refined": res.best_pose})
    if args.trace:
        write_trace_jsonl(res, args.trace)
    return 0


def _print_aggregates(report: Report, metric: bool) -> None:
    unit, scale = ("cm", 100.0) if metric else ("u", 1.0)
    print(f"{'heuristic':<9} {'noise':>13} {'n':>3}  {'init t/r':>17}  {'refined t/r':>17}  "
          f"{'t+%':>6} {'r+%':>6} {'within%':>7} {'exp':>4}")
    for a in report.aggregates:
        noise = "file" if a.q_scale is None else f"{a.q_scale:g}/{a.t_scale:g}"
        print(f"{a.heuristic:<9} {noise:>13} {a.count:>3}  "
              f"{a.median_init_t * scale:>7.4f}{unit}/{a.median_init_r:>6.3f}°  "
              f"{a.median_refined_t * scale:>7.4f}{unit}/{a.median_refined_r:>6.3f}°  "
              f"{a.improvement_t:>6.1f} {a.improvement_r:>6.1f} {a.ratio_within:>7.1f} {a.max_expansions:>4}")


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.seed_given and cfg.scene_source[0] == "synthetic":
        cfg.scene_source = ("synthetic", replace(cfg.scene_source[1], seed=args.seed))
    report = run_experiment(cfg)
    _print_aggregates(report, cfg.metric_scale)
    if cfg.output_dir is not None:
        print(f"report written to {cfg.output_dir}")
    return 0


def cmd_compare(args) -> int:
    for p in (args.estimates, args.ground_truth):
        if not p.is_file():
            raise FileNotFoundError(f"pose file not found: {p}")
    est, gt = read_pose_file(args.estimates), read_pose_file(args.ground_truth)
    names = [n for n in est if n in gt]
    if not names:
        raise SplatlocError("no pose names in common")
    unit, scale = ("cm", 100.0) if args.metric else ("units", 1.0)
    print(f"{'name':<24} {'t_err (' + unit + ')':>14} {'r_err (deg)':>12}")
    for n in names:
        e = pose_error(est[n], gt[n])
        print(f"{n:<24} {e.translation_error * scale:>14.6f} {e.rotation_error:>12.6f}")
    m = median_errors((est[n], gt[n]) for n in names)
    print(f"{'median':<24} {m.translation_error * scale:>14.6f} {m.rotation_error:>12.6f}")
    skipped = sorted(set(est) ^ set(gt))
    if skipped:
        print(f"skipped {len(skipped)} unmatched name(s): {', '.join(skipped)}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splatloc", description="Pose refinement against Gaussian splat scenes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for synthetic scenes and noise injection (default 0)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene from a pose to PNG")
    _add_scene(p)
    _add_camera(p)
    _add_pose(p, "pose", required=True)
    p.add_argument("--name", help="entry to use from --pose-file")
    p.add_argument("--opacity-mode", choices=("direct", "volume"), default="direct")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("refine", help="refine one pose against one query image")
    _add_scene(p)
    _add_camera(p)
    p.add_argument("--query", type=Path, help="query PNG; omitted means render it from the GT pose")
    p.add_argument("--srgb", action="store_true", help="linearize an sRGB-encoded query")
    _add_pose(p, "gt", required=False)
    _add_pose(p, "init", required=False)
    p.add_argument("--name", help="entry to use from pose files")
    p.add_argument("--noise", type=float, nargs=2, metavar=("Q", "T"), help="perturb the GT pose to start from")
    p.add_argument("--heuristic", choices=("sad", "psnr", "ssim"), default="sad")
    p.add_argument("--schedule", help="JSON list of [dq, dt, budget] levels")
    p.add_argument("--max-expansions", type=int, default=400)
    p.add_argument("--stagnation", type=int, default=40)
    p.add_argument("--decimation", type=int, choices=(1, 2, 4), default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--opacity-mode", choices=("direct", "volume"), default="direct")
    p.add_argument("--out", type=Path, help="write the JSON summary here")
    p.add_argument("--out-pose", type=Path, help="write the refined pose here")
    p.add_argument("--trace", type=Path, help="write the expansion trace as JSON lines")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("experiment", help="run an experiment config")
    p.add_argument("config", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare", help="pose error table for two pose files")
    p.add_argument("estimates", type=Path)
    p.add_argument("ground_truth", type=Path)
    p.add_argument("--metric", action="store_true", help="poses are in meters; print centimeters")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    set_threads()
    try:
        return args.func(args)
    except (SplatlocError, OSError, ValueError) as e:
        print(f"splatloc: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
