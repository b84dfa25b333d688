"""Command-line entry point.

Exit codes: 0 success, 1 verification or numerical failure, 2 usage or
configuration error (including missing inputs), 3 I/O error (including
unreadable or malformed files).
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    EmptyRegionError,
    FormatError,
    InvalidSpecError,
    NonFiniteGradientError,
    WarpGeoError,
)
from .fileio import read_flo, read_pfm, read_pnm, read_poses, write_csv, write_flo, write_pfm, write_pnm, write_poses
from .flowviz import flow_to_color
from .geometry import PoseSE3
from .gradcheck import AUDITS, format_report, run_gradcheck
from .metrics import DepthMetrics, depth_metrics, epe_vs_residual_histogram, flow_epe_noc_all, ate, positions_from_relative
from .optimizer import (
    STAGES,
    TRACE_COLUMNS,
    OptimizerConfig,
    SceneData,
    load_checkpoint,
    parse_optimizer_config,
    run_optimization,
    save_checkpoint,
)
from .scenes import SceneSpec, generate_scene, parse_scene_config, read_scene, resolve_spec, scene_self_check, write_scene

OUTPUT_ROOT_ENV = "WARPGEO_OUTPUT_ROOT"
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
CHECKPOINT = "checkpoint.npz"
FAILED_MARKER = "FAILED"


class UsageError(Exception):
    """Bad flags or paths, detected before any work starts."""


def _read_text(path):
    with open(path) as f:
        return f.read()


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _output_dir(args, default_name):
    if args.out:
        return args.out
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not root:
        raise UsageError(f"--out is required when ${OUTPUT_ROOT_ENV} is not set")
    return os.path.join(root, default_name)


def _prepare_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")
    return path


def _write_report(path, header, rows):
    if path:
        write_csv(path, header, rows)


# --------------------------------------------------------------------------
# gen-scene


def cmd_gen_scene(args):
    spec = SceneSpec()
    if args.config:
        spec = parse_scene_config(_read_text(_require_file(args.config, "scene config")))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    spec = resolve_spec(spec)  # validates before any file is written
    out = _prepare_dir(_output_dir(args, "scene"))
    scene = generate_scene(spec)
    write_scene(scene, out)
    print(f"wrote scene with {len(scene.frames)} frames to {out}")
    if args.check:
        report = scene_self_check(scene)
        print(report)
        if not report.passed:
            return EXIT_VERIFY
    return EXIT_OK


# --------------------------------------------------------------------------
# optimize


def _write_results(out, result):
    for i, d in enumerate(result.depth):
        write_pfm(os.path.join(out, f"depth_{i:03d}.pfm"), d)
    if result.pose:
        write_poses(os.path.join(out, "poses.txt"), [PoseSE3.from_vector(p).matrix() for p in result.pose])
    for k, (rf, rb) in enumerate(zip(result.rigid_fwd, result.rigid_bwd)):
        write_flo(os.path.join(out, f"rigid_fwd_{k:03d}.flo"), rf)
        write_flo(os.path.join(out, f"rigid_bwd_{k:03d}.flo"), rb)
    for k, (rf, rb) in enumerate(zip(result.residual_fwd, result.residual_bwd)):
        write_flo(os.path.join(out, f"residual_fwd_{k:03d}.flo"), rf)
        write_flo(os.path.join(out, f"residual_bwd_{k:03d}.flo"), rb)
        write_flo(os.path.join(out, f"full_fwd_{k:03d}.flo"), result.rigid_fwd[k] + rf)
        write_flo(os.path.join(out, f"full_bwd_{k:03d}.flo"), result.rigid_bwd[k] + rb)
        write_pnm(os.path.join(out, f"mask_fwd_{k:03d}.pgm"), result.mask_fwd[k])
        write_pnm(os.path.join(out, f"mask_bwd_{k:03d}.pgm"), result.mask_bwd[k])
    write_csv(os.path.join(out, "trace.csv"), TRACE_COLUMNS, result.trace)


def cmd_optimize(args):
    scene_dir = args.scene
    if not os.path.isfile(os.path.join(scene_dir, "manifest.json")):
        raise UsageError(f"not a scene directory: {scene_dir}")
    cfg = OptimizerConfig()
    if args.config:
        cfg = parse_optimizer_config(_read_text(_require_file(args.config, "optimizer config")))
    stages = STAGES if args.stage == "both" else (args.stage,)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    out = _prepare_dir(_output_dir(args, "run"))
    ckpt = os.path.join(out, CHECKPOINT)
    run = None
    if args.resume:
        if not os.path.isfile(ckpt):
            raise UsageError(f"--resume: no checkpoint in {out}")
        run = load_checkpoint(ckpt)
    marker = os.path.join(out, FAILED_MARKER)
    if os.path.exists(marker):
        os.remove(marker)

    scene = read_scene(scene_dir)
    data = SceneData.from_scene(scene)
    start = time.perf_counter()
    try:
        result, run = run_optimization(
            data,
            cfg,
            stages,
            run=run,
            threads=args.threads,
            stop_after=args.stop_after,
            checkpoint=lambda r: save_checkpoint(ckpt, r),
            log=None if args.quiet else print,
        )
    except (DivergenceError, NonFiniteGradientError) as exc:
        with open(marker, "w") as f:
            f.write(f"{type(exc).__name__}: {exc}\n")
        raise
    save_checkpoint(ckpt, run)
    summary = {
        "scene": os.path.abspath(scene_dir),
        "stages": list(stages),
        "completed": result.completed,
        "iterations": run.global_iter,
        "final": dict(zip(TRACE_COLUMNS, result.trace[-1])) if result.trace else {},
    }
    if not args.reproducible:
        summary["threads"] = args.threads
        summary["seconds"] = round(time.perf_counter() - start, 3)
    if result.completed:
        _write_results(out, result)
    else:
        write_csv(os.path.join(out, "trace.csv"), TRACE_COLUMNS, result.trace)
    with open(os.path.join(out, "run.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    state = "finished" if result.completed else f"stopped after {run.global_iter} iterations"
    print(f"optimization {state}; results in {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluation


def _read_depth(path):
    _require_file(path, "depth file")
    if path.endswith(".pfm"):
        return read_pfm(path)
    return read_pnm(path)[..., 0]


def _read_mask(path):
    _require_file(path, "mask file")
    return read_pnm(path)[..., 0]


def _pairwise(pred, gt, what):
    if len(pred) != len(gt):
        raise UsageError(f"{what}: {len(pred)} predictions but {len(gt)} ground-truth files")
    return list(zip(pred, gt))


def cmd_eval_depth(args):
    pairs = _pairwise(args.pred, args.gt, "eval-depth")
    valid = args.valid or []
    if valid and len(valid) != len(pairs):
        raise UsageError("eval-depth: --valid needs one mask per prediction")
    for p, g in pairs:
        _require_file(p, "prediction")
        _require_file(g, "ground truth")
    rows = []
    for i, (p, g) in enumerate(pairs):
        m = _read_mask(valid[i]) if valid else None
        dm = depth_metrics(_read_depth(p), _read_depth(g), m, cap=args.cap, median_scale=not args.no_median_scaling)
        rows.append(dm.as_dict())
    names = list(DepthMetrics.__dataclass_fields__)
    mean = {k: float(np.mean([r[k] for r in rows])) for k in names}
    print(" ".join(f"{k}={mean[k]:.6g}" for k in names))
    _write_report(args.csv, ["image"] + names, [[i] + [r[k] for k in names] for i, r in enumerate(rows)]
                  + [["mean"] + [mean[k] for k in names]])
    return EXIT_OK


def cmd_eval_flow(args):
    pairs = _pairwise(args.pred, args.gt, "eval-flow")
    occ = args.occ or []
    if occ and len(occ) != len(pairs):
        raise UsageError("eval-flow: --occ needs one mask per prediction")
    rigid = args.gt_rigid or []
    if rigid and len(rigid) != len(pairs):
        raise UsageError("eval-flow: --gt-rigid needs one flow per prediction")
    for p, g in pairs:
        _require_file(p, "prediction")
        _require_file(g, "ground truth")
    rows = []
    hist_rows = []
    for i, (p, g) in enumerate(pairs):
        pred, gt = read_flo(p), read_flo(g)
        o = _read_mask(occ[i]) if occ else np.zeros(gt.shape[:2])
        noc, all_ = flow_epe_noc_all(pred, gt, o)
        rows.append([i, noc, all_])
        if rigid:
            bins = [float(b) for b in args.bins.split(",")]
            for (lo, hi), e in epe_vs_residual_histogram(pred, gt, read_flo(_require_file(rigid[i], "rigid flow")), bins).items():
                hist_rows.append([i, lo, hi, e])
    noc = float(np.mean([r[1] for r in rows]))
    all_ = float(np.mean([r[2] for r in rows]))
    print(f"epe_noc={noc:.6g} epe_all={all_:.6g}")
    for _, lo, hi, e in hist_rows:
        print(f"residual [{lo:g}, {hi:g}): epe={e:.6g}")
    _write_report(args.csv, ["image", "epe_noc", "epe_all"], rows + [["mean", noc, all_]])
    if args.hist_csv:
        write_csv(args.hist_csv, ["image", "lo", "hi", "epe"], hist_rows)
    return EXIT_OK


def _snippets(positions_pred, positions_gt, length):
    n = len(positions_gt)
    if n <= length:
        return positions_pred[None], positions_gt[None]
    idx = [range(i, i + length) for i in range(n - length + 1)]
    return (np.stack([positions_pred[list(r)] for r in idx]), np.stack([positions_gt[list(r)] for r in idx]))


def cmd_eval_pose(args):
    pred = read_poses(_require_file(args.pred, "prediction"))
    gt = read_poses(_require_file(args.gt, "ground truth"))
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"{len(pred)} predicted poses vs {len(gt)} ground-truth poses")
    if args.absolute:
        pp, gp = pred[:, :, 3], gt[:, :, 3]
    else:
        pp, gp = positions_from_relative(pred), positions_from_relative(gt)
    sp, sg = _snippets(pp, gp, args.snippet)
    mean, std = ate(sp, sg)
    print(f"ate={mean:.6g} std={std:.6g} snippets={len(sp)}")
    _write_report(args.csv, ["ate_mean", "ate_std", "snippets"], [[mean, std, len(sp)]])
    return EXIT_OK


# --------------------------------------------------------------------------
# viz-flow and gradcheck


def cmd_viz_flow(args):
    flow = read_flo(_require_file(args.flow, "flow file"))
    if args.max_magnitude is not None and args.max_magnitude <= 0:
        raise UsageError("--max-magnitude must be positive")
    img = flow_to_color(flow, max_magnitude=args.max_magnitude, percentile=args.percentile)
    out = args.out or os.path.splitext(args.flow)[0] + ".ppm"
    write_pnm(out, img)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    ops = args.op or None
    if ops:
        for op in ops:
            if op not in AUDITS:
                raise UsageError(f"unknown op {op!r}; choose from {', '.join(AUDITS)}")
    if args.corrupt and args.corrupt not in AUDITS:
        raise UsageError(f"unknown op {args.corrupt!r}")
    reports = run_gradcheck(ops, trials=args.trials, seed=args.seed, corrupt=args.corrupt)
    print(format_report(reports, per_trial=bool(ops) or args.per_trial))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="warpgeo", description="Rigid-flow warping, view-synthesis losses and direct optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="render a synthetic scene with ground truth")
    g.add_argument("--config", help="scene config file (defaults are used when omitted)")
    g.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/scene)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--check", action="store_true", help="run the scene self-check; exit 1 if it fails")
    g.set_defaults(func=cmd_gen_scene)

    o = sub.add_parser("optimize", help="recover depth, pose and flows from a scene directory")
    o.add_argument("scene", help="scene directory written by gen-scene")
    o.add_argument("--config", help="optimizer config file")
    o.add_argument("--out", help=f"results directory (default: ${OUTPUT_ROOT_ENV}/run)")
    o.add_argument("--stage", choices=("rigid", "residual", "both"), default="both")
    o.add_argument("--threads", type=int, default=1, help="worker threads for frame pairs")
    o.add_argument("--reproducible", action="store_true", help="omit wall-clock fields so reruns are byte-identical")
    o.add_argument("--resume", action="store_true", help="continue from the checkpoint in the results directory")
    o.add_argument("--stop-after", type=int, metavar="N", help="stop after N iterations in total, leaving a checkpoint")
    o.add_argument("--quiet", action="store_true")
    o.set_defaults(func=cmd_optimize)

    d = sub.add_parser("eval-depth", help="depth error metrics")
    d.add_argument("--pred", nargs="+", required=True, help="predicted depth maps (PFM or PGM)")
    d.add_argument("--gt", nargs="+", required=True, help="ground-truth depth maps")
    d.add_argument("--valid", nargs="+", help="optional validity masks (PGM)")
    d.add_argument("--cap", type=float, default=80.0)
    d.add_argument("--no-median-scaling", action="store_true")
    d.add_argument("--csv", help="write per-image metrics as CSV")
    d.set_defaults(func=cmd_eval_depth)

    f = sub.add_parser("eval-flow", help="flow end-point error")
    f.add_argument("--pred", nargs="+", required=True, help="predicted .flo files")
    f.add_argument("--gt", nargs="+", required=True, help="ground-truth .flo files")
    f.add_argument("--occ", nargs="+", help="occlusion masks (PGM, nonzero = occluded)")
    f.add_argument("--gt-rigid", nargs="+", help="ground-truth rigid flows for the residual-magnitude histogram")
    f.add_argument("--bins", default="0,1,2,4,8,16,1e9", help="histogram bin edges")
    f.add_argument("--csv", help="write per-image EPE as CSV")
    f.add_argument("--hist-csv", help="write the residual histogram as CSV")
    f.set_defaults(func=cmd_eval_flow)

    e = sub.add_parser("eval-pose", help="scale-aligned trajectory error")
    e.add_argument("--pred", required=True, help="predicted pose text file")
    e.add_argument("--gt", required=True, help="ground-truth pose text file")
    e.add_argument("--absolute", action="store_true", help="files hold camera-to-world poses, not frame-to-frame motion")
    e.add_argument("--snippet", type=int, default=5, help="frames per snippet")
    e.add_argument("--csv", help="write the result as CSV")
    e.set_defaults(func=cmd_eval_pose)

    v = sub.add_parser("viz-flow", help="render a .flo file with the Middlebury color wheel")
    v.add_argument("flow")
    v.add_argument("--out", help="output PPM (default: next to the input)")
    v.add_argument("--max-magnitude", type=float, help="absolute normalization instead of the percentile")
    v.add_argument("--percentile", type=float, default=99.0)
    v.set_defaults(func=cmd_viz_flow)

    c = sub.add_parser("gradcheck", help="finite-difference audit of all analytic gradients")
    c.add_argument("--op", action="append", help="audit only this op (repeatable); prints per-trial errors")
    c.add_argument("--trials", type=int, help="instances per op (default 20; 3 for the full objective)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--per-trial", action="store_true")
    c.add_argument("--corrupt", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "snippet", 2) < 2:
        print("error: --snippet must be at least 2", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidSpecError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NonFiniteGradientError) as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (DimensionMismatchError, EmptyRegionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WarpGeoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
