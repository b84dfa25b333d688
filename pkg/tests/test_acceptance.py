"""Acceptance criteria A1 to A10, each reported as one pass/fail line."""

import json
import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpgeo.cli import main
from warpgeo.consistency import ConsistencyParams, flow_difference, inlier_mask
from warpgeo.fileio import read_flo, read_pfm, read_pnm, read_poses, write_flo, write_pfm, write_pnm, write_poses
from warpgeo.geometry import CameraIntrinsics, PoseSE3, euler_to_rotation, rotation_angle, rigid_flow
from warpgeo.gradcheck import TOLERANCE, run_gradcheck
from warpgeo.losses import LossWeights, geometric_consistency_loss, photometric_loss
from warpgeo.metrics import ate, depth_metrics, flow_epe
from warpgeo.objective import total_loss
from warpgeo.optimizer import AdamParams, OptimizerConfig, SceneData, StageConfig, run_optimization
from warpgeo.scenes import (
    LayoutSpec,
    MovingObject,
    SceneSpec,
    TextureSpec,
    generate_scene,
    scene_config_text,
    write_scene,
)
from warpgeo.warping import WarpResult

from test_objective import K as SMALL_K
from test_objective import random_pair, weighted_sum

SLANTED = LayoutSpec("slanted_plane", 10.0, (0.3, 0.1))
TEXTURE = TextureSpec(period_min=12, period_max=36)
MARGIN = 4  # interior = image minus a 4 px border


def interior(shape):
    m = np.zeros(shape, dtype=bool)
    m[MARGIN:-MARGIN, MARGIN:-MARGIN] = True
    return m


# --------------------------------------------------------------------------


def test_a1_gradient_audit(criterion):
    ops = ["bilinear_sample", "inverse_warp", "rigid_flow", "ssim", "photometric", "smoothness", "consistency"]
    start = time.process_time()
    reports = run_gradcheck(ops, trials=20, seed=0)
    seconds = time.process_time() - start
    worst = max(r.max_error for r in reports)
    ok = all(r.passed and len(r.trial_errors) >= 20 for r in reports) and seconds < 60
    criterion("A1", ok, f"max rel err {worst:.2e} (< {TOLERANCE:g}) over 20 trials x {len(ops)} ops in {seconds:.1f} s")
    assert ok


def test_a2_closed_form_rigid_flow(criterion):
    K = CameraIntrinsics(100.0, 100.0, 47.5, 31.5)
    depth = np.full((64, 96), 10.0)
    uniform, _ = rigid_flow(depth, PoseSE3(translation=(1, 0, 0)), K)
    err_t = float(np.max(np.abs(uniform - [10.0, 0.0])))
    still, _ = rigid_flow(depth, PoseSE3(), K)
    rot = PoseSE3(rotation=(0.01, -0.02, 0.015))
    r1, _ = rigid_flow(depth, rot, K)
    r2, _ = rigid_flow(np.random.default_rng(0).uniform(2, 50, depth.shape), rot, K)
    err_r = float(np.max(np.abs(r1 - r2)))
    ok = err_t < 1e-9 and np.all(still == 0) and err_r < 1e-9
    criterion("A2", ok, f"translation err {err_t:.1e}, identity exactly 0: {bool(np.all(still == 0))}, "
              f"rotation depth dependence {err_r:.1e}")
    assert ok


@pytest.mark.slow
def test_a3_pose_recovery(criterion, tmp_path):
    gt_pose = PoseSE3((0.0, 0.02, 0.0), (0.5, 0.1, 0.2))
    spec = SceneSpec(poses=(PoseSE3(), gt_pose), layout=SLANTED, texture=TEXTURE, seed=1)
    (tmp_path / "scene.cfg").write_text(scene_config_text(spec))
    (tmp_path / "opt.cfg").write_text(
        "[rigid]\nlr = 0.005\nmax_iters = 600\nnum_levels = 3\noptimize_depth = no\n"
        "init_depth = gt\ninit_pose = perturb 0.05 0.2\n[loss]\nnum_scales = 1\n[run]\nseed = 0\n"
    )
    scene, out = tmp_path / "scene", tmp_path / "run"
    assert main(["gen-scene", "--config", str(tmp_path / "scene.cfg"), "--out", str(scene)]) == 0
    start = time.process_time()
    code = main(["optimize", str(scene), "--config", str(tmp_path / "opt.cfg"), "--out", str(out),
                 "--stage", "rigid", "--quiet"])
    seconds = time.process_time() - start
    est = read_poses(out / "poses.txt")[0]
    iters = json.loads((out / "run.json").read_text())["iterations"]
    rot_err = rotation_angle(est[:, :3] @ gt_pose.R.T)
    trans_err = float(np.linalg.norm(est[:, 3] - gt_pose.t))
    mean_depth = float(np.mean(read_pfm(scene / "depth_000.pfm")))
    ok = code == 0 and rot_err < 1e-2 and trans_err < 0.01 * mean_depth and iters <= 2000 and seconds < 60
    criterion("A3", ok, f"rotation err {rot_err:.4f} rad, translation err {trans_err:.4f} "
              f"(limit {0.01 * mean_depth:.3f}), {iters} iterations, {seconds:.1f} s")
    assert ok


@pytest.mark.slow
def test_a4_depth_recovery(criterion):
    spec = SceneSpec(poses=(PoseSE3(), PoseSE3((0.0, 0.02, 0.0), (1.0, 0.1, 0.2))), layout=SLANTED,
                     texture=TEXTURE, seed=1)
    scene = generate_scene(spec)
    cfg = OptimizerConfig(
        rigid=StageConfig(AdamParams(lr=0.01, max_iters=500), num_levels=3, optimize_pose=False,
                          init_depth="flat 6", init_pose="gt"),
        weights=LossWeights(num_scales=1, lambda_ds=0.05),
    )
    start = time.process_time()
    res, run = run_optimization(SceneData.from_scene(scene), cfg, stages=("rigid",))
    seconds = time.process_time() - start
    inner = interior(res.depth[0].shape)
    medians, means = [], []
    for pred, gt in zip(res.depth, scene.gt_depth):
        rel = np.abs(pred - gt) / gt
        medians.append(float(np.median(rel[inner])))
        means.append(depth_metrics(pred, gt, valid=inner, median_scale=False).abs_rel)
    ok = max(medians) < 0.05 and seconds < 300
    criterion("A4", ok, f"median abs_rel {max(medians):.4f} (mean {max(means):.4f}) after "
              f"{run.global_iter} iterations in {seconds:.1f} s")
    assert ok


# --------------------------------------------------------------------------
# moving-object scene shared by A5 and A6


def object_scene():
    obj_tex = TextureSpec(components=4, period_min=8, period_max=20, amplitude=0.25, offset=0.25)
    spec = SceneSpec(
        poses=(PoseSE3(), PoseSE3((0.0, 0.005, 0.0), (0.5, 0.0, 0.0))),
        layout=LayoutSpec("fronto_plane", 10.0),
        texture=TextureSpec(period_min=12, period_max=36, offset=0.55, amplitude=0.45),
        objects=(MovingObject((30, 16, 32, 28), (5, 2), texture=obj_tex),),
        seed=2,
    )
    return generate_scene(spec)


def residual_run(scene, **weights):
    mode = weights.pop("mask_mode", "adaptive")
    cfg = OptimizerConfig(
        rigid=StageConfig(AdamParams(lr=0.01, max_iters=0), num_levels=1, optimize_depth=False,
                          optimize_pose=False, init_depth="gt", init_pose="gt"),
        residual=StageConfig(AdamParams(lr=0.05, max_iters=400), num_levels=3),
        weights=LossWeights(num_scales=1, **weights),
        mask_mode=mode,
    )
    res, _ = run_optimization(SceneData.from_scene(scene), cfg)
    return res


@pytest.fixture(scope="module")
def moving():
    scene = object_scene()
    return scene, residual_run(scene)


@pytest.mark.slow
def test_a5_residual_stage(criterion, moving):
    scene, res = moving
    pair = scene.pairs[0]
    obj = scene.labels[0] == 0
    full = res.rigid_fwd[0] + res.residual_fwd[0]
    rigid_epe = flow_epe(res.rigid_fwd[0], pair.full_fwd, obj)
    full_epe = flow_epe(full, pair.full_fwd, obj)
    outside = float(np.mean(np.linalg.norm(res.residual_fwd[0], axis=-1)[~obj]))
    ok = full_epe <= 0.5 * rigid_epe and outside < 0.2
    criterion("A5", ok, f"object EPE {rigid_epe:.3f} rigid-only -> {full_epe:.3f} full "
              f"({full_epe / rigid_epe:.0%}), residual outside object {outside:.3f} px")
    assert ok


@pytest.mark.slow
def test_a6_consistency_ablation(criterion, moving):
    scene, res = moving
    gt = scene.pairs[0].full_fwd

    def epe_all(r):
        return flow_epe(r.rigid_fwd[0] + r.residual_fwd[0], gt)

    default = epe_all(res)
    no_gc = epe_all(residual_run(scene, lambda_gc=0.0))
    naive = epe_all(residual_run(scene, mask_mode="naive"))
    ok = default < no_gc and default < naive
    criterion("A6", ok, f"EPE-All adaptive GC {default:.3f} vs no GC {no_gc:.3f} vs naive {naive:.3f}")
    assert ok


def test_a7_occlusion_mask_quality(criterion):
    params = ConsistencyParams(alpha_px=3.0, beta_rel=0.05)
    occluded = detected = 0
    for vel in [(6, 0), (4, 3), (0, 5), (-5, -2)]:
        spec = SceneSpec(num_frames=3, poses=(PoseSE3(),) * 3, layout=LayoutSpec("fronto_plane", 10.0),
                         objects=(MovingObject((30, 16, 28, 24), vel),), seed=0)
        for p in generate_scene(spec).pairs:
            for ff, fb, occ in ((p.full_fwd, p.full_bwd, p.occlusion_fwd), (p.full_bwd, p.full_fwd, p.occlusion_bwd)):
                delta, valid = flow_difference(ff, fb)
                mask = inlier_mask(delta, ff, params, valid)
                occluded += int(np.sum(occ > 0))
                detected += int(np.sum(mask[occ > 0] == 0))
    recall = detected / occluded

    spec = SceneSpec(poses=(PoseSE3(), PoseSE3((0.01, 0.02, 0.0), (0.5, 0.1, 0.2))),
                     layout=LayoutSpec("slanted_plane", 10.0, (0.2, 0.1)), seed=0)
    p = generate_scene(spec).pairs[0]
    delta, valid = flow_difference(p.full_fwd, p.full_bwd)
    mask = inlier_mask(delta, p.full_fwd, params, valid)
    h, w = mask.shape
    y, x = np.mgrid[0:h, 0:w]
    tx, ty = x + p.full_fwd[..., 0], y + p.full_fwd[..., 1]
    inside = (tx >= 1) & (tx <= w - 2) & (ty >= 1) & (ty <= h - 2)  # lands inside the other frame
    inlier_rate = float(np.mean(mask[inside]))
    ok = recall >= 0.9 and inlier_rate >= 0.99
    criterion("A7", ok, f"occlusion recall {recall:.3f} over {occluded} px, static interior inlier rate {inlier_rate:.4f}")
    assert ok


def test_a8_metric_exactness(criterion):
    gt = np.random.default_rng(0).uniform(1, 50, (20, 30))
    abs_rel = depth_metrics(1.2 * gt, gt, median_scale=False).abs_rel
    f = np.random.default_rng(1).normal(size=(20, 30, 2))
    epe = flow_epe(f + [3.0, 4.0], f)
    traj = np.cumsum(np.random.default_rng(2).normal(size=(5, 3)), axis=0)
    ate_mean, _ = ate(2 * traj, traj)
    errs = (abs(abs_rel - 0.2), abs(epe - 5.0), abs(ate_mean))
    ok = max(errs) <= 1e-12
    criterion("A8", ok, f"abs_rel {abs_rel!r}, EPE {epe!r}, ATE {ate_mean:.1e}")
    assert ok


def test_a9_format_fidelity(criterion, tmp_path):
    rng = np.random.default_rng(0)
    flow = rng.normal(size=(7, 9, 2)).astype(np.float32)
    grid = rng.normal(size=(7, 9)).astype(np.float32)
    rgb = rng.integers(0, 256, (7, 9, 3)) / 255.0
    gray = rng.integers(0, 256, (7, 9)) / 255.0
    poses = rng.normal(size=(4, 3, 4))
    write_flo(tmp_path / "a.flo", flow)
    write_pfm(tmp_path / "a.pfm", grid)
    write_pnm(tmp_path / "a.ppm", rgb)
    write_pnm(tmp_path / "a.pgm", gray)
    write_poses(tmp_path / "a.txt", poses)
    checks = {
        "flo": np.array_equal(read_flo(tmp_path / "a.flo"), flow),
        "pfm": np.array_equal(read_pfm(tmp_path / "a.pfm"), grid),
        "ppm": np.array_equal(read_pnm(tmp_path / "a.ppm"), rgb),
        "pgm": np.array_equal(read_pnm(tmp_path / "a.pgm")[..., 0], gray),
        "poses": np.array_equal(read_poses(tmp_path / "a.txt"), poses),
    }
    spec = SceneSpec(num_frames=3, poses=(PoseSE3(), PoseSE3(translation=(0.2, 0, 0)), PoseSE3(translation=(0.4, 0, 0))),
                     objects=(MovingObject((10, 10, 12, 8), (2, 1)),), seed=5)
    dirs = []
    for name in ("s1", "s2"):
        write_scene(generate_scene(spec), tmp_path / name)
        dirs.append({f: (tmp_path / name / f).read_bytes() for f in sorted(os.listdir(tmp_path / name))})
    checks["scene"] = dirs[0] == dirs[1]
    ok = all(checks.values())
    criterion("A9", ok, ", ".join(f"{k} {'exact' if v else 'DIFFERS'}" for k, v in checks.items()))
    assert ok


@settings(max_examples=100, database=None)
@given(st.integers(0, 2**31), st.floats(0, 2), st.floats(0, 2), st.floats(0, 2), st.sampled_from([1, 2]))
def check_decomposition(seed, lds, lfs, lgc, scales):
    w = LossWeights(lambda_ds=lds, lambda_fs=lfs, lambda_gc=lgc, num_scales=scales)
    b = total_loss([random_pair(seed)], SMALL_K, w)
    DECOMP.append(abs(b.total - weighted_sum(b, w)))


DECOMP = []


def test_a10_loss_decomposition(criterion):
    DECOMP.clear()
    check_decomposition()
    worst = max(DECOMP)
    rng = np.random.default_rng(3)
    independent = True
    for _ in range(100):
        t, b = rng.random((6, 8, 3)), rng.random((6, 8, 3))
        mask = (rng.random((6, 8)) > 0.3).astype(float)
        delta = rng.normal(size=(6, 8, 2))
        ref = photometric_loss(t, WarpResult(b, np.ones((6, 8))), mask), geometric_consistency_loss(delta, mask)
        b2, d2 = b.copy(), delta.copy()
        off = mask == 0
        b2[off] = rng.random((int(off.sum()), 3))
        d2[off] = rng.normal(size=(int(off.sum()), 2)) * 100
        out = photometric_loss(t, WarpResult(b2, np.ones((6, 8))), mask), geometric_consistency_loss(d2, mask)
        independent &= out == ref
    ok = len(DECOMP) >= 100 and worst <= 1e-12 and independent
    criterion("A10", ok, f"max |total - weighted sum| {worst:.1e} over {len(DECOMP)} instances, "
              f"masked pixels {'independent' if independent else 'LEAK'}")
    assert ok
