"""Joint objective over frame pairs, both directions and pyramid scales.

For a pair ``<t, s>`` the forward direction warps ``I_s`` into frame ``t``
with flows predicted from ``D_t`` and ``T_{t->s}``; the backward direction
warps ``I_t`` into frame ``s`` with ``D_s`` and the inverse pose. The five
terms per direction are

* ``l_rw``: photometric loss of the rigid-flow warp (warp validity only)
* ``l_ds``: edge-aware smoothness of the depth map
* ``l_fw``: photometric loss of the full-flow warp, weighted by the inlier mask
* ``l_fs``: edge-aware smoothness of the full flow, everywhere
* ``l_gc``: inlier-weighted forward-backward flow difference
"""

from dataclasses import dataclass, replace

import numpy as np

from .consistency import ConsistencyParams, flow_difference, flow_difference_vjp, inlier_mask
from .errors import DegenerateMaskError
from .geometry import euler_to_rotation, pose_grad_from_rt, rigid_flow_rt, rigid_flow_rt_vjp
from .grids import avg_pool2_adjoint, build_pyramid
from .losses import (
    TERMS,
    LossBreakdown,
    LossWeights,
    edge_aware_smoothness_grad,
    geometric_consistency_loss_grad,
    photometric_loss_grad,
)
from .warping import ImageWarp

STAGE_TERMS = {"rigid": ("l_rw", "l_ds"), "residual": ("l_fw", "l_fs", "l_gc")}


@dataclass
class FramePair:
    """Predictions for one target/source pair at a single resolution.

    ``pose`` is the 6-vector ``(alpha, beta, gamma, tx, ty, tz)`` of
    ``T_{t->s}``; residual flows are given for both directions.
    """

    target: np.ndarray
    source: np.ndarray
    depth_t: np.ndarray
    depth_s: np.ndarray
    pose: np.ndarray
    residual_fwd: np.ndarray
    residual_bwd: np.ndarray


@dataclass
class PairEvaluation:
    parts: dict  # {"fwd": {term: value}, "bwd": {...}}
    grads: dict  # depth_t, depth_s, pose, residual_fwd, residual_bwd
    rigid_fwd: np.ndarray
    rigid_bwd: np.ndarray
    full_fwd: np.ndarray
    full_bwd: np.ndarray
    mask_fwd: np.ndarray
    mask_bwd: np.ndarray

    def total(self, weights):
        return sum(weights.combine(self.parts[d]) for d in ("fwd", "bwd"))


def _guarded(fn, *args, **kwargs):
    # a term with no contributing pixel adds nothing to the objective
    try:
        return fn(*args, **kwargs)
    except DegenerateMaskError:
        return 0.0, 0.0


def evaluate_pair(
    pair,
    K,
    weights=LossWeights(),
    consistency=ConsistencyParams(),
    stages=("rigid", "residual"),
    mask_mode="adaptive",
    masks=None,
    need_grad=True,
):
    """Evaluate all requested loss terms of one pair at one scale.

    Args:
        pair: :class:`FramePair`.
        K: intrinsics of this scale.
        stages: subset of ``("rigid", "residual")`` selecting the terms.
        mask_mode: ``"adaptive"`` uses the inlier test, ``"naive"`` forces
            the mask to all ones.
        masks: optional fixed ``(mask_fwd, mask_bwd)`` overriding both modes.
        need_grad: compute gradients w.r.t. depths, pose and residuals.

    Returns:
        :class:`PairEvaluation`. Masks are treated as constants when
        differentiating.
    """
    pose = np.asarray(pair.pose, dtype=np.float64)
    R = euler_to_rotation(pose[:3])
    t = pose[3:]
    Ri, ti = R.T, -R.T @ t
    it, is_ = pair.target, pair.source
    rig_f, rv_f = rigid_flow_rt(pair.depth_t, R, t, K)
    rig_b, rv_b = rigid_flow_rt(pair.depth_s, Ri, ti, K)

    parts = {"fwd": dict.fromkeys(TERMS, 0.0), "bwd": dict.fromkeys(TERMS, 0.0)}
    g_rig = {"fwd": np.zeros_like(rig_f), "bwd": np.zeros_like(rig_b)}
    g_depth = {"fwd": np.zeros_like(pair.depth_t), "bwd": np.zeros_like(pair.depth_s)}
    g_full = {"fwd": np.zeros_like(rig_f), "bwd": np.zeros_like(rig_b)}
    dirs = {
        "fwd": (it, is_, pair.depth_t, rig_f, rv_f),
        "bwd": (is_, it, pair.depth_s, rig_b, rv_b),
    }
    alpha = weights.alpha_ssim

    if "rigid" in stages:
        for d, (tgt, src, depth, rig, rv) in dirs.items():
            warp = ImageWarp(src, rig)
            loss, gw = _guarded(photometric_loss_grad, tgt, warp.result, rv, alpha, need_grad=need_grad)
            parts[d]["l_rw"] = loss
            l_ds, g_ds = edge_aware_smoothness_grad(depth, tgt)
            parts[d]["l_ds"] = l_ds
            if need_grad:
                g_rig[d] += warp.flow_grad(gw)
                g_depth[d] += weights.lambda_ds * g_ds

    full = {"fwd": rig_f + pair.residual_fwd, "bwd": rig_b + pair.residual_bwd}
    mask = {"fwd": None, "bwd": None}
    if "residual" in stages:
        other = {"fwd": "bwd", "bwd": "fwd"}
        delta = {}
        for d in dirs:
            delta[d], dvalid = flow_difference(full[d], full[other[d]])
            if masks is not None:
                mask[d] = np.asarray(masks[0 if d == "fwd" else 1], dtype=np.float64)
            elif mask_mode == "naive":
                mask[d] = np.ones(dvalid.shape)
            elif mask_mode == "adaptive":
                mask[d] = inlier_mask(delta[d], full[d], consistency, dvalid)
            else:
                raise ValueError(f"unknown mask mode {mask_mode!r}")
        for d, (tgt, src, depth, rig, rv) in dirs.items():
            warp = ImageWarp(src, full[d])
            loss, gw = _guarded(
                photometric_loss_grad, tgt, warp.result, mask[d] * rv, alpha, need_grad=need_grad
            )
            parts[d]["l_fw"] = loss
            l_fs, g_fs = edge_aware_smoothness_grad(full[d], tgt)
            parts[d]["l_fs"] = l_fs
            l_gc, g_gc = _guarded(geometric_consistency_loss_grad, delta[d], mask[d])
            parts[d]["l_gc"] = l_gc
            if need_grad:
                g_full[d] += warp.flow_grad(gw)
                g_full[d] += weights.lambda_fs * g_fs
                if weights.lambda_gc:
                    g_own, g_other = flow_difference_vjp(
                        full[d], full[other[d]], weights.lambda_gc * g_gc
                    )
                    g_full[d] += g_own
                    g_full[other[d]] += g_other

    grads = {}
    if need_grad:
        for d in dirs:
            g_rig[d] += g_full[d]
        gd_t, gR, gt = rigid_flow_rt_vjp(pair.depth_t, R, t, K, g_rig["fwd"])
        gd_s, gRi, gti = rigid_flow_rt_vjp(pair.depth_s, Ri, ti, K, g_rig["bwd"])
        grads = {
            "depth_t": gd_t + g_depth["fwd"],
            "depth_s": gd_s + g_depth["bwd"],
            "pose": pose_grad_from_rt(pose[:3], t, gR, gt, gRi, gti),
            "residual_fwd": g_full["fwd"],
            "residual_bwd": g_full["bwd"],
        }
    return PairEvaluation(
        parts, grads, rig_f, rig_b, full["fwd"], full["bwd"], mask["fwd"], mask["bwd"]
    )


def pyramid_pair(pair, num_scales):
    """Per-scale :class:`FramePair` list built by 2x2 average pooling."""
    tp = build_pyramid(pair.target, num_scales)
    sp = build_pyramid(pair.source, num_scales)
    dt = build_pyramid(pair.depth_t, num_scales)
    ds = build_pyramid(pair.depth_s, num_scales)
    rf = build_pyramid(pair.residual_fwd, num_scales, flow=True)
    rb = build_pyramid(pair.residual_bwd, num_scales, flow=True)
    return [
        replace(
            pair,
            target=tp[l],
            source=sp[l],
            depth_t=dt[l],
            depth_s=ds[l],
            residual_fwd=rf[l],
            residual_bwd=rb[l],
        )
        for l in range(num_scales)
    ]


def _pull_back(grad, shapes, level, flow=False):
    for l in range(level, 0, -1):
        grad = avg_pool2_adjoint(grad, shapes[l - 1])
        if flow:
            grad = 0.5 * grad
    return grad


def total_loss(
    pairs,
    K,
    weights=LossWeights(),
    consistency=ConsistencyParams(),
    mask_mode="adaptive",
    need_grad=False,
    executor=None,
    stages=("rigid", "residual"),
    num_scales=None,
):
    """Sum of all terms over scales, pairs and both directions.

    Args:
        pairs: list of full-resolution :class:`FramePair`.
        K: full-resolution intrinsics.
        executor: optional ``concurrent.futures`` executor used to evaluate
            pairs concurrently; results are always reduced in pair order.
        stages: loss stages to include (see :func:`evaluate_pair`).
        num_scales: overrides ``weights.num_scales``.

    Returns:
        :class:`LossBreakdown`, or ``(breakdown, grads)`` when ``need_grad``
        is set, with ``grads`` a list (one dict per pair) at full resolution.
    """
    n = num_scales or weights.num_scales
    per_scale = []
    sums = dict.fromkeys(TERMS, 0.0)
    total = 0.0
    pyramids = [pyramid_pair(p, n) for p in pairs]
    grads = [None] * len(pairs)
    for level in range(n):
        k_l = K.at_level(level)

        def run(pyr, k_l=k_l, level=level):
            return evaluate_pair(pyr[level], k_l, weights, consistency, stages=stages,
                                 mask_mode=mask_mode, need_grad=need_grad)

        results = list(executor.map(run, pyramids)) if executor else [run(p) for p in pyramids]
        scale_parts = dict.fromkeys(TERMS, 0.0)
        scale_total = 0.0
        for i, ev in enumerate(results):
            for d in ("fwd", "bwd"):
                for term in TERMS:
                    scale_parts[term] += ev.parts[d][term]
                scale_total += weights.combine(ev.parts[d])
            if need_grad:
                shapes = [p.depth_t.shape for p in pyramids[i]]
                fshapes = [p.residual_fwd.shape for p in pyramids[i]]
                g = {
                    "depth_t": _pull_back(ev.grads["depth_t"], shapes, level),
                    "depth_s": _pull_back(ev.grads["depth_s"], shapes, level),
                    "pose": ev.grads["pose"],
                    "residual_fwd": _pull_back(ev.grads["residual_fwd"], fshapes, level, True),
                    "residual_bwd": _pull_back(ev.grads["residual_bwd"], fshapes, level, True),
                }
                if grads[i] is None:
                    grads[i] = g
                else:
                    grads[i] = {k: grads[i][k] + g[k] for k in g}
        for term in TERMS:
            sums[term] += scale_parts[term]
        total += scale_total
        per_scale.append(dict(scale_parts, total=scale_total))
    breakdown = LossBreakdown(**sums, total=total, per_scale=per_scale)
    if need_grad:
        return breakdown, grads
    return breakdown
