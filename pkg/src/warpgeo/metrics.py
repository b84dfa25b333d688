"""Depth, optical-flow and trajectory error measures."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateMaskError, DimensionMismatchError, EmptyRegionError

DEPTH_FLOOR = 1e-3


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self):
        return asdict(self)


def depth_metrics(pred, gt, valid=None, cap=80.0, median_scale=True):
    """Standard monocular depth errors over ``valid`` pixels.

    Args:
        pred, gt: depth maps of equal shape.
        valid: optional boolean/float mask; defaults to ``gt > 0``.
        cap: both maps are clamped to ``[DEPTH_FLOOR, cap]`` before scoring.
        median_scale: rescale ``pred`` by ``median(gt) / median(pred)`` first.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    m = gt > 0
    if valid is not None:
        valid = np.asarray(valid)
        if valid.shape != gt.shape:
            raise DimensionMismatchError("valid mask does not match the depth shape")
        m &= valid > 0
    if not np.any(m):
        raise EmptyRegionError("depth_metrics: no valid pixel")
    p, g = pred[m], gt[m]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, DEPTH_FLOOR, cap)
    g = np.clip(g, DEPTH_FLOOR, cap)
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )


def flow_epe(pred, gt, region=None):
    """Mean end-point error over ``region`` (all pixels when omitted)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    err = np.linalg.norm(pred - gt, axis=-1)
    if region is None:
        return float(np.mean(err))
    region = np.asarray(region)
    if region.shape != err.shape:
        raise DimensionMismatchError("region mask does not match the flow shape")
    sel = region > 0
    if not np.any(sel):
        raise EmptyRegionError("flow_epe: region is empty")
    return float(np.mean(err[sel]))


def flow_epe_noc_all(pred, gt, occlusion):
    """``(EPE-Noc, EPE-All)`` given an occlusion mask (1 = occluded)."""
    occ = np.asarray(occlusion)
    return flow_epe(pred, gt, occ <= 0), flow_epe(pred, gt)


def snippet_ate(pred, gt):
    """Scale-aligned trajectory error of one snippet of camera positions.

    Both trajectories are translated so their first position is the origin;
    ``pred`` is then scaled by the least-squares factor. Returns the mean
    position error over all frames of the snippet.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise DimensionMismatchError("trajectories must both be (N, 3)")
    if pred.shape[0] < 2:
        raise DimensionMismatchError("a trajectory needs at least two positions")
    p = pred - pred[0]
    g = gt - gt[0]
    den = float(np.sum(p * p))
    if den == 0:
        if np.any(g != 0):
            raise DegenerateMaskError("predicted trajectory is a single point")
        return 0.0
    s = float(np.sum(p * g)) / den
    return float(np.mean(np.linalg.norm(s * p - g, axis=1)))


def ate(pred, gt):
    """Mean and standard deviation of :func:`snippet_ate` over snippets.

    ``pred`` and ``gt`` are ``(S, N, 3)`` stacks of snippets, or a single
    ``(N, 3)`` snippet.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    errs = np.array([snippet_ate(p, g) for p, g in zip(pred, gt)])
    return float(np.mean(errs)), float(np.std(errs))


def positions_from_relative(mats):
    """Camera positions in frame-0 coordinates from chained ``T_{k->k+1}`` matrices.

    Args:
        mats: ``(N-1, 3, 4)`` relative poses mapping frame ``k`` points into
            frame ``k+1``.

    Returns:
        ``(N, 3)`` camera centers.
    """
    T = np.eye(4)
    out = [np.zeros(3)]
    for m in np.asarray(mats, dtype=np.float64):
        step = np.vstack([m, [0, 0, 0, 1]])
        T = step @ T  # frame 0 -> frame k+1
        R, t = T[:3, :3], T[:3, 3]
        out.append(-R.T @ t)
    return np.array(out)


def epe_vs_residual_histogram(pred, gt_full, gt_rigid, bins):
    """Mean EPE per bin of ground-truth residual magnitude.

    Args:
        bins: increasing bin edges; a pixel with magnitude ``m`` falls in bin
            ``i`` when ``edges[i] <= m < edges[i+1]``.

    Returns:
        dict ``{(lo, hi): mean_epe}`` for non-empty bins only.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt_full = np.asarray(gt_full, dtype=np.float64)
    gt_rigid = np.asarray(gt_rigid, dtype=np.float64)
    if not pred.shape == gt_full.shape == gt_rigid.shape:
        raise DimensionMismatchError("flows differ in shape")
    edges = np.asarray(bins, dtype=np.float64)
    mag = np.linalg.norm(gt_full - gt_rigid, axis=-1).ravel()
    err = np.linalg.norm(pred - gt_full, axis=-1).ravel()
    idx = np.searchsorted(edges, mag, side="right") - 1
    out = {}
    for i in range(len(edges) - 1):
        sel = idx == i
        if np.any(sel):
            out[(float(edges[i]), float(edges[i + 1]))] = float(np.mean(err[sel]))
    return out
