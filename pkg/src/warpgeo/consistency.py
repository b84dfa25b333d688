"""Forward-backward flow consistency and the adaptive inlier mask."""

from dataclasses import dataclass

import numpy as np

from .grids import as_flow, check_same_hw
from .warping import warp_grid, warp_grid_vjp


@dataclass(frozen=True)
class ConsistencyParams:
    """Absolute (pixels) and relative thresholds of the inlier test."""

    alpha_px: float = 3.0
    beta_rel: float = 0.05

    def __post_init__(self):
        if not self.alpha_px > 0:
            raise ValueError("alpha_px must be positive")
        if self.beta_rel < 0:
            raise ValueError("beta_rel must be non-negative")


def flow_difference(f_fwd, f_bwd):
    """``f_fwd(p) + f_bwd(p + f_fwd(p))`` and the validity of the sample.

    Returns ``(delta (H, W, 2), valid (H, W))``.
    """
    f_fwd, f_bwd = as_flow(f_fwd), as_flow(f_bwd)
    check_same_hw(f_fwd, f_bwd)
    sampled, valid = warp_grid(f_bwd, f_fwd)
    return f_fwd + sampled, valid


def flow_difference_vjp(f_fwd, f_bwd, upstream):
    """Gradients of ``sum(upstream * delta)`` w.r.t. ``f_fwd`` and ``f_bwd``."""
    g_pos, g_bwd = warp_grid_vjp(f_bwd, f_fwd, upstream)
    return np.asarray(upstream, dtype=np.float64) + g_pos, g_bwd


def inlier_mask(delta, f_fwd, params=ConsistencyParams(), valid=None):
    """1 where ``|delta| < max(alpha, beta * |f_fwd|)`` (strict) and the delta is valid."""
    delta = np.asarray(delta, dtype=np.float64)
    f_fwd = np.asarray(f_fwd, dtype=np.float64)
    check_same_hw(delta, f_fwd)
    err = np.linalg.norm(delta, axis=-1)
    thresh = np.maximum(params.alpha_px, params.beta_rel * np.linalg.norm(f_fwd, axis=-1))
    mask = err < thresh
    if valid is not None:
        mask &= np.asarray(valid) > 0
    return mask.astype(np.float64)
