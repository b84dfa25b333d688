"""Differentiable rigid-flow warping, view-synthesis losses and direct
optimization of depth, pose and residual flow on synthetic scenes."""

__version__ = "0.1.0"

from .consistency import ConsistencyParams, flow_difference, inlier_mask
from .geometry import CameraIntrinsics, PoseSE3, rigid_flow
from .losses import LossBreakdown, LossWeights, photometric_loss
from .metrics import ate, depth_metrics, flow_epe
from .objective import FramePair, total_loss
from .scenes import SceneSpec, generate_scene
from .warping import inverse_warp

__all__ = [
    "CameraIntrinsics",
    "ConsistencyParams",
    "FramePair",
    "LossBreakdown",
    "LossWeights",
    "PoseSE3",
    "SceneSpec",
    "ate",
    "depth_metrics",
    "flow_difference",
    "flow_epe",
    "generate_scene",
    "inlier_mask",
    "inverse_warp",
    "photometric_loss",
    "rigid_flow",
    "total_loss",
]
