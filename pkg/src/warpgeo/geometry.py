"""Pinhole projection, Euler-angle poses and rigid flow.

Rotation convention: ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)`` for angles
``(alpha, beta, gamma)``, i.e. a fixed-axis rotation about X, then Y, then Z.
A pose ``T = (R, t)`` maps a point from the target camera frame into the
source camera frame: ``X_s = R @ X_t + t``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepthError
from .grids import as_depth, pixel_grid

Z_MIN = 1e-3


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def at_level(self, level):
        """Intrinsics of a pyramid level built by repeated 2x2 average pooling."""
        s = 2.0**level
        return CameraIntrinsics(
            self.fx / s, self.fy / s, (self.cx + 0.5) / s - 0.5, (self.cy + 0.5) / s - 0.5
        )


@dataclass(frozen=True)
class PoseSE3:
    """Relative 6-DoF motion as Euler angles (radians) plus translation."""

    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(a) for a in self.rotation))
        object.__setattr__(self, "translation", tuple(float(a) for a in self.translation))
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ValueError("pose needs 3 angles and 3 translation components")

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(tuple(vec[:3]), tuple(vec[3:6]))

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=np.float64)
        return cls(tuple(rotation_to_euler(mat[:3, :3])), tuple(mat[:3, 3]))

    def as_vector(self):
        return np.array(self.rotation + self.translation)

    @property
    def R(self):
        return euler_to_rotation(self.rotation)

    @property
    def t(self):
        return np.array(self.translation)

    def matrix(self):
        """Row-major ``3x4`` ``[R | t]``."""
        return np.hstack([self.R, self.t[:, None]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _rz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0, 0], [0, -s, -c], [0, c, -s]])


def _dry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[-s, 0, c], [0, 0.0, 0], [-c, 0, -s]])


def _drz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0.0]])


def euler_to_rotation(angles):
    """Rotation matrix ``Rz @ Ry @ Rx`` for angles ``(alpha, beta, gamma)``."""
    a, b, g = (float(v) for v in angles)
    if not np.all(np.isfinite([a, b, g])):
        raise ValueError("angles must be finite")
    return _rz(g) @ _ry(b) @ _rx(a)


def euler_rotation_derivatives(angles):
    """The three matrices ``dR/d(alpha)``, ``dR/d(beta)``, ``dR/d(gamma)``."""
    a, b, g = (float(v) for v in angles)
    rx, ry, rz = _rx(a), _ry(b), _rz(g)
    return np.stack([rz @ ry @ _drx(a), rz @ _dry(b) @ rx, _drz(g) @ ry @ rx])


def rotation_to_euler(R):
    """Inverse of :func:`euler_to_rotation` (beta in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=np.float64)
    cb = np.hypot(R[0, 0], R[1, 0])
    if cb > 1e-12:
        a = np.arctan2(R[2, 1], R[2, 2])
        b = np.arctan2(-R[2, 0], cb)
        g = np.arctan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: only alpha +/- gamma is defined, put it all in alpha
        a = np.arctan2(-R[1, 2], R[1, 1])
        b = np.arctan2(-R[2, 0], cb)
        g = 0.0
    return np.array([a, b, g])


def compose_rt(R1, t1, R2, t2):
    """Apply ``(R2, t2)`` first, then ``(R1, t1)``."""
    return R1 @ R2, R1 @ t2 + t1


def pose_inverse(pose):
    R = pose.R
    Ri = R.T
    ti = -Ri @ pose.t
    return PoseSE3(tuple(rotation_to_euler(Ri)), tuple(ti))


def compose(a, b):
    """Pose equivalent to applying ``b`` then ``a``."""
    R, t = compose_rt(a.R, a.t, b.R, b.t)
    return PoseSE3(tuple(rotation_to_euler(R)), tuple(t))


def backproject(p, depth, K):
    """Lift pixel(s) ``p = (..., 2)`` at ``depth`` to camera-frame points ``(..., 3)``."""
    p = np.asarray(p, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(depth)) or np.any(depth <= 0):
        raise NonPositiveDepthError("backproject needs positive depth")
    x = (p[..., 0] - K.cx) * depth / K.fx
    y = (p[..., 1] - K.cy) * depth / K.fy
    return np.stack([x, y, depth * np.ones_like(x)], axis=-1)


def project(P, K, z_min=Z_MIN):
    """Project points ``(..., 3)``; returns ``(pixels (..., 2), in_front)``.

    Points at or behind ``z_min`` are projected with their depth clamped to
    ``z_min`` and flagged ``in_front = False``.
    """
    P = np.asarray(P, dtype=np.float64)
    z = P[..., 2]
    in_front = z > z_min
    zc = np.maximum(z, z_min)
    u = K.fx * P[..., 0] / zc + K.cx
    v = K.fy * P[..., 1] / zc + K.cy
    return np.stack([u, v], axis=-1), in_front


def _ray_grid(shape, K):
    x, y = pixel_grid(*shape)
    return x, y, np.stack([(x - K.cx) / K.fx, (y - K.cy) / K.fy, np.ones_like(x)], axis=-1)


def _normalized_points(depth, R, t, K):
    # n = R r + t / d is the source-frame point divided by the target depth;
    # this form makes the identity pose yield exactly zero flow.
    x, y, rays = _ray_grid(depth.shape, K)
    inv_d = 1.0 / depth
    n = rays @ np.asarray(R, dtype=np.float64).T + inv_d[..., None] * np.asarray(t, dtype=np.float64)
    return x, y, rays, inv_d, n


def rigid_flow_rt(depth, R, t, K, z_min=Z_MIN):
    """Rigid flow for a pose given as a rotation matrix and translation.

    Returns ``(flow (H, W, 2), valid (H, W) float mask)``.
    """
    depth = as_depth(depth)
    _, _, rays, inv_d, n = _normalized_points(depth, R, t, K)
    in_front = n[..., 2] * depth > z_min
    nz = np.maximum(n[..., 2], z_min * inv_d)
    flow = np.stack(
        [K.fx * (n[..., 0] / nz - rays[..., 0]), K.fy * (n[..., 1] / nz - rays[..., 1])], axis=-1
    )
    valid = in_front & np.all(np.isfinite(flow), axis=-1)
    return flow, valid.astype(np.float64)


def rigid_flow(depth, pose, K, z_min=Z_MIN):
    """Per-pixel rigid flow ``project(R @ backproject(p, D(p)) + t) - p``.

    Args:
        depth: ``(H, W)`` positive depth of the target frame.
        pose: :class:`PoseSE3` from target to source frame.
        K: :class:`CameraIntrinsics`.

    Returns:
        ``(flow, valid)`` where ``valid`` is 1 for points in front of the
        source camera.
    """
    return rigid_flow_rt(depth, pose.R, pose.t, K, z_min)


def rigid_flow_rt_vjp(depth, R, t, K, upstream, z_min=Z_MIN):
    """Vector-Jacobian product of :func:`rigid_flow_rt`.

    Returns ``(grad_depth (H, W), grad_R (3, 3), grad_t (3,))``, treating the
    entries of ``R`` as independent. Pixels whose projected depth is clamped
    to ``z_min`` contribute no gradient.
    """
    depth = as_depth(depth)
    t = np.asarray(t, dtype=np.float64)
    _, _, rays, inv_d, n = _normalized_points(depth, R, t, K)
    clamped = n[..., 2] * depth <= z_min
    nz = np.where(clamped, 1.0, n[..., 2])
    gu = np.where(clamped, 0.0, upstream[..., 0])
    gv = np.where(clamped, 0.0, upstream[..., 1])
    gn = np.empty_like(n)
    gn[..., 0] = gu * K.fx / nz
    gn[..., 1] = gv * K.fy / nz
    gn[..., 2] = -(gu * K.fx * n[..., 0] + gv * K.fy * n[..., 1]) / nz**2
    flat_gn = gn.reshape(-1, 3)
    grad_R = flat_gn.T @ rays.reshape(-1, 3)
    grad_t = flat_gn.T @ inv_d.reshape(-1)
    grad_depth = -(gn @ t) * inv_d**2
    return grad_depth, grad_R, grad_t


def pose_grad_from_rt(angles, translation, grad_R, grad_t, grad_Ri=None, grad_ti=None):
    """Chain matrix-level gradients back to the 6 Euler/translation parameters.

    ``grad_Ri``/``grad_ti`` are gradients w.r.t. the inverse pose
    ``(R^T, -R^T t)`` and may be omitted.
    """
    dR = euler_rotation_derivatives(angles)
    R = euler_to_rotation(angles)
    t = np.asarray(translation, dtype=np.float64)
    g_ang = np.einsum("ij,kij->k", grad_R, dR)
    g_t = np.array(grad_t, dtype=np.float64)
    if grad_Ri is not None:
        # R_i = R^T, t_i = -R^T t
        g_ang = g_ang + np.einsum("ji,kij->k", grad_Ri, dR)
        g_ang = g_ang - np.einsum("i,kji,j->k", grad_ti, dR, t)
        g_t = g_t - R @ grad_ti
    return np.concatenate([g_ang, g_t])


def rigid_flow_vjp(depth, pose, K, upstream, z_min=Z_MIN):
    """Gradients of ``<upstream, rigid_flow(depth, pose, K)>``.

    Returns ``(grad_depth, grad_angles (3,), grad_translation (3,))``.
    """
    gd, gR, gt = rigid_flow_rt_vjp(depth, pose.R, pose.t, K, upstream, z_min)
    g = pose_grad_from_rt(pose.rotation, pose.translation, gR, gt)
    return gd, g[:3], g[3:]


def rotation_angle(R):
    """Geodesic angle (radians) of a rotation matrix."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))

