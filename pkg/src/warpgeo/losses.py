"""View-synthesis training objectives and their gradients.

Every reduction is a weight-normalized mean, so loss magnitudes do not depend
on the grid resolution. Functions named ``*_grad`` return ``(value, grad)``.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DegenerateMaskError, DimensionMismatchError
from .grids import check_same_hw

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

TERMS = ("l_rw", "l_ds", "l_fw", "l_fs", "l_gc")


@dataclass(frozen=True)
class LossWeights:
    alpha_ssim: float = 0.85
    lambda_ds: float = 0.5
    lambda_fs: float = 0.2
    lambda_gc: float = 0.2
    num_scales: int = 4

    def __post_init__(self):
        if not 0.0 <= self.alpha_ssim <= 1.0:
            raise ValueError("alpha_ssim must lie in [0, 1]")
        if min(self.lambda_ds, self.lambda_fs, self.lambda_gc) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")

    def combine(self, parts):
        """Weighted total of a mapping with the five term names."""
        return (
            parts["l_rw"]
            + self.lambda_ds * parts["l_ds"]
            + parts["l_fw"]
            + self.lambda_fs * parts["l_fs"]
            + self.lambda_gc * parts["l_gc"]
        )


@dataclass
class LossBreakdown:
    l_rw: float = 0.0
    l_ds: float = 0.0
    l_fw: float = 0.0
    l_fs: float = 0.0
    l_gc: float = 0.0
    total: float = 0.0
    per_scale: list = field(default_factory=list)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "per_scale"}

    def to_text(self):
        """``key = value`` lines with full float precision."""
        lines = [f"{k} = {v!r}" for k, v in self.as_dict().items()]
        for i, sub in enumerate(self.per_scale):
            lines += [f"scale{i}.{k} = {v!r}" for k, v in sub.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        top, scales = {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), float(value)
            if key.startswith("scale"):
                idx, _, name = key[5:].partition(".")
                scales.setdefault(int(idx), {})[name] = value
            else:
                top[key] = value
        return cls(**top, per_scale=[scales[i] for i in sorted(scales)])


def _as_hwc(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, :, None] if a.ndim == 2 else a


def _box3(a):
    """3x3 mean filter with replicate padding over the first two axes."""
    h, w = a.shape[0], a.shape[1]
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (a.ndim - 2)
    p = np.pad(a, pad, mode="edge")
    rows = p[0:h] + p[1 : h + 1] + p[2 : h + 2]
    return (rows[:, 0:w] + rows[:, 1 : w + 1] + rows[:, 2 : w + 2]) / 9.0


def _box3_adjoint(g):
    h, w = g.shape[0], g.shape[1]
    p = np.zeros((h + 2, w + 2) + g.shape[2:])
    cols = np.zeros((h, w + 2) + g.shape[2:])
    cols[:, 0:w] += g
    cols[:, 1 : w + 1] += g
    cols[:, 2 : w + 2] += g
    p[0:h] += cols
    p[1 : h + 1] += cols
    p[2 : h + 2] += cols
    p /= 9.0
    # fold the replicated border back onto the edge pixels
    p[1, :] += p[0, :]
    p[h, :] += p[h + 1, :]
    p[:, 1] += p[:, 0]
    p[:, w] += p[:, w + 1]
    return p[1 : h + 1, 1 : w + 1]


def _ssim_parts(a, b):
    c = a.shape[-1]
    stats = _box3(np.concatenate([a, b, a * a, b * b, a * b], axis=-1))
    ma, mb, eaa, ebb, eab = (stats[..., i * c : (i + 1) * c] for i in range(5))
    saa = eaa - ma * ma
    sbb = ebb - mb * mb
    sab = eab - ma * mb
    n1 = 2 * ma * mb + SSIM_C1
    n2 = 2 * sab + SSIM_C2
    d1 = ma * ma + mb * mb + SSIM_C1
    d2 = saa + sbb + SSIM_C2
    return ma, mb, n1, n2, d1, d2


def ssim_map(a, b):
    """Per-pixel, per-channel SSIM of two ``(H, W, C)`` images (3x3 box window)."""
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"ssim inputs differ: {a.shape} vs {b.shape}")
    _, _, n1, n2, d1, d2 = _ssim_parts(a, b)
    return n1 * n2 / (d1 * d2)


def ssim_map_vjp(a, b, upstream):
    """Gradients of ``sum(upstream * ssim_map(a, b))`` w.r.t. ``a`` and ``b``."""
    _, grad_a, grad_b = _ssim_value_vjp(a, b, upstream)
    return grad_a, grad_b


def _ssim_value_vjp(a, b, upstream, grad_a=True):
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"ssim inputs differ: {a.shape} vs {b.shape}")
    g = _as_hwc(upstream)
    ma, mb, n1, n2, d1, d2 = _ssim_parts(a, b)
    den = d1 * d2
    s = n1 * n2 / den
    ds_dn1 = n2 / den
    ds_dn2 = n1 / den
    ds_dd1 = -s / d1
    ds_dd2 = -s / d2
    # partials w.r.t. the five box-filtered statistics
    k1 = ds_dn1 - ds_dn2
    k2 = ds_dd1 - ds_dd2
    g_ma = g * 2 * (mb * k1 + ma * k2)
    g_mb = g * 2 * (ma * k1 + mb * k2)
    c = a.shape[-1]
    if grad_a:
        adj = _box3_adjoint(np.concatenate([g_ma, g_mb, g * ds_dd2, g * 2 * ds_dn2], axis=-1))
        b_ma, b_mb, g_sq, g_eab = (adj[..., i * c : (i + 1) * c] for i in range(4))
        ga = b_ma + 2 * a * g_sq + b * g_eab
    else:
        adj = _box3_adjoint(np.concatenate([g_mb, g * ds_dd2, g * 2 * ds_dn2], axis=-1))
        b_mb, g_sq, g_eab = (adj[..., i * c : (i + 1) * c] for i in range(3))
        ga = None
    gb = b_mb + 2 * b * g_sq + a * g_eab
    return s, ga, gb


def _effective_weight(warped, weight_mask, shape):
    w = np.asarray(warped.valid, dtype=np.float64)
    if weight_mask is not None:
        weight_mask = np.asarray(weight_mask, dtype=np.float64)
        if weight_mask.shape != shape:
            raise DimensionMismatchError("weight mask does not match the image size")
        w = w * weight_mask
    total = float(np.sum(w))
    if total <= 0:
        raise DegenerateMaskError("photometric loss has no pixel with positive weight")
    return w, total


def photometric_loss_grad(target, warped, weight_mask=None, alpha_ssim=0.85, need_grad=True):
    """Masked SSIM + L1 reconstruction error and its gradient.

    Args:
        target: ``(H, W, C)`` target image.
        warped: :class:`~warpgeo.warping.WarpResult` of the source image.
        weight_mask: optional ``(H, W)`` weights multiplied with the warp
            validity.
        alpha_ssim: SSIM/L1 mixing weight.
        need_grad: when false the gradient is skipped and returned as None.

    Returns:
        ``(loss, grad_warped)`` where ``grad_warped`` has the image shape.

    Pixels with zero weight are replaced by the target intensity before the
    window statistics are taken, so their values never reach the loss.
    """
    t = _as_hwc(target)
    b = _as_hwc(warped.warped)
    if t.shape != b.shape:
        raise DimensionMismatchError(f"target {t.shape} vs warped {b.shape}")
    w, wsum = _effective_weight(warped, weight_mask, t.shape[:2])
    w3 = w[..., None]
    beff = w3 * b + (1.0 - w3) * t
    c = t.shape[2]
    scale = (w / wsum)[..., None] / c
    if need_grad:
        up = np.broadcast_to(-0.5 * alpha_ssim * scale, t.shape)
        ssim, _, g_ssim = _ssim_value_vjp(t, beff, up, grad_a=False)
    else:
        ssim = ssim_map(t, beff)
    diff = beff - t
    per_pixel = np.mean(alpha_ssim * (1.0 - ssim) / 2.0 + (1.0 - alpha_ssim) * np.abs(diff), axis=-1)
    loss = float(np.sum(w * per_pixel) / wsum)
    if not need_grad:
        return loss, None

    g_beff = g_ssim + (1.0 - alpha_ssim) * scale * np.sign(diff)
    return loss, w3 * g_beff


def photometric_loss(target, warped, weight_mask=None, alpha_ssim=0.85):
    """Scalar photometric reconstruction loss (see :func:`photometric_loss_grad`)."""
    return photometric_loss_grad(target, warped, weight_mask, alpha_ssim, need_grad=False)[0]


def _smoothness_weights(guide):
    g = _as_hwc(guide)
    gx = np.mean(np.abs(g[:-1, 1:] - g[:-1, :-1]), axis=-1)
    gy = np.mean(np.abs(g[1:, :-1] - g[:-1, :-1]), axis=-1)
    return np.exp(-gx), np.exp(-gy)


def edge_aware_smoothness_grad(field_, guide):
    """Edge-aware first-order smoothness of a depth map or flow field.

    The x and y forward differences of the field are weighted by
    ``exp(-|dI/dx|)`` and ``exp(-|dI/dy|)`` of the guide image (averaged
    over its channels), summed over field channels and averaged over the
    ``(H-1) x (W-1)`` pixels that have both neighbors.

    Returns ``(loss, grad_field)``.
    """
    f = np.asarray(field_, dtype=np.float64)
    check_same_hw(f, np.asarray(guide))
    h, w = f.shape[0], f.shape[1]
    if h < 2 or w < 2:
        return 0.0, np.zeros_like(f)
    wx, wy = _smoothness_weights(guide)
    if f.ndim == 3:
        wx, wy = wx[..., None], wy[..., None]
    dx = f[:-1, 1:] - f[:-1, :-1]
    dy = f[1:, :-1] - f[:-1, :-1]
    n = (h - 1) * (w - 1)
    loss = float((np.sum(np.abs(dx) * wx) + np.sum(np.abs(dy) * wy)) / n)
    sx = np.sign(dx) * wx / n
    sy = np.sign(dy) * wy / n
    grad = np.zeros_like(f)
    grad[:-1, 1:] += sx
    grad[:-1, :-1] -= sx
    grad[1:, :-1] += sy
    grad[:-1, :-1] -= sy
    return loss, grad


def edge_aware_smoothness(field_, guide):
    return edge_aware_smoothness_grad(field_, guide)[0]


def geometric_consistency_loss_grad(delta, inlier):
    """Inlier-weighted mean of ``|du| + |dv|``; returns ``(loss, grad_delta)``."""
    d = np.asarray(delta, dtype=np.float64)
    m = np.asarray(inlier, dtype=np.float64)
    check_same_hw(d, m)
    total = float(np.sum(m))
    if total <= 0:
        raise DegenerateMaskError("geometric consistency loss has no inlier pixel")
    loss = float(np.sum(m * np.sum(np.abs(d), axis=-1)) / total)
    return loss, np.sign(d) * (m / total)[..., None]


def geometric_consistency_loss(delta, inlier):
    return geometric_consistency_loss_grad(delta, inlier)[0]
