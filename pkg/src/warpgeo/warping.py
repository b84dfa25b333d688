"""Differentiable inverse warping of a source grid by a flow field."""

from dataclasses import dataclass

import numpy as np

from .grids import as_flow, bilinear_sample, bilinear_scatter, check_same_hw, pixel_grid


@dataclass
class WarpResult:
    """Source image resampled into the target frame.

    ``valid`` is 1 where the sample position lay inside the source image
    (all four bilinear taps in bounds) and 0 where it was clamped.
    """

    warped: np.ndarray
    valid: np.ndarray


def _targets(flow):
    x, y = pixel_grid(flow.shape[0], flow.shape[1])
    return x + flow[..., 0], y + flow[..., 1]


def warp_grid(grid, flow):
    """Sample ``grid`` at ``p + flow(p)`` for every pixel ``p``.

    Works for any ``(H, W)`` or ``(H, W, C)`` grid, including flow fields.
    Returns ``(warped, valid)`` with ``valid`` a float mask.
    """
    flow = as_flow(flow)
    grid = np.asarray(grid, dtype=np.float64)
    check_same_hw(grid, flow)
    xs, ys = _targets(flow)
    out, inside = bilinear_sample(grid, xs, ys)
    return out, inside.astype(np.float64)


def warp_grid_vjp(grid, flow, upstream, grid_grad=True):
    """Vector-Jacobian product of :func:`warp_grid`.

    Returns ``(grad_flow (H, W, 2), grad_grid)``; ``grad_grid`` is ``None``
    when ``grid_grad`` is false.
    """
    flow = as_flow(flow)
    grid = np.asarray(grid, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    check_same_hw(grid, flow, upstream)
    xs, ys = _targets(flow)
    _, _, ddx, ddy = bilinear_sample(grid, xs, ys, with_grad=True)
    grad_grid = bilinear_scatter(upstream, xs, ys, grid.shape) if grid_grad else None
    return _flow_grad(upstream, ddx, ddy), grad_grid


def _flow_grad(upstream, ddx, ddy):
    if ddx.ndim == 3:
        return np.stack([np.sum(upstream * ddx, axis=-1), np.sum(upstream * ddy, axis=-1)], axis=-1)
    return np.stack([upstream * ddx, upstream * ddy], axis=-1)


class ImageWarp:
    """Inverse warp that keeps the sampling partials for a later flow gradient.

    Equivalent to :func:`inverse_warp` followed by :func:`inverse_warp_vjp`
    with the source held constant, but samples the source only once.
    """

    def __init__(self, source, flow):
        flow = as_flow(flow)
        source = np.asarray(source, dtype=np.float64)
        check_same_hw(source, flow)
        xs, ys = _targets(flow)
        val, inside, self._ddx, self._ddy = bilinear_sample(source, xs, ys, with_grad=True)
        self.result = WarpResult(np.clip(val, 0.0, 1.0), inside.astype(np.float64))

    def flow_grad(self, upstream):
        return _flow_grad(np.asarray(upstream, dtype=np.float64), self._ddx, self._ddy)


def inverse_warp(source, flow):
    """Warp an image ``(H, W, C)`` into the target frame.

    ``warped(p) = source(p + flow(p))`` with bilinear interpolation and
    clamp-to-border sampling.
    """
    warped, valid = warp_grid(source, flow)
    return WarpResult(np.clip(warped, 0.0, 1.0), valid)


def inverse_warp_vjp(source, flow, upstream):
    """Gradients of ``sum(upstream * inverse_warp(source, flow).warped)``.

    Args:
        source: ``(H, W, C)`` image.
        flow: ``(H, W, 2)`` flow.
        upstream: ``(H, W, C)`` cotangent of the warped image.

    Returns:
        ``(grad_flow, grad_source)``.
    """
    return warp_grid_vjp(source, flow, upstream)
