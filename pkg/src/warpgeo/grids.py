"""Dense grid containers, pyramids and bilinear resampling.

Grids are plain float64 numpy arrays with a fixed layout:

* image: ``(H, W, C)`` with ``C`` in {1, 3}, values in [0, 1]
* depth map: ``(H, W)``, strictly positive
* flow field: ``(H, W, 2)``, channel 0 is u (x, rightward), channel 1 is v (y, downward)
* mask: ``(H, W)``, values in [0, 1]

Pixel ``(i, j)`` (row, column) sits at continuous coordinate ``x = j, y = i``
with the origin at the top-left pixel center.
"""

import numpy as np

from .errors import DimensionError, DimensionMismatchError, NonPositiveDepthError


def as_image(data):
    """Return ``data`` as a validated ``(H, W, C)`` image clamped to [0, 1]."""
    img = np.array(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise DimensionError(f"image must be HxW, HxWx1 or HxWx3, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise DimensionError("image is empty")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.clip(img, 0.0, 1.0)


def as_depth(data):
    """Return ``data`` as a validated ``(H, W)`` depth map."""
    depth = np.array(data, dtype=np.float64)
    if depth.ndim != 2 or depth.size == 0:
        raise DimensionError(f"depth map must be a non-empty HxW array, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise NonPositiveDepthError("depth must be strictly positive and finite")
    return depth


def as_flow(data):
    flow = np.array(data, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.size == 0:
        raise DimensionError(f"flow field must be HxWx2, got shape {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    return flow


def as_mask(data):
    mask = np.array(data, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be HxW, got shape {mask.shape}")
    if np.any(~np.isfinite(mask)) or np.any(mask < 0) or np.any(mask > 1):
        raise ValueError("mask values must lie in [0, 1]")
    return mask


def check_same_hw(*grids):
    """Raise DimensionMismatchError unless all grids share height and width."""
    shapes = {g.shape[:2] for g in grids}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"grid sizes differ: {sorted(shapes)}")


def pixel_grid(height, width):
    """Continuous coordinates ``(x, y)`` of every pixel center, each ``(H, W)``."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x, y


def avg_pool2(grid):
    """2x2 average pooling; odd trailing rows/columns are dropped."""
    h, w = grid.shape[0] // 2, grid.shape[1] // 2
    if h == 0 or w == 0:
        raise DimensionError(f"cannot halve a grid of size {grid.shape[:2]}")
    g = grid[: 2 * h, : 2 * w]
    return 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])


def avg_pool2_adjoint(grad, shape):
    """Adjoint of :func:`avg_pool2` for an input of ``shape``."""
    out = np.zeros(shape, dtype=np.float64)
    h, w = grad.shape[0], grad.shape[1]
    q = 0.25 * grad
    out[0 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[0 : 2 * h : 2, 1 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 1 : 2 * w : 2] = q
    return out


def build_pyramid(grid, num_scales, flow=False):
    """Build a list of ``num_scales`` grids, level 0 being ``grid`` itself.

    Each level is the 2x2 average pool of the previous one. When ``flow`` is
    true the vectors are also halved per level so they stay in level-local
    pixels.
    """
    if num_scales < 1:
        raise ValueError("num_scales must be >= 1")
    grid = np.asarray(grid, dtype=np.float64)
    need = 2 ** (num_scales - 1)
    if grid.shape[0] < need or grid.shape[1] < need:
        raise DimensionError(
            f"grid of size {grid.shape[:2]} too small for {num_scales} scales (needs >= {need})"
        )
    levels = [grid]
    for _ in range(1, num_scales):
        nxt = avg_pool2(levels[-1])
        if flow:
            nxt = 0.5 * nxt
        levels.append(nxt)
    return levels


def level_shape(shape, level):
    """Height and width of pyramid ``level`` for a level-0 grid of ``shape``."""
    return shape[0] >> level, shape[1] >> level


def _cell(coord, size):
    """Clamp ``coord`` to [0, size-1] and split it into a cell index and weight.

    Integer coordinates take the cell to their right; the last pixel falls
    back to the final cell.
    """
    c = np.clip(coord, 0.0, size - 1)
    i0 = np.floor(c).astype(np.intp)
    i0 = np.minimum(i0, max(size - 2, 0))
    i1 = np.minimum(i0 + 1, size - 1)
    a = c - i0
    if size == 1:
        a = np.zeros_like(c)
    return i0, i1, a


def bilinear_sample(grid, x, y, with_grad=False):
    """Sample ``grid`` at continuous coordinates ``(x, y)``.

    Args:
        grid: ``(H, W)`` or ``(H, W, C)`` array.
        x, y: arrays of identical shape ``S`` with subpixel coordinates.
        with_grad: also return partial derivatives w.r.t. ``x`` and ``y``.

    Returns:
        ``(values, inside)`` or ``(values, inside, d_dx, d_dy)``. ``values``
        has shape ``S`` (+ ``(C,)`` for 3-D grids); ``inside`` is a boolean
        array of shape ``S`` that is false where the coordinate was clamped
        to the border. Derivatives along a clamped axis are zero.
    """
    grid = np.asarray(grid, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = grid.shape[0], grid.shape[1]
    in_x = (x >= 0) & (x <= w - 1)
    in_y = (y >= 0) & (y <= h - 1)
    x0, x1, ax = _cell(x, w)
    y0, y1, ay = _cell(y, h)
    g00 = grid[y0, x0]
    g01 = grid[y0, x1]
    g10 = grid[y1, x0]
    g11 = grid[y1, x1]
    if grid.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    # weighted form stays exact at the cell corners (weights 0 and 1)
    top = (1.0 - ax) * g00 + ax * g01
    bot = (1.0 - ax) * g10 + ax * g11
    val = (1.0 - ay) * top + ay * bot
    inside = in_x & in_y
    if not with_grad:
        return val, inside
    ddx = (1.0 - ay) * (g01 - g00) + ay * (g11 - g10)
    ddy = bot - top
    if w == 1:
        ddx = np.zeros_like(ddx)
    if h == 1:
        ddy = np.zeros_like(ddy)
    mx, my = in_x, in_y
    if grid.ndim == 3:
        mx, my = mx[..., None], my[..., None]
    ddx = np.where(mx, ddx, 0.0)
    ddy = np.where(my, ddy, 0.0)
    return val, inside, ddx, ddy


def bilinear_scatter(upstream, x, y, shape):
    """Adjoint of :func:`bilinear_sample` with respect to the grid values.

    Accumulates ``upstream`` (shape ``S`` or ``S + (C,)``) into a zero grid of
    ``shape`` with the bilinear weights used at ``(x, y)``. Sums are formed by
    ``np.bincount`` in a fixed order, so the result is deterministic.
    """
    h, w = shape[0], shape[1]
    x0, x1, ax = _cell(np.asarray(x, dtype=np.float64), w)
    y0, y1, ay = _cell(np.asarray(y, dtype=np.float64), h)
    up = np.asarray(upstream, dtype=np.float64)
    c = shape[2] if len(shape) == 3 else 1
    up = up.reshape(-1, c)
    taps = (
        (y0 * w + x0, (1 - ax) * (1 - ay)),
        (y0 * w + x1, ax * (1 - ay)),
        (y1 * w + x0, (1 - ax) * ay),
        (y1 * w + x1, ax * ay),
    )
    idx = np.concatenate([t[0].ravel() for t in taps])
    wts = np.concatenate([t[1].ravel() for t in taps])
    out = np.empty((h * w, c))
    for k in range(c):
        out[:, k] = np.bincount(idx, wts * np.tile(up[:, k], 4), minlength=h * w)
    return out.reshape(shape)


def upsample_to(grid, shape, flow=False):
    """Bilinearly resize a coarse pyramid level to the next finer ``shape``.

    Uses the pixel-center mapping ``x_coarse = (x_fine + 0.5) / 2 - 0.5``
    (inverse of 2x2 pooling). Flow vectors are doubled.
    """
    h, w = shape[0], shape[1]
    x, y = pixel_grid(h, w)
    out, _ = bilinear_sample(grid, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5)
    if flow:
        out = 2.0 * out
    return out
