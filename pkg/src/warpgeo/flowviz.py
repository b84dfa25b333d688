"""Middlebury color-wheel rendering of optical flow."""

import numpy as np

from .grids import as_flow

# hue segment lengths of the standard wheel
_SEGMENTS = (("RY", 15), ("YG", 6), ("GC", 4), ("CB", 11), ("BM", 13), ("MR", 6))


def color_wheel():
    """``(55, 3)`` RGB wheel in [0, 1], red at angle 0."""
    cols = []
    ramps = {
        "RY": lambda f: (1, f, 0),
        "YG": lambda f: (1 - f, 1, 0),
        "GC": lambda f: (0, 1, f),
        "CB": lambda f: (0, 1 - f, 1),
        "BM": lambda f: (f, 0, 1),
        "MR": lambda f: (1, 0, 1 - f),
    }
    for name, n in _SEGMENTS:
        for i in range(n):
            cols.append(ramps[name](i / n))
    return np.array(cols, dtype=np.float64)


def flow_to_color(flow, max_magnitude=None, percentile=99.0):
    """Encode a flow field as an ``(H, W, 3)`` RGB image in [0, 1].

    Direction selects the hue, magnitude the saturation; zero flow is white.

    Args:
        flow: ``(H, W, 2)`` field.
        max_magnitude: absolute normalization; magnitudes at or above it are
            fully saturated. When omitted the given percentile of the
            magnitudes is used.
        percentile: percentile used for the automatic normalization.
    """
    f = as_flow(flow)
    u, v = f[..., 0], f[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, percentile))
    if max_magnitude <= 0:
        return np.ones(f.shape[:2] + (3,))
    wheel = color_wheel()
    n = len(wheel)
    r = np.minimum(mag / max_magnitude, 1.0)
    angle = np.arctan2(-v, -u) / np.pi  # in [-1, 1]
    fk = (angle + 1) / 2 * (n - 1)
    k0 = np.floor(fk).astype(int) % n
    k1 = (k0 + 1) % n
    frac = (fk - np.floor(fk))[..., None]
    col = (1 - frac) * wheel[k0] + frac * wheel[k1]
    return 1 - r[..., None] * (1 - col)
