import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from warpgeo.flowviz import color_wheel, flow_to_color


def hue(rgb):
    # direction of the saturated color, independent of saturation level
    c = 1 - rgb
    n = np.linalg.norm(c, axis=-1, keepdims=True)
    return c / np.where(n == 0, 1, n)


def test_zero_flow_is_white():
    np.testing.assert_array_equal(flow_to_color(np.zeros((4, 5, 2))), 1.0)


def test_uniform_flow_uniform_color():
    f = np.zeros((3, 4, 2))
    f[..., 0] = 2.0
    img = flow_to_color(f)
    assert np.all(img == img[0, 0])
    assert img[0, 0].min() < 1e-12  # fully saturated


def test_wheel_shape_and_range():
    w = color_wheel()
    assert w.shape == (55, 3) and w.min() >= 0 and w.max() <= 1
    np.testing.assert_array_equal(w[0], [1, 0, 0])


@given(st.floats(0.1, 10))
def test_global_scale_keeps_hue(s):
    r = np.random.default_rng(0)
    f = r.normal(size=(5, 6, 2))
    np.testing.assert_allclose(hue(flow_to_color(f)), hue(flow_to_color(s * f)), atol=1e-9)
    np.testing.assert_allclose(flow_to_color(f), flow_to_color(s * f), atol=1e-12)


def test_absolute_normalization():
    f = np.zeros((2, 2, 2))
    f[..., 1] = 1.0
    half = flow_to_color(f, max_magnitude=2.0)
    full = flow_to_color(f, max_magnitude=1.0)
    np.testing.assert_allclose(1 - half, 0.5 * (1 - full))
