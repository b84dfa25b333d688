import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from warpgeo.errors import DimensionMismatchError
from warpgeo.warping import ImageWarp, inverse_warp, inverse_warp_vjp


def test_zero_flow_is_identity(rng):
    src = rng.random((5, 6, 3))
    res = inverse_warp(src, np.zeros((5, 6, 2)))
    np.testing.assert_array_equal(res.warped, src)
    assert np.all(res.valid == 1)


def test_integer_shift():
    row = np.array([10, 20, 30, 40]) / 255.0
    src = np.tile(row, (3, 1))[..., None]
    flow = np.zeros((3, 4, 2))
    flow[..., 0] = 1
    res = inverse_warp(src, flow)
    np.testing.assert_array_equal(res.warped[:, :3, 0], np.tile(row[1:], (3, 1)))
    np.testing.assert_array_equal(res.valid[:, 3], 0)
    np.testing.assert_array_equal(res.valid[:, :3], 1)


def test_half_pixel_shift():
    src = np.array([[0.0, 0.2, 0.4, 0.6]])[..., None]
    flow = np.zeros((1, 4, 2))
    flow[..., 0] = 0.5
    res = inverse_warp(src, flow)
    np.testing.assert_allclose(res.warped[0, :3, 0], [0.1, 0.3, 0.5], atol=1e-15)
    assert res.warped[0, 3, 0] == 0.6 and res.valid[0, 3] == 0


def test_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        inverse_warp(np.zeros((3, 4, 1)), np.zeros((3, 5, 2)))


def test_zero_upstream_zero_grads(rng):
    gf, gs = inverse_warp_vjp(rng.random((4, 4, 3)), rng.normal(size=(4, 4, 2)), np.zeros((4, 4, 3)))
    assert not gf.any() and not gs.any()


def test_one_hot_source_gradient():
    src = np.random.default_rng(0).random((4, 5, 1))
    flow = np.zeros((4, 5, 2))
    flow[1, 2] = (1.0, 1.0)
    up = np.zeros((4, 5, 1))
    up[1, 2] = 1.0
    _, gs = inverse_warp_vjp(src, flow, up)
    expect = np.zeros_like(src)
    expect[2, 3] = 1.0
    np.testing.assert_array_equal(gs, expect)


def test_vjp_6x6_matches_fd(rng):
    src = rng.random((6, 6, 3))
    flow = rng.uniform(-1.2, 1.2, (6, 6, 2))
    flow = np.where(np.abs(flow - np.round(flow)) < 0.25, flow + 0.3, flow)
    up = rng.normal(size=(6, 6, 3))
    gf, gs = inverse_warp_vjp(src, flow, up)
    f = lambda fl, s: np.sum(up * inverse_warp(s, fl).warped)  # noqa: E731
    h = 1e-5
    num = np.zeros_like(flow)
    for idx in np.ndindex(flow.shape):
        e = np.zeros_like(flow)
        e[idx] = h
        num[idx] = (f(flow + e, src) - f(flow - e, src)) / (2 * h)
    np.testing.assert_allclose(gf, num, rtol=1e-4, atol=1e-7)
    e = np.zeros_like(src)
    e[3, 2, 1] = h
    assert gs[3, 2, 1] == pytest.approx((f(flow, src + e) - f(flow, src - e)) / (2 * h), rel=1e-4, abs=1e-9)


@given(st.floats(0, 1), arrays(np.float64, (4, 5, 2), elements=st.floats(-3, 3)))
def test_constant_image_is_invariant(c, flow):
    res = inverse_warp(np.full((4, 5, 1), c), flow)
    np.testing.assert_allclose(res.warped, c, atol=1e-15)


def test_image_warp_matches_functions(rng):
    src = rng.random((5, 7, 3))
    flow = rng.normal(0, 1.5, (5, 7, 2))
    up = rng.normal(size=src.shape)
    w = ImageWarp(src, flow)
    ref = inverse_warp(src, flow)
    np.testing.assert_array_equal(w.result.warped, ref.warped)
    np.testing.assert_array_equal(w.result.valid, ref.valid)
    np.testing.assert_allclose(w.flow_grad(up), inverse_warp_vjp(src, flow, up)[0], atol=1e-15)
