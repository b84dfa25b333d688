import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from warpgeo.errors import DegenerateMaskError, DimensionMismatchError
from warpgeo.losses import (
    LossBreakdown,
    LossWeights,
    edge_aware_smoothness,
    edge_aware_smoothness_grad,
    geometric_consistency_loss,
    photometric_loss,
    photometric_loss_grad,
    ssim_map,
    ssim_map_vjp,
)
from warpgeo.warping import WarpResult

SSIM_02_08 = (2 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4)

images = arrays(np.float64, (5, 6, 3), elements=st.floats(0, 1))


def full(img):
    return WarpResult(img, np.ones(img.shape[:2]))


@given(images)
def test_ssim_self_similarity(a):
    np.testing.assert_allclose(ssim_map(a, a), 1.0, atol=1e-12)


def test_ssim_constant_pair():
    s = ssim_map(np.full((4, 4, 1), 0.2), np.full((4, 4, 1), 0.8))
    np.testing.assert_allclose(s, SSIM_02_08, rtol=1e-12)
    assert SSIM_02_08 == pytest.approx(0.4707, abs=1e-4)


def test_ssim_negated_pattern():
    checker = (np.indices((6, 6)).sum(axis=0) % 2)[..., None]
    a = 0.35 + 0.3 * checker
    b = 1.0 - a
    assert np.all(ssim_map(a, b)[1:-1, 1:-1] < 0)


def test_ssim_mismatch():
    with pytest.raises(DimensionMismatchError):
        ssim_map(np.zeros((3, 3, 1)), np.zeros((3, 4, 1)))


def test_photometric_perfect():
    img = np.random.default_rng(0).random((5, 5, 3))
    assert photometric_loss(img, full(img)) == pytest.approx(0.0, abs=1e-15)


def test_photometric_l1_limit():
    loss = photometric_loss(np.full((4, 4, 1), 0.2), full(np.full((4, 4, 1), 0.3)), alpha_ssim=0.0)
    assert loss == pytest.approx(0.1, abs=1e-15)


def test_photometric_constant_pair():
    loss = photometric_loss(np.full((4, 4, 1), 0.2), full(np.full((4, 4, 1), 0.8)))
    assert loss == pytest.approx(0.85 * (1 - SSIM_02_08) / 2 + 0.15 * 0.6, rel=1e-12)
    assert loss == pytest.approx(0.3150, abs=1e-4)


def test_photometric_degenerate():
    with pytest.raises(DegenerateMaskError):
        photometric_loss(np.zeros((3, 3, 1)), WarpResult(np.zeros((3, 3, 1)), np.zeros((3, 3))))


@given(images, images, st.integers(0, 4), st.integers(0, 5), st.floats(0, 1))
def test_masked_pixel_has_no_influence(t, b, i, j, value):
    mask = np.ones((5, 6))
    mask[i, j] = 0.0
    ref = photometric_loss_grad(t, full(b), mask)
    b2 = b.copy()
    b2[i, j] = value
    out = photometric_loss_grad(t, full(b2), mask)
    assert out[0] == ref[0]
    np.testing.assert_array_equal(out[1], ref[1])


def test_constant_depth_smooth():
    assert edge_aware_smoothness(np.full((5, 5), 3.0), np.random.default_rng(0).random((5, 5, 3))) == 0.0


def test_ramp_smoothness():
    depth = np.tile(np.arange(6.0), (4, 1))
    assert edge_aware_smoothness(depth, np.zeros((4, 6, 1))) == pytest.approx(1.0, abs=1e-15)
    guide = np.tile(2.0 * np.arange(6.0), (4, 1))[..., None]
    assert edge_aware_smoothness(depth, guide) == pytest.approx(np.exp(-2.0), rel=1e-12)


def test_flow_smoothness_sums_channels():
    f = np.zeros((4, 6, 2))
    f[..., 0] = np.arange(6.0)
    f[..., 1] = 2 * np.arange(6.0)
    assert edge_aware_smoothness(f, np.zeros((4, 6, 1))) == pytest.approx(3.0)


def test_smoothness_gradient_fd(rng):
    f = rng.normal(size=(5, 6, 2))
    g = rng.random((5, 6, 3))
    _, grad = edge_aware_smoothness_grad(f, g)
    h = 1e-6
    for idx in [(0, 0, 0), (2, 3, 1), (4, 5, 0), (3, 1, 1)]:
        e = np.zeros_like(f)
        e[idx] = h
        num = (edge_aware_smoothness(f + e, g) - edge_aware_smoothness(f - e, g)) / (2 * h)
        assert grad[idx] == pytest.approx(num, rel=1e-4, abs=1e-10)


def test_gc_examples():
    ones = np.ones((4, 4, 2))
    assert geometric_consistency_loss(np.zeros((4, 4, 2)), np.ones((4, 4))) == 0.0
    assert geometric_consistency_loss(ones, np.ones((4, 4))) == 2.0
    half = np.zeros((4, 4))
    half[:2] = 1
    assert geometric_consistency_loss(ones, half) == 2.0
    with pytest.raises(DegenerateMaskError):
        geometric_consistency_loss(ones, np.zeros((4, 4)))


@given(images, images)
def test_losses_nonnegative(a, b):
    assert photometric_loss(a, full(b)) >= 0
    assert edge_aware_smoothness(a[..., 0] + 1, b) >= 0


def test_ssim_vjp_fd(rng):
    a, b = rng.random((4, 5, 3)), rng.random((4, 5, 3))
    up = rng.normal(size=a.shape)
    ga, gb = ssim_map_vjp(a, b, up)
    h = 1e-6
    e = np.zeros_like(a)
    e[1, 2, 0] = h
    f = lambda x, y: np.sum(up * ssim_map(x, y))  # noqa: E731
    assert ga[1, 2, 0] == pytest.approx((f(a + e, b) - f(a - e, b)) / (2 * h), rel=1e-4)
    assert gb[1, 2, 0] == pytest.approx((f(a, b + e) - f(a, b - e)) / (2 * h), rel=1e-4)


def test_weights_validation_and_combine():
    with pytest.raises(ValueError):
        LossWeights(alpha_ssim=1.5)
    with pytest.raises(ValueError):
        LossWeights(lambda_gc=-1)
    w = LossWeights()
    parts = dict(l_rw=1.0, l_ds=2.0, l_fw=3.0, l_fs=4.0, l_gc=5.0)
    assert w.combine(parts) == 1 + 0.5 * 2 + 3 + 0.2 * 4 + 0.2 * 5


def test_breakdown_text_round_trip():
    b = LossBreakdown(0.1, 0.2, 0.3, 0.4, 0.5, 1.7, per_scale=[{"l_rw": 0.1, "total": 1 / 3}])
    assert LossBreakdown.from_text(b.to_text()) == b
