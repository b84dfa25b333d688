import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from warpgeo.consistency import ConsistencyParams, flow_difference, flow_difference_vjp, inlier_mask


def uniform(h, w, u, v):
    f = np.zeros((h, w, 2))
    f[..., 0], f[..., 1] = u, v
    return f


def test_zero_flows():
    d, valid = flow_difference(np.zeros((4, 5, 2)), np.zeros((4, 5, 2)))
    assert not d.any() and np.all(valid == 1)


def test_exact_inverse_flows():
    d, valid = flow_difference(uniform(6, 12, 5, 0), uniform(6, 12, -5, 0))
    assert np.all(d[:, :7] == 0)
    assert np.all(valid[:, :7] == 1) and np.all(valid[:, 7:] == 0)


def test_partial_inverse():
    d, _ = flow_difference(uniform(6, 12, 5, 0), uniform(6, 12, -3, 0))
    np.testing.assert_array_equal(d[:, :7, 0], 2.0)
    np.testing.assert_array_equal(d[..., 1], 0.0)


def test_strict_threshold():
    delta = uniform(1, 1, 3.0, 0.0)
    flow = uniform(1, 1, 10.0, 0.0)
    assert inlier_mask(delta, flow, ConsistencyParams(3.0, 0.05))[0, 0] == 0


def test_relative_threshold():
    delta = uniform(1, 1, 4.0, 0.0)
    flow = uniform(1, 1, 100.0, 0.0)
    assert inlier_mask(delta, flow, ConsistencyParams(3.0, 0.05))[0, 0] == 1


def test_zero_delta_all_inlier():
    assert np.all(inlier_mask(np.zeros((3, 3, 2)), np.ones((3, 3, 2))) == 1)


def test_invalid_delta_is_outlier():
    m = inlier_mask(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), valid=np.array([[1, 0], [1, 1]]))
    assert m[0, 1] == 0 and m.sum() == 3


def test_params_validated():
    with pytest.raises(ValueError):
        ConsistencyParams(0.0, 0.05)
    with pytest.raises(ValueError):
        ConsistencyParams(1.0, -0.1)


flows = arrays(np.float64, (4, 4, 2), elements=st.floats(-20, 20))


@given(flows, flows, st.floats(0.1, 5), st.floats(0, 5))
def test_monotone_in_alpha(delta, f, a, extra):
    lo = inlier_mask(delta, f, ConsistencyParams(a, 0.05))
    hi = inlier_mask(delta, f, ConsistencyParams(a + extra, 0.05))
    assert np.all(hi >= lo)


@given(flows, flows, st.floats(1.0, 10.0))
def test_scale_invariance_in_relative_regime(delta, f, s):
    p = ConsistencyParams(0.5, 0.05)
    rel = p.beta_rel * np.linalg.norm(f, axis=-1) > p.alpha_px
    m1 = inlier_mask(delta, f, p)
    m2 = inlier_mask(s * delta, s * f, p)
    np.testing.assert_array_equal(m1[rel], m2[rel])


def test_vjp_matches_fd(rng):
    f_fwd = rng.uniform(-1.4, 1.4, (5, 6, 2))
    f_fwd = np.where(np.abs(f_fwd - np.round(f_fwd)) < 0.2, f_fwd + 0.35, f_fwd)
    f_bwd = rng.normal(size=(5, 6, 2))
    up = rng.normal(size=(5, 6, 2))
    g1, g2 = flow_difference_vjp(f_fwd, f_bwd, up)
    f = lambda a, b: np.sum(up * flow_difference(a, b)[0])  # noqa: E731
    h = 1e-6
    for idx in [(0, 0, 0), (2, 3, 1), (4, 5, 0)]:
        e = np.zeros_like(f_fwd)
        e[idx] = h
        assert g1[idx] == pytest.approx((f(f_fwd + e, f_bwd) - f(f_fwd - e, f_bwd)) / (2 * h), rel=1e-4, abs=1e-8)
        assert g2[idx] == pytest.approx((f(f_fwd, f_bwd + e) - f(f_fwd, f_bwd - e)) / (2 * h), rel=1e-4, abs=1e-8)
