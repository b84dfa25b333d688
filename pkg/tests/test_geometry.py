import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from warpgeo.errors import NonPositiveDepthError
from warpgeo.geometry import (
    CameraIntrinsics,
    PoseSE3,
    backproject,
    compose,
    euler_to_rotation,
    pose_inverse,
    project,
    rigid_flow,
    rigid_flow_vjp,
    rotation_angle,
    rotation_to_euler,
)

K100 = CameraIntrinsics(100.0, 100.0, 50.0, 50.0)
angle = st.floats(-1.2, 1.2, allow_nan=False)
coord = st.floats(-3, 3, allow_nan=False)


def test_zero_angles_identity():
    np.testing.assert_array_equal(euler_to_rotation((0, 0, 0)), np.eye(3))


def test_quarter_turn_about_z():
    R = euler_to_rotation((0, 0, np.pi / 2))
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_composition_order_is_z_y_x():
    a, b, g = 0.3, -0.2, 0.5
    Rx = euler_to_rotation((a, 0, 0))
    Ry = euler_to_rotation((0, b, 0))
    Rz = euler_to_rotation((0, 0, g))
    np.testing.assert_allclose(euler_to_rotation((a, b, g)), Rz @ Ry @ Rx, atol=1e-15)


@given(angle, angle, angle)
def test_rotation_orthonormal(a, b, g):
    R = euler_to_rotation((a, b, g))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(angle, angle, angle)
def test_euler_round_trip(a, b, g):
    R = euler_to_rotation((a, b, g))
    np.testing.assert_allclose(euler_to_rotation(rotation_to_euler(R)), R, atol=1e-12)


def test_inverse_examples():
    assert pose_inverse(PoseSE3()).as_vector().tolist() == [0.0] * 6
    inv = pose_inverse(PoseSE3(translation=(1, 2, 3)))
    np.testing.assert_allclose(inv.as_vector(), [0, 0, 0, -1, -2, -3], atol=0)


@given(angle, angle, angle, coord, coord, coord)
def test_compose_with_inverse_is_identity(a, b, g, x, y, z):
    T = PoseSE3((a, b, g), (x, y, z))
    I = compose(T, pose_inverse(T))
    np.testing.assert_allclose(I.R, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(I.t, 0, atol=1e-10)


def test_backproject_examples():
    np.testing.assert_array_equal(backproject((50, 50), 7.0, K100), [0, 0, 7])
    np.testing.assert_allclose(backproject((150, 50), 10.0, K100), [10, 0, 10])
    with pytest.raises(NonPositiveDepthError):
        backproject((1, 1), 0.0, K100)


def test_project_examples():
    uv, front = project((0, 0, 5), K100)
    np.testing.assert_array_equal(uv, [50, 50])
    assert front
    uv, _ = project((1, 0, 10), K100)
    np.testing.assert_allclose(uv, [60, 50])
    _, front = project((0, 0, -1), K100)
    assert not front


@given(st.floats(0, 99), st.floats(0, 99), st.floats(0.1, 50))
def test_project_backproject_round_trip(u, v, d):
    uv, _ = project(backproject((u, v), d, K100), K100)
    np.testing.assert_allclose(uv, [u, v], atol=1e-9)


def test_identity_pose_zero_flow(rng):
    depth = rng.uniform(1, 20, (6, 9))
    flow, valid = rigid_flow(depth, PoseSE3(), K100)
    assert np.all(flow == 0.0) and np.all(valid == 1)


def test_pure_translation_closed_form():
    flow, valid = rigid_flow(np.full((8, 10), 10.0), PoseSE3(translation=(1, 0, 0)), K100)
    np.testing.assert_allclose(flow[..., 0], 10.0, atol=1e-9)
    np.testing.assert_allclose(flow[..., 1], 0.0, atol=1e-9)


@given(angle, angle, angle, st.floats(0.5, 50), st.floats(0.5, 50))
def test_rotation_only_depth_independent(a, b, g, d1, d2):
    pose = PoseSE3((a / 4, b / 4, g / 4))
    f1, _ = rigid_flow(np.full((5, 6), d1), pose, K100)
    f2, _ = rigid_flow(np.full((5, 6), d2), pose, K100)
    assert np.max(np.abs(f1 - f2)) < 1e-9


def test_behind_camera_flagged():
    pose = PoseSE3(translation=(0, 0, -20))
    _, valid = rigid_flow(np.full((3, 3), 10.0), pose, K100)
    assert np.all(valid == 0)


def test_vjp_matches_fd(rng):
    K = CameraIntrinsics(12, 12, 5.5, 3.5)
    depth = rng.uniform(4, 12, (4, 5))
    vec = np.array([0.03, -0.02, 0.01, 0.3, -0.2, 0.1])
    up = rng.normal(size=(4, 5, 2))
    gd, ga, gt = rigid_flow_vjp(depth, PoseSE3.from_vector(vec), K, up)
    f = lambda d, v: np.sum(up * rigid_flow(d, PoseSE3.from_vector(v), K)[0])  # noqa: E731
    h = 1e-6
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        num = (f(depth, vec + e) - f(depth, vec - e)) / (2 * h)
        assert np.concatenate([ga, gt])[i] == pytest.approx(num, rel=1e-4, abs=1e-8)
    e = np.zeros_like(depth)
    e[2, 3] = h
    assert gd[2, 3] == pytest.approx((f(depth + e, vec) - f(depth - e, vec)) / (2 * h), rel=1e-4)


def test_rotation_angle():
    assert rotation_angle(euler_to_rotation((0, 0, 0.3))) == pytest.approx(0.3, abs=1e-12)


def test_pose_matrix_round_trip(rng):
    p = PoseSE3.from_vector(rng.normal(0, 0.3, 6))
    q = PoseSE3.from_matrix(p.matrix())
    np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-14)


def test_intrinsics_level_matches_pooled_coordinates():
    K = CameraIntrinsics(100, 90, 47.5, 31.5)
    K1 = K.at_level(1)
    # pooled pixel j covers full-res pixels 2j, 2j+1
    assert K1.cx == pytest.approx((47.5 - 0.5) / 2)
    assert K1.fx == 50 and K1.fy == 45
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 0, 0)
