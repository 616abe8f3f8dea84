import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volsplat.camera import (Camera, canonical_quaternion, encode_camera, load_rig, look_at, make_orbit_rig,
                             make_protocol_rigs, project, rotation_to_quaternion, save_rig, unproject,
                             view_distance)
from volsplat.errors import ContractError
from volsplat.rasterizer import quat_to_rotmat


def axis_camera():
    return Camera(100.0, 100.0, 64.0, 64.0, 128, 128)


def test_project_on_axis_and_offset():
    cam = axis_camera()
    assert project(cam, (0.0, 0.0, 5.0)) == (64.0, 64.0, 5.0)
    u, v, z = project(cam, (0.05, 0.0, 5.0))
    assert (u, v, z) == pytest.approx((65.0, 64.0, 5.0), abs=1e-12)


def test_point_behind_camera_is_flagged():
    u, v, z = project(axis_camera(), (0.0, 0.0, -1.0))
    assert z <= 0 and np.isnan(u) and np.isnan(v)


@given(st.floats(0, 128), st.floats(0, 128), st.floats(0.1, 50))
def test_project_unproject_round_trip(u, v, depth):
    R, t = look_at((1.0, -2.0, 0.5), (0.0, 0.1, 0.0))
    cam = Camera(90.0, 110.0, 60.0, 70.0, 128, 128, R, t)
    p = unproject(cam, u, v, depth)
    assert np.allclose(project(cam, p[None])[0:2], [[u], [v]], atol=1e-9)
    assert project(cam, p)[2] == pytest.approx(depth, abs=1e-9)


def test_view_distance_examples():
    R, t = look_at((0.0, -3.0, 0.0), (0.0, 0.0, 0.0))
    cam = Camera(50, 50, 32, 32, 64, 64, R, t)
    assert view_distance(cam, cam.center, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert view_distance(cam, cam.center + np.array([0, 0, 2.0]), 2.0) == pytest.approx(1.0)
    R2, t2 = look_at((3.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    cam2 = Camera(50, 50, 32, 32, 64, 64, R2, t2)
    assert view_distance(cam, np.zeros(3), 1.0) == pytest.approx(view_distance(cam2, np.zeros(3), 1.0))
    # ray mode measures off-axis distance: the target on the axis is at 0
    assert view_distance(cam, np.zeros(3), 1.0, mode="ray") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractError):
        view_distance(cam, np.zeros(3), 1.0, mode="bogus")


@given(st.floats(-np.pi, np.pi), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_view_distance_rigid_invariance(angle, tx, ty, tz):
    R, t = look_at((0.3, -3.0, 0.4), (0.0, 0.0, 0.0))
    cam = Camera(50, 50, 32, 32, 64, 64, R, t)
    p = np.array([0.2, -0.1, 0.3])
    c, s = np.cos(angle), np.sin(angle)
    G = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    shift = np.array([tx, ty, tz])
    # world point x -> G x + shift; camera pose transforms as R G^T, t - R G^T shift
    R2 = R @ G.T
    cam2 = Camera(50, 50, 32, 32, 64, 64, R2, t - R2 @ shift)
    assert view_distance(cam2, G @ p + shift, 1.0) == pytest.approx(view_distance(cam, p, 1.0), abs=1e-12)


def test_orbit_rig_azimuths_and_gaze():
    rig = make_orbit_rig(4, 2.0, (0.0,))
    az = sorted(np.degrees(np.arctan2(c.center[1], c.center[0])) % 360 for c in rig)
    assert np.allclose(az, [0, 90, 180, 270], atol=1e-9)
    for cam in rig:
        d = cam.rotation @ (rig.target - cam.center)
        assert np.allclose(d / np.linalg.norm(d), [0, 0, 1], atol=1e-12)
        u, v, _ = project(cam, rig.target)
        assert abs(u - cam.cx) < 1e-6 and abs(v - cam.cy) < 1e-6


def test_orbit_rig_deterministic_and_polar_gaze_is_regularized():
    a = make_orbit_rig(6, 3.0, (10.0, 40.0))
    b = make_orbit_rig(6, 3.0, (10.0, 40.0))
    assert all(np.array_equal(x.rotation, y.rotation) and np.array_equal(x.translation, y.translation)
               for x, y in zip(a, b))
    R, _ = look_at((0.0, 0.0, 5.0), (0.0, 0.0, 0.0))
    assert np.allclose(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_protocol_rigs_interleave_heldout_views():
    train, held = make_protocol_rigs(24, 10, 2.5)
    assert len(train) == 24 and len(held) == 10
    tc = {tuple(np.round(c.center, 9)) for c in train}
    assert not any(tuple(np.round(c.center, 9)) in tc for c in held)


def test_camera_validation():
    with pytest.raises(ContractError):
        Camera(0.0, 1.0, 0, 0, 8, 8)
    with pytest.raises(ContractError):
        Camera(1.0, 1.0, 0, 0, 8, 8, np.diag([1.0, 1.0, -1.0]))


def test_encode_camera_identity_pose():
    cam = Camera(64.0, 48.0, 32.0, 24.0, 64, 48)
    assert np.allclose(encode_camera(cam), [1, 0, 0, 0, 0, 0, 0, 1, 1, 0.5, 0.5])


def test_encode_camera_injective_on_rig():
    codes = np.stack([encode_camera(c) for c in make_orbit_rig(24, 2.5, (-20, 10, 40))])
    d = np.linalg.norm(codes[:, None] - codes[None], axis=-1)
    assert np.all(d[~np.eye(len(codes), dtype=bool)] > 1e-6)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_quaternion_round_trip_and_sign(q):
    q = np.array(q)
    if np.linalg.norm(q) < 1e-3:
        return
    q = q / np.linalg.norm(q)
    R = quat_to_rotmat(q)
    back = rotation_to_quaternion(R)
    assert np.allclose(back, canonical_quaternion(q), atol=1e-9) or np.allclose(back, canonical_quaternion(-q), atol=1e-9)
    assert np.allclose(rotation_to_quaternion(quat_to_rotmat(-q)), back)


def test_rig_file_round_trip(tmp_path):
    rig = make_orbit_rig(5, 2.0, (10.0, 30.0), width=40, height=30)
    save_rig(tmp_path / "rig.txt", rig)
    back = load_rig(tmp_path / "rig.txt")
    for a, b in zip(rig, back):
        assert np.array_equal(a.rotation, b.rotation) and (a.fx, a.width) == (b.fx, b.width)
