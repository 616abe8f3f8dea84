import numpy as np
import pytest

from volsplat.camera import Camera, look_at, make_orbit_rig
from volsplat.errors import ContractError, FormatError
from volsplat.losses import psnr
from volsplat.volume import (TransferFunction, Volume, apply_tf, dvr_render, gen_synthetic_volume, load_tf,
                             load_volume, preset_tf, save_tf, save_volume, trilinear)


def cam_for(volume, size=32, elev=20.0, radius=2.5):
    return make_orbit_rig(2, radius, (elev,), width=size, height=size)[0]


def test_shell_volume_structure_and_determinism():
    v = gen_synthetic_volume("shell", 32)
    a = gen_synthetic_volume("shell", 32)
    assert np.array_equal(v.values, a.values)
    lo, hi = v.bbox
    assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)
    # high on the shell, low at the center and corners
    assert trilinear(v, np.array([0.35, 0.0, 0.0])) > 0.9
    assert trilinear(v, np.zeros(3)) < 0.05
    assert v.values.min() == 0.0 and v.values.max() == 1.0


@pytest.mark.parametrize("kind", ["blobs", "filtered_noise", "shell"])
def test_synthetic_kinds_span_unit_range(kind):
    v = gen_synthetic_volume(kind, 16, seed=1)
    assert v.values.min() <= 0.05 and v.values.max() >= 0.95
    assert np.array_equal(v.values, gen_synthetic_volume(kind, 16, seed=1).values)


def test_synthetic_too_small_and_unknown():
    with pytest.raises(ContractError):
        gen_synthetic_volume("shell", 4)
    with pytest.raises(ContractError):
        gen_synthetic_volume("torus", 16)


def test_apply_tf_examples():
    tf = TransferFunction.from_pairs([(0.0, (0, 0, 0, 0)), (1.0, (1, 1, 1, 1))])
    assert np.allclose(apply_tf(tf, 0.5), [0.5] * 4)
    shell = preset_tf("shell")
    assert np.array_equal(apply_tf(shell, 0.0), shell.rgba[0])
    assert np.array_equal(apply_tf(shell, 1.0), shell.rgba[-1])


def test_tf_validation_and_file_round_trip(tmp_path):
    with pytest.raises(ContractError):
        TransferFunction(np.array([0.0, 0.5]), np.zeros((2, 4)))
    tf = preset_tf("fire")
    save_tf(tmp_path / "tf.txt", tf)
    back = load_tf(tmp_path / "tf.txt")
    assert np.array_equal(back.points, tf.points) and np.array_equal(back.rgba, tf.rgba)
    (tmp_path / "bad.txt").write_text("{}")
    with pytest.raises(FormatError):
        load_tf(tmp_path / "bad.txt")


def test_trilinear_examples():
    vals = np.zeros((2, 2, 2))
    vals[1] = 1.0
    v = Volume(vals, np.ones(3), np.zeros(3))
    assert trilinear(v, np.array([1.0, 0.0, 1.0])) == 1.0
    assert trilinear(v, np.array([0.5, 0.3, 0.7])) == pytest.approx(0.5)
    assert trilinear(v, np.array([1.5, 0.0, 0.0])) == 0.0


@pytest.mark.parametrize("stype", ["u8", "u16", "f32"])
def test_volume_file_round_trip(tmp_path, stype):
    v = gen_synthetic_volume("blobs", (9, 10, 11), seed=2)
    save_volume(tmp_path / "v.raw", tmp_path / "v.meta", v, stype)
    back = load_volume(tmp_path / "v.raw", tmp_path / "v.meta")
    assert back.dims == (9, 10, 11)
    tol = {"u8": 1 / 255, "u16": 1 / 65535, "f32": 1e-6}[stype]
    assert np.abs(back.values - v.values).max() <= tol


def test_volume_file_errors(tmp_path):
    v = gen_synthetic_volume("blobs", 8)
    save_volume(tmp_path / "v.raw", tmp_path / "v.meta", v, "u8")
    (tmp_path / "short.raw").write_bytes((tmp_path / "v.raw").read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_volume(tmp_path / "short.raw", tmp_path / "v.meta")
    meta = (tmp_path / "v.meta").read_text().replace('"u8"', '"f16"')
    (tmp_path / "bad.meta").write_text(meta)
    with pytest.raises(FormatError):
        load_volume(tmp_path / "v.raw", tmp_path / "bad.meta")


def test_dvr_opaque_first_sample_gives_exact_color():
    vol = Volume(np.ones((4, 4, 4)), np.full(3, 1 / 3), np.full(3, -0.5))
    tf = TransferFunction.from_pairs([(0.0, (1, 0, 0, 1)), (1.0, (1, 0, 0, 1))])
    img, T = dvr_render(vol, tf, cam_for(vol, 16, elev=0.0), return_transmittance=True)
    center = img.pixels[8, 8]
    assert np.array_equal(center, [1.0, 0.0, 0.0]) and T[8, 8] == 0.0


def test_dvr_transparent_tf_is_black_and_degenerate_camera_rejected():
    vol = gen_synthetic_volume("shell", 16)
    tf = TransferFunction.from_pairs([(0.0, (1, 1, 1, 0)), (1.0, (1, 1, 1, 0))])
    img, T = dvr_render(vol, tf, cam_for(vol), return_transmittance=True)
    assert not img.pixels.any() and np.all(T == 1.0)
    with pytest.raises(ContractError):
        dvr_render(vol, tf, cam_for(vol), step_size=0.0)


def test_dvr_weights_sum_to_one_minus_transmittance():
    # for a gray TF the color channel equals accumulated opacity
    vol = gen_synthetic_volume("blobs", 24, seed=3)
    tf = TransferFunction.from_pairs([(0.0, (1, 1, 1, 0)), (1.0, (1, 1, 1, 0.8))])
    img, T = dvr_render(vol, tf, cam_for(vol), return_transmittance=True)
    assert np.allclose(img.pixels[..., 0], 1.0 - T, atol=1e-12)
    assert np.all((T >= 0) & (T <= 1))


def test_dvr_deterministic_and_rotation_invariant():
    vol = gen_synthetic_volume("shell", 32)
    tf = preset_tf("shell")
    cam = cam_for(vol, 48)
    a = dvr_render(vol, tf, cam)
    assert np.array_equal(a.pixels, dvr_render(vol, tf, cam).pixels)
    # rotate the grid by 90 degrees about z and the camera with it
    rot = Volume(np.rot90(vol.values, k=1, axes=(0, 1)).copy(), vol.spacing, vol.origin)
    G = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R2 = cam.rotation @ G.T
    cam2 = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, R2, cam.translation)
    assert psnr(dvr_render(vol, tf, cam2), dvr_render(rot, tf, cam2)) > 35 or \
        psnr(a, dvr_render(rot, tf, cam2)) > 35


def test_dvr_error_shrinks_as_step_is_refined():
    vol = gen_synthetic_volume("shell", 32)
    tf = preset_tf("shell")
    cam = cam_for(vol, 32)
    h = vol.spacing.min()
    ref = dvr_render(vol, tf, cam, step_size=h / 8)
    values = [psnr(dvr_render(vol, tf, cam, step_size=h * f), ref) for f in (1.0, 0.5, 0.25)]
    assert values[0] < values[1] < values[2]
    assert values[0] > 35
