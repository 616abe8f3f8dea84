import numpy as np
import pytest

from conftest import random_gaussians
from volsplat.errors import ContractError, FormatError
from volsplat.gaussians import SH0, GaussianSet, read_splat_ply, write_splat_ply


def test_validate_rejects_each_invariant():
    good = dict(mu=np.zeros((1, 3)), opacity=[0.5], rot=[[1, 0, 0, 0]], scale=[[1, 1, 1]], color=[[0.5] * 3])
    GaussianSet(**good).validate()
    for key, bad in [("opacity", [1.0]), ("rot", [[1, 1, 0, 0]]), ("scale", [[1, 0, 1]]),
                     ("color", [[1.5, 0, 0]]), ("mu", [[np.nan, 0, 0]])]:
        with pytest.raises(ContractError):
            GaussianSet(**{**good, key: bad}).validate()
    with pytest.raises(ContractError):
        GaussianSet(**good, scene_extent=0.0)
    with pytest.raises(ContractError):
        GaussianSet(np.zeros((0, 3)), [], np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3))).validate()


def test_raw_features_layout():
    gs = GaussianSet([[2.0, 0, 0]], [0.5], [[1, 0, 0, 0]], [[0.2, 0.2, 0.2]], [[0.1, 0.2, 0.3]], scene_extent=2.0)
    f = gs.raw_features()
    assert f.shape == (1, 14)
    assert np.allclose(f[0], [1, 0, 0, 0, 1, 0, 0, 0, np.log(0.1), np.log(0.1), np.log(0.1), 0.1, 0.2, 0.3])


def test_ply_round_trip_bytes_and_values(tmp_path, rng):
    gs = random_gaussians(rng, 57, extent=1.7)
    write_splat_ply(tmp_path / "a.ply", gs)
    back = read_splat_ply(tmp_path / "a.ply")
    write_splat_ply(tmp_path / "b.ply", back)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
    back.validate(rot_tol=1e-6)
    assert back.scene_extent == 1.7
    assert np.allclose(back.mu, gs.mu, atol=1e-6)
    assert np.allclose(back.color, gs.color, atol=1e-5)
    assert np.allclose(back.opacity, gs.opacity, atol=1e-6)


def test_ply_header_follows_3dgs_layout(tmp_path):
    gs = GaussianSet([[0, 0, 0]], [0.5], [[1, 0, 0, 0]], [[1, 1, 1]], [[0.5, 0.5, 0.5]])
    write_splat_ply(tmp_path / "a.ply", gs)
    raw = (tmp_path / "a.ply").read_bytes()
    head, body = raw.split(b"end_header\n")
    assert b"property float f_dc_0" in head and b"element vertex 1" in head
    vals = np.frombuffer(body, "<f4")
    # logit(0.5) = 0, log(1) = 0, color 0.5 -> f_dc 0
    assert np.allclose(vals, [0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0])
    assert SH0 == pytest.approx(0.28209479177)


def test_ply_errors(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply")
    with pytest.raises(FormatError):
        read_splat_ply(tmp_path / "x.ply")
    gs = GaussianSet([[0, 0, 0]], [0.5], [[1, 0, 0, 0]], [[1, 1, 1]], [[0.5, 0.5, 0.5]])
    write_splat_ply(tmp_path / "a.ply", gs)
    (tmp_path / "t.ply").write_bytes((tmp_path / "a.ply").read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_splat_ply(tmp_path / "t.ply")
