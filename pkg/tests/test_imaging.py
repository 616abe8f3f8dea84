import numpy as np
import pytest

from volsplat.errors import ContractError, FormatError
from volsplat.imaging import Image, read_image, to_uint8, write_image


def test_uint8_rounds_half_up():
    assert to_uint8(np.array([0.0, 0.5 / 255, 1.0, 1.5, -0.2])).tolist() == [0, 1, 255, 255, 0]


@pytest.mark.parametrize("suffix", [".ppm", ".png"])
def test_round_trip_of_quantized_image(tmp_path, suffix):
    rng = np.random.default_rng(3)
    img = Image(rng.integers(0, 256, (7, 5, 3)) / 255.0)
    write_image(tmp_path / f"a{suffix}", img)
    back = read_image(tmp_path / f"a{suffix}")
    assert np.array_equal(back.pixels, img.pixels)
    assert (back.height, back.width) == (7, 5)


def test_bad_ppm_and_bad_shape(tmp_path):
    (tmp_path / "x.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(FormatError):
        read_image(tmp_path / "x.ppm")
    (tmp_path / "y.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00")
    with pytest.raises(FormatError):
        read_image(tmp_path / "y.ppm")
    with pytest.raises(ContractError):
        Image(np.zeros((4, 4)))
