"""RGB images and their on-disk formats (binary PPM, 8-bit PNG)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError


@dataclass(frozen=True)
class Image:
    """Row-major RGB image with the origin at the top-left pixel.

    ``pixels`` has shape (height, width, 3) and float64 values in [0, 1].
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ContractError(f"image pixels must be (H, W, 3), got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def black(cls, width: int, height: int) -> "Image":
        return cls(np.zeros((height, width, 3)))


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 8 bits, rounding half up."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: Image) -> None:
    data = to_uint8(image.pixels)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_ppm(path) -> Image:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(f"{path}: only P6 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = raw[pos:]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} raster bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr.astype(np.float64) / 255.0)


def write_png(path, image: Image) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(to_uint8(image.pixels), mode="RGB").save(path, format="PNG")


def read_png(path) -> Image:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return Image(arr / 255.0)


def read_image(path) -> Image:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    return read_ppm(path)


def write_image(path, image: Image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, image)
    else:
        write_ppm(path, image)
