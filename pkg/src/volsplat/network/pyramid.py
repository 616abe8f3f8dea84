"""Reassemble tapped 2D tokens into multi-scale spatial feature maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from .config import NetConfig
from .layers import Weights


@dataclass
class FeaturePyramid:
    """``maps[s][l]`` is an (N, H_s, W_s, D) tensor; scale 0 is the finest.

    Scale ``s`` has side ``grid * 2**(S - 1 - s)``, so the coarsest scale is
    the token grid itself and each finer scale doubles the side.
    ``image_size`` is the (height, width) in pixels the maps cover.
    """

    maps: list[list[Tensor]]
    image_size: tuple[int, int]

    @property
    def n_scales(self) -> int:
        return len(self.maps)

    @property
    def n_taps(self) -> int:
        return len(self.maps[0])

    @property
    def n_views(self) -> int:
        return self.maps[0][0].shape[0]


def resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation matrix with half-pixel alignment and clamped edges."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    A = np.zeros((n_out, n_in))
    np.add.at(A, (np.arange(n_out), i0), 1.0 - f)
    np.add.at(A, (np.arange(n_out), i1), f)
    return A


def build_pyramid(taps: list[Tensor], grid_shape: tuple[int, int], w: Weights, cfg: NetConfig,
                  image_size: tuple[int, int]) -> FeaturePyramid:
    """Per tap and scale: drop the camera slot, project, resize bilinearly."""
    if len(taps) != cfg.layer_taps:
        raise ContractError(f"expected {cfg.layer_taps} taps, got {len(taps)}")
    gh, gw = grid_shape
    maps = []
    for s in range(cfg.pyramid_scales):
        factor = 2 ** (cfg.pyramid_scales - 1 - s)
        Ay, Ax = resize_matrix(gh * factor, gh), resize_matrix(gw * factor, gw)
        row = []
        for l, tap in enumerate(taps):
            n, _, d = tap.shape
            grid = ad.index(tap, (slice(None), slice(1, None))).reshape(n, gh, gw, d)
            proj = ad.matmul(grid, w[f"pyr.{s}.{l}.w"]) + w[f"pyr.{s}.{l}.b"]
            row.append(proj if factor == 1 else ad.einsum("ih,nhwc,jw->nijc", Ay, proj, Ax))
        maps.append(row)
    return FeaturePyramid(maps, tuple(image_size))
