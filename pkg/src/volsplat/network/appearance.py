"""Multi-view 2D transformer: patch tokens, camera token, alternating attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..camera import Camera, encode_camera
from ..errors import ContractError
from ..imaging import Image
from .config import NetConfig
from .layers import Weights, block, mlp


@dataclass
class TokenGrid2D:
    """Per-view tokens (N, n_patches + 1, D); slot 0 is the camera token."""

    tokens: Tensor
    grid_shape: tuple[int, int]

    @property
    def n_views(self) -> int:
        return self.tokens.shape[0]


def _stack_images(images) -> np.ndarray:
    if isinstance(images, np.ndarray) and images.ndim == 4:
        return images.astype(np.float64)
    if isinstance(images, Image):
        images = [images]
    arrs = [im.pixels if isinstance(im, Image) else np.asarray(im, dtype=np.float64) for im in images]
    if not arrs or len({a.shape for a in arrs}) != 1:
        raise ContractError("need at least one view, all of one image size")
    return np.stack(arrs)


def patchify(images, patch: int, w: Weights) -> TokenGrid2D:
    """Linear embedding of non-overlapping patches; slot 0 is left at zero."""
    x = _stack_images(images)
    n, hgt, wid, _ = x.shape
    if hgt % patch or wid % patch:
        raise ContractError(f"image size {hgt}x{wid} not divisible by patch {patch}")
    gh, gw = hgt // patch, wid // patch
    flat = x.reshape(n, gh, patch, gw, patch, 3).transpose(0, 1, 3, 2, 4, 5).reshape(n, gh * gw, -1)
    tok = ad.matmul(flat, w["patch.w"]) + w["patch.b"]
    slot = Tensor(np.zeros((n, 1, tok.shape[-1])))
    return TokenGrid2D(ad.concat([slot, tok], axis=1), (gh, gw))


def inject_camera(grid: TokenGrid2D, cameras: Sequence[Camera], w: Weights,
                  scene_extent: float = 1.0) -> TokenGrid2D:
    """Add a zero-initialized projection of the encoded pose to each camera slot."""
    if len(cameras) != grid.n_views:
        raise ContractError(f"{len(cameras)} cameras for {grid.n_views} views")
    codes = np.stack([encode_camera(c, scene_extent) for c in cameras])
    hidden = mlp(codes, w, "cam.enc")
    delta = ad.matmul(hidden, w["cam.zero.w"]) + w["cam.zero.b"]
    cam = ad.index(grid.tokens, (slice(None), slice(0, 1))) + delta.reshape(grid.n_views, 1, -1)
    rest = ad.index(grid.tokens, (slice(None), slice(1, None)))
    return TokenGrid2D(ad.concat([cam, rest], axis=1), grid.grid_shape)


def sincos_2d(gh: int, gw: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal embedding of patch (row, col); shared by every view."""
    quarter = dim // 4
    freq = 1.0 / 10000 ** (np.arange(quarter) / max(quarter, 1))
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    parts = []
    for coord in (rows.reshape(-1), cols.reshape(-1)):
        ang = coord[:, None] * freq[None]
        parts += [np.sin(ang), np.cos(ang)]
    emb = np.concatenate(parts, axis=1)
    return np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))


def appearance_forward(images, cameras: Sequence[Camera], w: Weights, cfg: NetConfig,
                       scene_extent: float = 1.0) -> tuple[list[Tensor], tuple[int, int]]:
    """Run the alternating frame/global stack; returns the tapped features.

    Each tap is an (N, n_patches + 1, D) tensor.  Views carry no ordering
    information, so permuting the inputs permutes the outputs.
    """
    grid = patchify(images, cfg.patch, w)
    n, t, d = grid.tokens.shape
    gh, gw = grid.grid_shape
    pos = np.concatenate([np.zeros((1, d)), sincos_2d(gh, gw, d)])
    cam = Tensor(np.ones((n, 1, 1))) * w["cam.token"]
    patches = ad.index(grid.tokens, (slice(None), slice(1, None)))
    x = ad.concat([cam, patches], axis=1) + pos
    x = inject_camera(TokenGrid2D(x, grid.grid_shape), cameras, w, scene_extent).tokens
    taps = set(cfg.taps())
    out = []
    for b in range(cfg.blocks2d):
        x = block(x, w, f"2d.{b}.frame", cfg.heads)
        x = block(x.reshape(1, n * t, d), w, f"2d.{b}.global", cfg.heads).reshape(n, t, d)
        if b in taps:
            out.append(x)
    return out, (gh, gw)
