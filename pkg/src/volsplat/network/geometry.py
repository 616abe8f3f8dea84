"""Point transformer over Gaussian tokens.

Tokens are serialized along a Morton curve of their positions and attend
within fixed-size windows of that order.  Down blocks are separated by
voxel-grid pooling (mean of the tokens sharing a cell, cell size doubling
per stage); up blocks undo one pooling each by copying the parent token back
to its children and adding the skip connection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..camera import Camera
from ..errors import ContractError
from ..gaussians import GaussianSet
from .config import NetConfig
from .layers import Weights, block
from .pyramid import FeaturePyramid

MORTON_BITS = 10


@dataclass
class TokenSet3D:
    tokens: Tensor
    positions: np.ndarray
    level_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.level_index is None:
            self.level_index = np.zeros(len(self.positions), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class PoolHierarchy:
    """Positions per level and the child -> parent map between levels."""

    positions: list[np.ndarray]
    parents: list[np.ndarray]

    @property
    def n_levels(self) -> int:
        return len(self.positions)


def build_hierarchy(positions: np.ndarray, n_pools: int, cell: float) -> PoolHierarchy:
    """Voxel-grid pooling: tokens in one cell merge into a parent at their mean.

    Parents are ordered by cell index, so the hierarchy does not depend on
    the order of the input tokens.
    """
    pos = [np.asarray(positions, dtype=np.float64)]
    parents = []
    lo = pos[0].min(axis=0) if len(pos[0]) else np.zeros(3)
    for j in range(n_pools):
        size = cell * 2 ** j
        vox = np.floor((pos[-1] - lo) / size).astype(np.int64)
        _, parent = np.unique(vox, axis=0, return_inverse=True)
        parent = parent.reshape(-1)
        n_par = int(parent.max()) + 1 if len(parent) else 0
        counts = np.bincount(parent, minlength=n_par).astype(np.float64)
        sums = np.zeros((n_par, 3))
        np.add.at(sums, parent, pos[-1])
        parents.append(parent)
        pos.append(sums / counts[:, None])
    return PoolHierarchy(pos, parents)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.int64) & 0x3FF
    v = (v | (v << 16)) & 0x030000FF
    v = (v | (v << 8)) & 0x0300F00F
    v = (v | (v << 4)) & 0x030C30C3
    v = (v | (v << 2)) & 0x09249249
    return v


def morton_codes(positions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.maximum(hi - lo, 1e-12)
    q = np.clip(np.floor((positions - lo) / span * (2 ** MORTON_BITS - 1)), 0, 2 ** MORTON_BITS - 1)
    return _spread_bits(q[:, 0]) | (_spread_bits(q[:, 1]) << 1) | (_spread_bits(q[:, 2]) << 2)


def serialize(positions: np.ndarray, features: np.ndarray, lo, hi) -> np.ndarray:
    """Order by Morton code; exact ties fall back to position, then features."""
    codes = morton_codes(positions, lo, hi)
    keys = [features[:, j] for j in range(features.shape[1] - 1, -1, -1)]
    keys += [positions[:, j] for j in range(2, -1, -1)]
    keys.append(codes)
    return np.lexsort(keys)


def window_block(x: Tensor, positions: np.ndarray, w: Weights, prefix: str, heads: int, window: int,
                 lo, hi) -> Tensor:
    """Attention block applied inside consecutive windows of the Morton order."""
    n, d = x.shape
    order = serialize(positions, x.data, lo, hi)
    inv = np.empty_like(order)
    inv[order] = np.arange(n)
    xs = ad.take(x, order, axis=0)
    n_full = (n // window) * window
    parts = []
    if n_full:
        main = ad.index(xs, slice(0, n_full)).reshape(n_full // window, window, d)
        parts.append(block(main, w, prefix, heads).reshape(n_full, d))
    if n_full < n:
        rest = ad.index(xs, slice(n_full, n)).reshape(1, n - n_full, d)
        parts.append(block(rest, w, prefix, heads).reshape(n - n_full, d))
    out = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return ad.take(out, inv, axis=0)


def embed_gaussians(init: GaussianSet, w: Weights) -> Tensor:
    return ad.matmul(init.raw_features(), w["embed.w"]) + w["embed.b"]


def geometry_forward(init: GaussianSet, w: Weights, cfg: NetConfig, pyramid: FeaturePyramid | None = None,
                     cameras: Sequence[Camera] | None = None) -> TokenSet3D:
    """Latent token per initial Gaussian.

    With a pyramid and cameras, epipolar cross-attention runs after 3D block
    ``cfg.vgf_layer``; with ``pyramid=None`` the 3D stack runs alone.
    """
    from ..vgf import VgfWeights, epipolar_cross_attention, sample_features

    if pyramid is not None:
        if cameras is None or len(cameras) != pyramid.n_views:
            raise ContractError(f"pyramid has {pyramid.n_views} views but "
                                f"{0 if cameras is None else len(cameras)} cameras were given")
    extent = init.scene_extent
    hier = build_hierarchy(init.mu, cfg.blocks3d_down - 1, extent / cfg.grid_cells)
    lo, hi = init.mu.min(axis=0), init.mu.max(axis=0)
    x = embed_gaussians(init, w)
    skips: list[Tensor] = []
    for b in range(cfg.n_blocks3d):
        level = cfg.level_of_block(b)
        if 0 < b < cfg.blocks3d_down:
            skips.append(x)
            x = ad.segment_mean(x, hier.parents[level - 1], len(hier.positions[level]))
        elif b >= cfg.blocks3d_down:
            x = ad.take(x, hier.parents[level], axis=0) + skips.pop()
        x = window_block(x, hier.positions[level], w, f"3d.{b}", cfg.heads, cfg.window, lo, hi)
        if b == cfg.vgf_layer and pyramid is not None:
            samples = sample_features(pyramid, cameras, hier.positions[level], extent, cfg.distance_mode)
            x = epipolar_cross_attention(x, samples, VgfWeights.from_weights(w), cfg.heads)
    x = ad.layer_norm(x, w["3d.final.g"], w["3d.final.b"])
    return TokenSet3D(x, init.mu)
