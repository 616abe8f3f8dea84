"""End-to-end feed-forward pass: initial Gaussians + views -> refined Gaussians."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..camera import Camera
from ..gaussians import GaussianSet
from .appearance import _stack_images, appearance_forward
from .config import NetConfig
from .geometry import geometry_forward
from .head import HeadOutput, gaussian_head
from .layers import Weights, as_weight_tensors
from .pyramid import build_pyramid


def dtn_forward(init: GaussianSet, images, cameras: Sequence[Camera], w: Weights, cfg: NetConfig) -> HeadOutput:
    """Tape-aware forward.  With ``cfg.vgf`` off the 2D stack is skipped
    entirely: it has no other route into the 3D tokens."""
    if cfg.vgf:
        x = _stack_images(images)
        taps, grid = appearance_forward(x, cameras, w, cfg, init.scene_extent)
        pyr = build_pyramid(taps, grid, w, cfg, x.shape[1:3])
        latents = geometry_forward(init, w, cfg, pyr, cameras)
    else:
        latents = geometry_forward(init, w, cfg)
    return gaussian_head(latents, init, w)


def infer(init: GaussianSet, images, cameras: Sequence[Camera], weights: Mapping[str, np.ndarray],
          cfg: NetConfig) -> GaussianSet:
    """Untracked forward pass returning a plain :class:`GaussianSet`."""
    return dtn_forward(init, images, cameras, as_weight_tensors(weights), cfg).to_gaussian_set()
