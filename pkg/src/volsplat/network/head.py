"""Map latent tokens to Gaussian parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..gaussians import GaussianSet
from .geometry import TokenSet3D
from .layers import Weights

MAX_OFFSET = 0.05       # position residual bound, in scene extents
SCALE_RANGE = (1e-4, 0.5)
OPACITY_LOGIT_BOUND = 20.0


@dataclass
class HeadOutput:
    """Gaussian parameters as tensors, so a rendering loss can flow back."""

    mu: Tensor
    opacity: Tensor
    rot: Tensor
    scale: Tensor
    color: Tensor
    scene_extent: float

    def arrays(self):
        return self.mu, self.opacity, self.rot, self.scale, self.color

    def to_gaussian_set(self) -> GaussianSet:
        return GaussianSet(self.mu.data.copy(), self.opacity.data.copy(), self.rot.data.copy(),
                           self.scale.data.copy(), self.color.data.copy(), self.scene_extent)


def gaussian_head(latents: TokenSet3D, init: GaussianSet, w: Weights) -> HeadOutput:
    """Linear map to 14 raw outputs, squashed into valid Gaussian parameters."""
    if len(latents) != len(init):
        raise ContractError(f"{len(latents)} latents for {len(init)} initial Gaussians")
    e = init.scene_extent
    raw = ad.matmul(latents.tokens, w["head.w"]) + w["head.b"]
    cols = lambda a, b: ad.index(raw, (slice(None), slice(a, b)))  # noqa: E731
    mu = init.mu + (MAX_OFFSET * e) * ad.tanh(cols(0, 3))
    opacity = ad.sigmoid(ad.clip(cols(3, 4), -OPACITY_LOGIT_BOUND, OPACITY_LOGIT_BOUND)).reshape(-1)
    r = cols(4, 8)
    n2 = ad.tsum(ad.square(r), axis=1, keepdims=True)
    degenerate = n2.data < 1e-24
    safe = ad.where(degenerate, 1.0, n2)
    rot = ad.where(degenerate, init.rot, r / ad.sqrt(safe))
    scale = e * ad.clip(ad.exp(ad.clip(cols(8, 11), -30.0, 30.0)), *SCALE_RANGE)
    color = ad.sigmoid(cols(11, 14))
    return HeadOutput(mu, opacity, rot, scale, color, e)
