"""Short gradient-based refinement of a Gaussian set against reference views."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .camera import Camera
from .errors import ContractError
from .gaussians import GaussianSet, logit
from .imaging import Image
from .losses import LossConfig, loss_total
from .optim import OptimState, adam_step
from .rasterizer import render

LOGIT_BOUND = 20.0


@dataclass(frozen=True)
class RefineRates:
    """Per-parameter Adam rates; position is multiplied by the scene extent."""

    position: float = 1.6e-4
    opacity: float = 0.05
    scale: float = 5e-3
    rotation: float = 1e-3
    color: float = 2.5e-3

    def for_extent(self, extent: float) -> dict[str, float]:
        return dict(mu=self.position * extent, opacity=self.opacity, scale=self.scale,
                    rot=self.rotation, color=self.color)


def to_free_params(gs: GaussianSet) -> dict[str, np.ndarray]:
    """Unconstrained coordinates: logits for opacity and color, log for scale."""
    return dict(
        mu=gs.mu.copy(),
        opacity=logit(np.clip(gs.opacity, 1e-6, 1 - 1e-6)),
        rot=gs.rot / np.linalg.norm(gs.rot, axis=1, keepdims=True),
        scale=np.log(gs.scale),
        color=logit(np.clip(gs.color, 1e-4, 1 - 1e-4)),
    )


def constrained(p: dict[str, Tensor]):
    """Map free parameters to (mu, opacity, rot, scale, color) tensors."""
    op = ad.sigmoid(ad.clip(p["opacity"], -LOGIT_BOUND, LOGIT_BOUND))
    return p["mu"], op, p["rot"], ad.exp(p["scale"]), ad.sigmoid(p["color"])


def from_free_params(p: dict[str, np.ndarray], extent: float) -> GaussianSet:
    mu, op, rot, scale, color = (t.data for t in constrained({k: Tensor(v) for k, v in p.items()}))
    rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(mu, op, rot, scale, color, extent)


def views_loss(p: dict[str, Tensor], views: Sequence[tuple[Image, Camera]], cfg: LossConfig,
               tile_size: int = 16) -> Tensor:
    mu, op, rot, scale, color = constrained(p)
    total = Tensor(0.0)
    for img, cam in views:
        total = total + loss_total(render(cam, mu, op, rot, scale, color, tile_size), img, cfg)
    return total


def post_optimize(gs: GaussianSet, views: Sequence[tuple[Image, Camera]], steps: int,
                  cfg: LossConfig = LossConfig(), rates: RefineRates = RefineRates(),
                  callback: Callable[[int, float], None] | None = None) -> GaussianSet:
    """Adam on every Gaussian parameter against the summed view loss.

    No densification or pruning: the output has the same count as the input.
    ``callback(step, loss)`` sees the loss evaluated before each update.
    """
    if steps < 0:
        raise ContractError("steps must be nonnegative")
    if steps == 0:
        return gs
    if not views:
        raise ContractError("post-optimization needs at least one view")
    params = to_free_params(gs)
    state = OptimState.zeros_like(params)
    lr = rates.for_extent(gs.scene_extent)
    for step in range(steps):
        with Tape() as tape:
            leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            loss = views_loss(leaves, views, cfg)
            g = backward(tape, loss)
            tape.clear()
        if callback is not None:
            callback(step, loss.item())
        grads = {k: g.get(t.node, np.zeros_like(params[k])) for k, t in leaves.items()}
        params, state = adam_step(params, grads, state, lr)
    return from_free_params(params, gs.scene_extent)
