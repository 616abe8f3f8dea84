"""Network hyperparameters."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..errors import ContractError

# reference-scale values, kept for documentation and for building a
# full-size config with NetConfig(**PAPER_SCALE); toy defaults differ
PAPER_SCALE = dict(blocks2d=24, blocks3d_down=5, blocks3d_up=4, pyramid_scales=3, layer_taps=4,
                   k_gaussians=150_000)


@dataclass(frozen=True)
class NetConfig:
    """Shape of the dual transformer.

    ``blocks2d`` counts (frame, global) attention pairs.  The 3D stack has
    ``blocks3d_down`` blocks separated by grid pooling followed by
    ``blocks3d_up`` blocks each preceded by unpooling, so the up count is
    one less than the down count and K tokens come out.  ``vgf_layer`` is
    the 0-based 3D block after which epipolar cross-attention runs.
    """

    patch: int = 8
    dim: int = 64
    heads: int = 4
    blocks2d: int = 4
    blocks3d_down: int = 2
    blocks3d_up: int = 1
    pyramid_scales: int = 2
    layer_taps: int = 2
    vgf_layer: int = 2
    k_gaussians: int = 4000
    window: int = 64
    mlp_ratio: int = 4
    grid_cells: int = 32          # finest pooling grid: cells per scene extent
    vgf: bool = True
    learn_beta: bool = True
    distance_mode: str = "center"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ContractError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.blocks3d_down < 1 or self.blocks3d_up != self.blocks3d_down - 1:
            raise ContractError("blocks3d_up must equal blocks3d_down - 1 so K tokens come back out")
        if not 0 <= self.vgf_layer < self.blocks3d_down + self.blocks3d_up:
            raise ContractError(f"vgf_layer {self.vgf_layer} outside the 3D stack")
        if not 1 <= self.layer_taps <= self.blocks2d:
            raise ContractError("layer_taps must lie in [1, blocks2d]")
        if self.pyramid_scales < 1 or self.patch < 1 or self.window < 1:
            raise ContractError("pyramid_scales, patch and window must be positive")
        if self.distance_mode not in ("center", "ray"):
            raise ContractError(f"unknown distance_mode {self.distance_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def n_blocks3d(self) -> int:
        return self.blocks3d_down + self.blocks3d_up

    def taps(self) -> list[int]:
        """2D pair indices whose outputs feed the pyramid (evenly spaced)."""
        return [round((l + 1) * self.blocks2d / self.layer_taps) - 1 for l in range(self.layer_taps)]

    def level_of_block(self, b: int) -> int:
        """Pooling level a 3D block runs at."""
        return b if b < self.blocks3d_down else self.blocks3d_down - 1 - (b - self.blocks3d_down + 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown NetConfig keys {sorted(unknown)}")
        return cls(**d)
