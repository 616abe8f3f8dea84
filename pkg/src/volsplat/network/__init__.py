"""Dual transformer: multi-view 2D appearance stack and 3D Gaussian-token stack."""
from .appearance import TokenGrid2D, appearance_forward, inject_camera, patchify
from .config import PAPER_SCALE, NetConfig
from .geometry import PoolHierarchy, TokenSet3D, build_hierarchy, geometry_forward, morton_codes
from .head import HeadOutput, gaussian_head
from .layers import as_weight_tensors
from .model import dtn_forward, infer
from .pyramid import FeaturePyramid, build_pyramid
from .weights import init_weights, load_checkpoint, save_checkpoint

__all__ = [
    "NetConfig", "PAPER_SCALE", "TokenGrid2D", "TokenSet3D", "FeaturePyramid", "PoolHierarchy",
    "HeadOutput", "patchify", "inject_camera", "appearance_forward", "build_pyramid",
    "build_hierarchy", "morton_codes", "geometry_forward", "gaussian_head", "dtn_forward", "infer",
    "init_weights", "save_checkpoint", "load_checkpoint", "as_weight_tensors",
]
