"""Volume-to-Gaussian-splat reconstruction on numpy.

Scalar volumes are ray-cast into reference images, seeded with Gaussians by
wavelet-weighted sampling, refined by a small dual transformer with
epipolar cross-attention, and optionally post-optimized through a
differentiable splat rasterizer.
"""
from .camera import Camera, ViewRig, make_orbit_rig, make_protocol_rigs, project
from .errors import ContractError, DimensionError, FormatError, VersionError, VolsplatError
from .gaussians import GaussianSet, read_splat_ply, write_splat_ply
from .imaging import Image, read_image, write_image
from .losses import LossConfig, loss_total, psnr, ssim_value
from .rasterizer import rasterize, rasterize_backward
from .refine import RefineRates, post_optimize
from .vbm import haar3d, ihaar3d, uniform_init, vbm_init
from .volume import TransferFunction, Volume, dvr_render, gen_synthetic_volume, preset_tf

__version__ = "0.1.0"

__all__ = [
    "Camera", "ViewRig", "make_orbit_rig", "make_protocol_rigs", "project",
    "VolsplatError", "ContractError", "DimensionError", "FormatError", "VersionError",
    "GaussianSet", "read_splat_ply", "write_splat_ply", "Image", "read_image", "write_image",
    "LossConfig", "loss_total", "psnr", "ssim_value", "RefineRates", "post_optimize",
    "rasterize", "rasterize_backward", "haar3d", "ihaar3d", "vbm_init", "uniform_init",
    "TransferFunction", "Volume", "dvr_render", "gen_synthetic_volume", "preset_tf",
]
