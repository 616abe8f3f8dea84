"""Image metrics and the training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .imaging import Image

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pixels(x):
    if isinstance(x, Image):
        return x.pixels
    if isinstance(x, Tensor):
        return x
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b) -> None:
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over all channels, capped at 99 dB."""
    a = _pixels(a)
    b = _pixels(b)
    a = a.data if isinstance(a, Tensor) else a
    b = b.data if isinstance(b, Tensor) else b
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _blur_matrix(n: int, g: np.ndarray) -> np.ndarray:
    """Valid-mode 1D convolution as an (n - len(g) + 1, n) matrix."""
    m = n - len(g) + 1
    A = np.zeros((m, n))
    for i in range(m):
        A[i, i:i + len(g)] = g
    return A


def ssim(a, b) -> Tensor:
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over channels.

    Valid-mode filtering (no padding).  Accepts arrays, images or tensors;
    the result is a scalar tensor that carries gradients to tensor inputs.
    """
    a = _pixels(a)
    b = _pixels(b)
    _same_shape(a, b)
    if a.ndim == 2:
        a = ad.reshape(a, a.shape + (1,))
        b = ad.reshape(b, b.shape + (1,))
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs images of at least {SSIM_WINDOW} px per side, got {h}x{w}")
    g = gaussian_window()
    Ay, Ax = _blur_matrix(h, g), _blur_matrix(w, g)

    def blur(x):
        return ad.einsum("ih,hwc,jw->ijc", Ay, x, Ax)

    a = ad.as_tensor(a)
    b = ad.as_tensor(b)
    mu_a, mu_b = blur(a), blur(b)
    aa, bb, ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(a * a) - aa
    var_b = blur(b * b) - bb
    cov = blur(a * b) - ab
    num = (2.0 * ab + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (aa + bb + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return ad.mean(num / den)


def ssim_value(a, b) -> float:
    return ssim(a, b).item()


@dataclass(frozen=True)
class LossConfig:
    """Weights of the L1, SSIM and image-gradient terms."""

    lambda1: float = 0.8
    lambda2: float = 0.2
    lambda3: float = 0.0

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if min(lams) < 0 or max(lams) <= 0:
            raise ContractError(f"loss weights must be nonnegative with one positive, got {lams}")


def _grad_diff(r: Tensor, g: np.ndarray) -> Tensor:
    dx = ad.index(r, (slice(None), slice(1, None))) - ad.index(r, (slice(None), slice(None, -1)))
    dy = ad.index(r, slice(1, None)) - ad.index(r, slice(None, -1))
    gx = g[:, 1:] - g[:, :-1]
    gy = g[1:] - g[:-1]
    return 0.5 * (ad.mean(ad.absolute(dx - gx)) + ad.mean(ad.absolute(dy - gy)))


def loss_total(render, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """l1 * mean|r - gt| + l2 * (1 - ssim) / 2 + l3 * mean|grad r - grad gt|."""
    r = ad.as_tensor(_pixels(render))
    g = _pixels(gt)
    g = g.data if isinstance(g, Tensor) else g
    _same_shape(r, g)
    total = Tensor(0.0)
    if cfg.lambda1:
        total = total + cfg.lambda1 * ad.mean(ad.absolute(r - g))
    if cfg.lambda2:
        total = total + cfg.lambda2 * 0.5 * (1.0 - ssim(r, g))
    if cfg.lambda3:
        total = total + cfg.lambda3 * _grad_diff(r, g)
    return total
