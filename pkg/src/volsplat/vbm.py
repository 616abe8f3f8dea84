"""Wavelet-domain initialization of Gaussian primitives from a volume.

The volume is decomposed with an orthonormal separable 3D Haar transform.
Every wavelet cell (one position of one decomposition level) is a candidate
primitive whose sampling weight is the summed magnitude of its coefficients;
K cells are drawn without replacement and turned into isotropic Gaussians
sized to the cell and colored through the transfer function.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .gaussians import GaussianSet
from .volume import TransferFunction, Volume, apply_tf, trilinear

log = logging.getLogger(__name__)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
SUBBANDS = tuple("".join(p) for p in itertools.product("LH", repeat=3))
DETAIL_BANDS = SUBBANDS[1:]


@dataclass
class WaveletLevel:
    approx: np.ndarray
    details: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]


@dataclass
class WaveletPyramid:
    levels: list[WaveletLevel]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def coarsest(self) -> np.ndarray:
        return self.levels[-1].approx

    def coefficients(self):
        for lev in self.levels:
            yield from lev.details.values()
        yield self.coarsest


def _pad_even(x: np.ndarray) -> np.ndarray:
    pad = [(0, n % 2) for n in x.shape]
    return np.pad(x, pad, mode="edge") if any(p for _, p in pad) else x


def _split(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    b = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return (a + b) * _INV_SQRT2, (a - b) * _INV_SQRT2


def _merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    a = (lo + hi) * _INV_SQRT2
    b = (lo - hi) * _INV_SQRT2
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape)
    idx = [slice(None)] * 3
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = a
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = b
    return out


def haar_analysis_level(x: np.ndarray) -> dict[str, np.ndarray]:
    bands = {"": _pad_even(x)}
    for axis in range(3):
        nxt = {}
        for key, arr in bands.items():
            lo, hi = _split(arr, axis)
            nxt[key + "L"], nxt[key + "H"] = lo, hi
        bands = nxt
    return bands


def haar_synthesis_level(bands: dict[str, np.ndarray]) -> np.ndarray:
    for axis in (2, 1, 0):
        nxt = {}
        for key in {k[:axis] for k in bands}:
            nxt[key] = _merge(bands[key + "L"], bands[key + "H"], axis)
        bands = nxt
    return bands[""]


def max_levels(dims) -> int:
    return int(np.floor(np.log2(min(dims))))


def haar3d(volume, n_levels: int) -> WaveletPyramid:
    """Multi-level orthonormal 3D Haar analysis with edge-replicated padding."""
    x = volume.values if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float64)
    if n_levels < 1 or n_levels > max_levels(x.shape):
        raise ContractError(f"n_levels must be in [1, {max_levels(x.shape)}] for dims {x.shape}, got {n_levels}")
    levels = []
    for _ in range(n_levels):
        bands = haar_analysis_level(x)
        approx = bands.pop("LLL")
        levels.append(WaveletLevel(approx, {k: bands[k] for k in DETAIL_BANDS}, tuple(x.shape)))
        x = approx
    return WaveletPyramid(levels)


def ihaar3d(pyramid: WaveletPyramid) -> np.ndarray:
    """Inverse transform; returns the original (unpadded) grid."""
    x = pyramid.coarsest
    for lev in reversed(pyramid.levels):
        bands = dict(lev.details)
        bands["LLL"] = x
        full = haar_synthesis_level(bands)
        sx, sy, sz = lev.input_shape
        x = full[:sx, :sy, :sz]
    return x


def _cell_weights(pyramid: WaveletPyramid) -> list[np.ndarray]:
    weights = []
    for li, lev in enumerate(pyramid.levels):
        w = sum(np.abs(d) for d in lev.details.values())
        if li == pyramid.n_levels - 1:
            w = w + np.abs(lev.approx)
        weights.append(w)
    return weights


def _gaussians_at(volume: Volume, tf: TransferFunction, mu: np.ndarray, scale: np.ndarray) -> GaussianSet:
    lo, hi = volume.bbox
    mu = np.clip(mu, lo, hi)
    rgba = apply_tf(tf, trilinear(volume, mu))
    k = len(mu)
    rot = np.zeros((k, 4))
    rot[:, 0] = 1.0
    return GaussianSet(mu, np.clip(rgba[:, 3], 0.01, 0.99), rot, scale, rgba[:, :3], volume.extent)


def sample_gaussians(pyramid: WaveletPyramid, volume: Volume, tf: TransferFunction, K: int,
                     seed: int = 0) -> GaussianSet:
    """Draw K wavelet cells with probability proportional to coefficient magnitude.

    Sampling without replacement uses exponential race keys
    (``-log(u) / w``, smallest K win).  Output is ordered by cell index.
    """
    if K < 1:
        raise ContractError("K must be at least 1")
    rng = np.random.default_rng(seed)
    weights = _cell_weights(pyramid)
    sizes = [w.size for w in weights]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = np.concatenate([w.reshape(-1) for w in weights])
    u = rng.random(flat.size)
    candidates = np.flatnonzero(flat > 0)
    if len(candidates) >= K:
        keys = -np.log(u[candidates]) / flat[candidates]
        chosen = np.sort(candidates[np.argpartition(keys, K - 1)[:K]])
        n_fill = 0
    else:
        chosen = candidates
        n_fill = K - len(candidates)
    mus, scales = [], []
    spacing = volume.spacing
    for li, w in enumerate(weights):
        sel = chosen[(chosen >= offsets[li]) & (chosen < offsets[li + 1])] - offsets[li]
        if not len(sel):
            continue
        cell = 2 ** (li + 1)
        ijk = np.stack(np.unravel_index(sel, w.shape), axis=1).astype(np.float64)
        mus.append(volume.origin + (ijk * cell + (cell - 1) / 2.0) * spacing)
        scales.append(np.tile(0.5 * cell * spacing, (len(sel), 1)))
    if n_fill:
        log.warning("only %d nonzero wavelet cells for K=%d; filling %d Gaussians from occupied voxels",
                    len(candidates), K, n_fill)
        occupied = np.flatnonzero(volume.values.reshape(-1) > 0)
        if occupied.size == 0:
            occupied = np.arange(volume.values.size)
        pick = np.sort(rng.choice(occupied, size=n_fill, replace=n_fill > occupied.size))
        ijk = np.stack(np.unravel_index(pick, volume.dims), axis=1).astype(np.float64)
        mus.append(volume.origin + ijk * spacing)
        scales.append(np.tile(0.5 * spacing, (n_fill, 1)))
    return _gaussians_at(volume, tf, np.concatenate(mus), np.concatenate(scales))


def vbm_init(volume: Volume, tf: TransferFunction, K: int, seed: int = 0, n_levels: int | None = None) -> GaussianSet:
    """Haar decomposition followed by :func:`sample_gaussians`."""
    if n_levels is None:
        n_levels = min(4, max_levels(volume.dims))
    return sample_gaussians(haar3d(volume, n_levels), volume, tf, K, seed)


def uniform_init(volume: Volume, tf: TransferFunction, K: int, seed: int = 0) -> GaussianSet:
    """Ablation baseline: centers uniform in the volume box, equal isotropic sizes."""
    if K < 1:
        raise ContractError("K must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = volume.bbox
    mu = rng.uniform(lo, hi, size=(K, 3))
    side = 0.5 * (np.prod(hi - lo) / K) ** (1.0 / 3.0)
    return _gaussians_at(volume, tf, mu, np.full((K, 3), side))
