"""Epipolar cross-attention from 3D Gaussian tokens into multi-view 2D features.

Each 3D token projects into every view; the feature maps of every scale and
tap are sampled bilinearly at the projected point.  The token then attends
over all N*S*L samples in one softmax whose logits carry a bias of
``-beta * d``, with ``d`` the distance between the token and the view.
Samples outside the image or behind the camera get ``-inf`` logits; a token
with no valid sample passes through unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import NEAR, Camera, project, view_distance
from .errors import ContractError
from .network.pyramid import FeaturePyramid


@dataclass
class EpipolarSampleSet:
    """Features sampled at the projections of K positions.

    ``values`` is (K, M, D) with keys ordered (view, scale, tap), M = N*S*L;
    ``valid`` is (K, M); ``distance`` is (K, N); ``view_of_key`` and
    ``sl_of_key`` give each key's view and flattened (scale, tap) index.
    """

    values: Tensor
    valid: np.ndarray
    distance: np.ndarray
    view_of_key: np.ndarray
    sl_of_key: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.values.shape[0]


@dataclass
class VgfWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln_g: Tensor
    ln_b: Tensor
    sl_embed: Tensor
    beta_raw: Tensor

    @classmethod
    def from_weights(cls, w: Mapping[str, Tensor]) -> "VgfWeights":
        return cls(w["vgf.wq"], w["vgf.wk"], w["vgf.wv"], w["vgf.wo"], w["vgf.ln.g"], w["vgf.ln.b"],
                   w["vgf.sl_embed"], w["vgf.beta_raw"])

    @property
    def beta(self) -> Tensor:
        """Nonnegative by construction."""
        return ad.softplus(self.beta_raw)


def vgf_bias(beta, d):
    """Additive attention logit for a key from a view at distance ``d``."""
    b, dd = np.asarray(beta, dtype=np.float64), np.asarray(d, dtype=np.float64)
    if np.any(b < 0) or np.any(dd < 0):
        raise ContractError("beta and d must be nonnegative")
    return -b * dd


def _bilinear_taps(x, y, w, h):
    """Indices and weights of the 4 neighbours of continuous cell coords."""
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=-1)
    wt = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return idx, wt


def sample_features(pyramid: FeaturePyramid, cameras: Sequence[Camera], positions,
                    scene_extent: float = 1.0, distance_mode: str = "center") -> EpipolarSampleSet:
    """Bilinear samples of every pyramid map at each position's projections.

    A map of size (H_s, W_s) covers the image, so pixel coordinate u maps to
    cell coordinate ``u * W_s / W - 0.5`` (cell centers at integers).
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        raise ContractError("positions must be finite")
    n = pyramid.n_views
    if len(cameras) != n:
        raise ContractError(f"{len(cameras)} cameras for a pyramid of {n} views")
    k = len(pos)
    H, W = pyramid.image_size
    us, vs, ok = np.zeros((n, k)), np.zeros((n, k)), np.zeros((n, k), dtype=bool)
    dist = np.zeros((k, n))
    for i, cam in enumerate(cameras):
        u, v, z = project(cam, pos)
        inside = (z > NEAR) & (u >= 0) & (u < W) & (v >= 0) & (v < H)
        ok[i] = inside
        us[i] = np.where(inside, u, 0.0)
        vs[i] = np.where(inside, v, 0.0)
        dist[:, i] = view_distance(cam, pos, scene_extent, distance_mode)
    sl = pyramid.n_scales * pyramid.n_taps
    per_sl = []
    for s in range(pyramid.n_scales):
        for l in range(pyramid.n_taps):
            fmap = pyramid.maps[s][l]
            _, hs, ws, d = fmap.shape
            idx, wt = _bilinear_taps(us * ws / W - 0.5, vs * hs / H - 0.5, ws, hs)
            idx = idx + (np.arange(n) * hs * ws)[:, None, None]
            wt = wt * ok[..., None]
            table = fmap.reshape(n * hs * ws, d)
            # (N, K, 4) -> (K, N, 4) so rows come out token-major
            got = ad.gather_weighted(table, idx.transpose(1, 0, 2).reshape(k * n, 4),
                                     wt.transpose(1, 0, 2).reshape(k * n, 4))
            per_sl.append(got.reshape(k, n, 1, d))
    d = per_sl[0].shape[-1]
    values = ad.concat(per_sl, axis=2).reshape(k, n * sl, d)
    keys = np.arange(n * sl)
    valid = np.repeat(ok.T, sl, axis=1)
    return EpipolarSampleSet(values, valid, dist, keys // sl, keys % sl)


def epipolar_cross_attention(tokens, samples: EpipolarSampleSet, vw: VgfWeights, heads: int,
                             return_attention: bool = False):
    """Residual cross-attention update of (K, D) tokens.

    The query side is layer-normalized and the output projection has no
    bias, so a token whose keys are all masked is returned bit-for-bit.
    """
    tokens = ad.as_tensor(tokens)
    k, d = tokens.shape
    if samples.n_tokens != k:
        raise ContractError(f"{samples.n_tokens} sample rows for {k} tokens")
    m = samples.values.shape[1]
    dh = d // heads
    h = ad.layer_norm(tokens, vw.ln_g, vw.ln_b)
    q = ad.matmul(h, vw.wq).reshape(k, heads, dh)
    key_in = samples.values + ad.take(vw.sl_embed, samples.sl_of_key, axis=0)
    kk = ad.matmul(key_in, vw.wk).reshape(k, m, heads, dh)
    vv = ad.matmul(samples.values, vw.wv).reshape(k, m, heads, dh)
    logits = ad.einsum("khd,kmhd->khm", q, kk) * (1.0 / np.sqrt(dh))
    bias = -vw.beta * samples.distance[:, samples.view_of_key]
    logits = logits + bias.reshape(k, 1, m)
    logits = ad.where(samples.valid[:, None, :], logits, -np.inf)
    att = ad.softmax(logits, axis=-1)
    upd = ad.einsum("khm,kmhd->khd", att, vv).reshape(k, d)
    out = tokens + ad.matmul(upd, vw.wo)
    return (out, att) if return_attention else out
