"""Differentiable tile-based Gaussian splatting.

Forward: EWA projection of every Gaussian, one global stable depth sort,
per-tile binning by the 3-sigma box, then front-to-back alpha blending per
pixel.  A pixel only blends Gaussians whose box contains its center, which
makes the output independent of the tile size.

Backward: exact gradients of the blending equation, accumulated per pixel in
back-to-front order and chained through the projection and the covariance
factorization.  The blending loops run serially, so every result is
bit-reproducible.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numba
import numpy as np

from .autodiff import Tensor, record
from .camera import NEAR, Camera
from .errors import ContractError
from .gaussians import Gaussian, GaussianSet
from .imaging import Image

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
DILATION = 0.3


# ----------------------------------------------------------------- geometry

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z), normalized first -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def covariance3d(rot, scale) -> np.ndarray:
    """Sigma = R S S^T R^T for (..., 4) quaternions and (..., 3) scales."""
    M = quat_to_rotmat(rot) * np.asarray(scale, dtype=np.float64)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    radius: float
    culled: bool = False


@dataclass
class _Projection:
    """Projected quantities for a whole set, plus what backward needs."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    radius: np.ndarray
    valid: np.ndarray
    tcam: np.ndarray
    J: np.ndarray
    Rq: np.ndarray
    sigma: np.ndarray


def _project_all(camera: Camera, mu, rot, scale) -> _Projection:
    W = camera.rotation
    tcam = mu @ W.T + camera.translation
    depth = tcam[:, 2]
    valid = depth > NEAR
    tz = np.where(valid, depth, 1.0)
    tx, ty = tcam[:, 0], tcam[:, 1]
    zeros = np.zeros_like(tz)
    J = np.stack([
        np.stack([camera.fx / tz, zeros, -camera.fx * tx / tz ** 2], axis=-1),
        np.stack([zeros, camera.fy / tz, -camera.fy * ty / tz ** 2], axis=-1),
    ], axis=1)
    Rq = quat_to_rotmat(rot)
    M = Rq * scale[:, None, :]
    sigma = M @ np.swapaxes(M, -1, -2)
    T = J @ W
    cov2d = T @ sigma @ np.swapaxes(T, -1, -2)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=-1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam)
    mean2d = np.stack([camera.fx * tx / tz + camera.cx, camera.fy * ty / tz + camera.cy], axis=-1)
    radius = np.where(valid, radius, 0.0)
    return _Projection(mean2d, cov2d, conic, depth, radius, valid, tcam, J, Rq, sigma)


def ewa_project(camera: Camera, gaussian: Gaussian) -> ProjectedGaussian:
    """Screen-space footprint of one Gaussian (culled if behind the near plane)."""
    p = _project_all(camera, gaussian.mu[None], np.asarray(gaussian.rot)[None],
                     np.asarray(gaussian.scale)[None])
    return ProjectedGaussian(p.mean2d[0], p.cov2d[0], float(p.depth[0]), np.asarray(gaussian.color),
                             float(gaussian.opacity), float(p.radius[0]), culled=not bool(p.valid[0]))


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _bin(order, x0, x1, y0, y1, tile, tiles_x, n_tiles):
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for g in order:
        if x0[g] > x1[g] or y0[g] > y1[g]:
            continue
        for ty in range(y0[g] // tile, y1[g] // tile + 1):
            for tx in range(x0[g] // tile, x1[g] // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    lists = np.empty(start[-1], dtype=np.int64)
    for g in order:
        if x0[g] > x1[g] or y0[g] > y1[g]:
            continue
        for ty in range(y0[g] // tile, y1[g] // tile + 1):
            for tx in range(x0[g] // tile, x1[g] // tile + 1):
                t = ty * tiles_x + tx
                lists[fill[t]] = g
                fill[t] += 1
    return start, lists


@numba.njit(cache=True)
def _forward(mean2d, conic, opac, color, x0, x1, y0, y1, start, lists, tile, tiles_x,
             width, height, img, trans, count):
    n_tiles = start.shape[0] - 1
    for t in range(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        for row in range(ty * tile, min((ty + 1) * tile, height)):
            for col in range(tx * tile, min((tx + 1) * tile, width)):
                px = col + 0.5
                py = row + 0.5
                T = 1.0
                r = 0.0
                gg = 0.0
                b = 0.0
                n = 0
                for s in range(start[t], start[t + 1]):
                    g = lists[s]
                    # box test and alpha inlined: a helper call here costs ~10x
                    if col < x0[g] or col > x1[g] or row < y0[g] or row > y1[g]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    a = min(ALPHA_MAX, opac[g] * np.exp(-0.5 * q))
                    if a < ALPHA_MIN:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < T_MIN:
                        break
                    w = a * T
                    r += w * color[g, 0]
                    gg += w * color[g, 1]
                    b += w * color[g, 2]
                    T = test_T
                    n += 1
                img[row, col, 0] = r
                img[row, col, 1] = gg
                img[row, col, 2] = b
                trans[row, col] = T
                count[row, col] = n


@numba.njit(cache=True)
def _backward(mean2d, conic, opac, color, x0, x1, y0, y1, start, lists, tile, tiles_x,
              width, height, gimg, d_mean, d_conic, d_opac, d_color):
    n_tiles = start.shape[0] - 1
    max_list = 0
    for t in range(n_tiles):
        max_list = max(max_list, start[t + 1] - start[t])
    ids = np.empty(max_list, dtype=np.int64)
    alphas = np.empty(max_list)
    Ts = np.empty(max_list)
    Gs = np.empty(max_list)
    dxs = np.empty(max_list)
    dys = np.empty(max_list)
    clamped = np.empty(max_list, dtype=np.bool_)
    for t in range(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        for row in range(ty * tile, min((ty + 1) * tile, height)):
            for col in range(tx * tile, min((tx + 1) * tile, width)):
                px = col + 0.5
                py = row + 0.5
                T = 1.0
                n = 0
                for s in range(start[t], start[t + 1]):
                    g = lists[s]
                    if col < x0[g] or col > x1[g] or row < y0[g] or row > y1[g]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    G = np.exp(-0.5 * q)
                    a = opac[g] * G
                    cl = a > ALPHA_MAX
                    a = min(ALPHA_MAX, a)
                    if a < ALPHA_MIN:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < T_MIN:
                        break
                    ids[n] = g
                    alphas[n] = a
                    Ts[n] = T
                    Gs[n] = G
                    dxs[n] = dx
                    dys[n] = dy
                    clamped[n] = cl
                    T = test_T
                    n += 1
                g0 = gimg[row, col, 0]
                g1 = gimg[row, col, 1]
                g2 = gimg[row, col, 2]
                # suffix sums of colour contributions behind the current Gaussian
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                for m in range(n - 1, -1, -1):
                    g = ids[m]
                    a = alphas[m]
                    Tm = Ts[m]
                    w = a * Tm
                    d_color[g, 0] += g0 * w
                    d_color[g, 1] += g1 * w
                    d_color[g, 2] += g2 * w
                    inv = 1.0 / (1.0 - a)
                    da = (g0 * (color[g, 0] * Tm - s0 * inv)
                          + g1 * (color[g, 1] * Tm - s1 * inv)
                          + g2 * (color[g, 2] * Tm - s2 * inv))
                    s0 += color[g, 0] * w
                    s1 += color[g, 1] * w
                    s2 += color[g, 2] * w
                    if clamped[m]:
                        continue
                    G = Gs[m]
                    d_opac[g] += da * G
                    dq = -0.5 * a * da
                    dx = dxs[m]
                    dy = dys[m]
                    d_conic[g, 0] += dq * dx * dx
                    d_conic[g, 1] += dq * 2.0 * dx * dy
                    d_conic[g, 2] += dq * dy * dy
                    d_mean[g, 0] += -dq * 2.0 * (conic[g, 0] * dx + conic[g, 1] * dy)
                    d_mean[g, 1] += -dq * 2.0 * (conic[g, 1] * dx + conic[g, 2] * dy)


# ------------------------------------------------------------------ driver

@dataclass
class RenderOutput:
    image: Image
    transmittance: np.ndarray
    contrib_count: np.ndarray
    _state: dict = field(default_factory=dict, repr=False)


def _fingerprint(camera: Camera, arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    h.update(np.concatenate([camera.intrinsics, camera.rotation.ravel(), camera.translation,
                             [camera.width, camera.height]]).tobytes())
    return h.hexdigest()


def _as_arrays(gs: GaussianSet):
    return gs.mu, gs.opacity, gs.rot, gs.scale, gs.color


def _prepare(camera, mu, rot, scale, width, height, tile):
    p = _project_all(camera, mu, rot, scale)
    idx = np.flatnonzero(p.valid)
    order = idx[np.argsort(p.depth[idx], kind="stable")]
    mx, my, r = p.mean2d[:, 0], p.mean2d[:, 1], p.radius
    with np.errstate(invalid="ignore"):
        x0 = np.clip(np.ceil(mx - r - 0.5), 0, width).astype(np.int64)
        x1 = np.clip(np.floor(mx + r - 0.5), -1, width - 1).astype(np.int64)
        y0 = np.clip(np.ceil(my - r - 0.5), 0, height).astype(np.int64)
        y1 = np.clip(np.floor(my + r - 0.5), -1, height - 1).astype(np.int64)
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    start, lists = _bin(order, x0, x1, y0, y1, tile, tiles_x, tiles_x * tiles_y)
    return p, (x0, x1, y0, y1), start, lists, tiles_x


def rasterize_arrays(camera: Camera, mu, opacity, rot, scale, color, img_size=None,
                     tile_size: int = 16) -> RenderOutput:
    """Array-level entry point behind :func:`rasterize`."""
    if img_size is not None:
        camera = camera if (camera.width, camera.height) == tuple(img_size) else camera.with_image_size(*img_size)
    width, height = camera.width, camera.height
    tile = int(min(tile_size, max(width, height))) if tile_size else max(width, height)
    mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(-1, 3)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
    rot = np.ascontiguousarray(rot, dtype=np.float64).reshape(-1, 4)
    scale = np.ascontiguousarray(scale, dtype=np.float64).reshape(-1, 3)
    color = np.ascontiguousarray(color, dtype=np.float64).reshape(-1, 3)
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    count = np.zeros((height, width), dtype=np.int64)
    if len(mu):
        p, box, start, lists, tiles_x = _prepare(camera, mu, rot, scale, width, height, tile)
        _forward(p.mean2d, p.conic, opacity, color, *box, start, lists, tile, tiles_x,
                 width, height, img, trans, count)
        state = dict(proj=p, box=box, start=start, lists=lists, tiles_x=tiles_x, tile=tile,
                     camera=camera, fingerprint=_fingerprint(camera, (mu, opacity, rot, scale, color)))
    else:
        state = dict(camera=camera, fingerprint=_fingerprint(camera, (mu, opacity, rot, scale, color)))
    return RenderOutput(Image(img), trans, count, state)


def rasterize(gaussians: GaussianSet, camera: Camera, img_size=None, tile_size: int = 16) -> RenderOutput:
    """Render a set; ``tile_size=None`` uses a single full-image tile."""
    return rasterize_arrays(camera, *_as_arrays(gaussians), img_size=img_size, tile_size=tile_size)


def _chain_projection(camera: Camera, p: _Projection, rot, scale, d_mean, d_conic):
    """Push screen-space gradients back to mu, rot (raw quaternion) and scale."""
    W = camera.rotation
    valid = p.valid
    # conic = inverse(cov2d): dL/dcov = -C G C with the symmetric-matrix view of dL/dconic
    C = np.stack([np.stack([p.conic[:, 0], p.conic[:, 1]], -1),
                  np.stack([p.conic[:, 1], p.conic[:, 2]], -1)], axis=1)
    Gc = np.stack([np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1),
                   np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1)], axis=1)
    d_cov = -C @ Gc @ C
    T = p.J @ W
    d_sigma = np.swapaxes(T, -1, -2) @ d_cov @ T
    d_T = 2.0 * d_cov @ T @ p.sigma
    d_J = d_T @ W.T
    tz = np.where(valid, p.tcam[:, 2], 1.0)
    tx, ty = p.tcam[:, 0], p.tcam[:, 1]
    fx, fy = camera.fx, camera.fy
    d_t = np.zeros_like(p.tcam)
    d_t[:, 0] = d_mean[:, 0] * fx / tz - d_J[:, 0, 2] * fx / tz ** 2
    d_t[:, 1] = d_mean[:, 1] * fy / tz - d_J[:, 1, 2] * fy / tz ** 2
    d_t[:, 2] = (-d_mean[:, 0] * fx * tx / tz ** 2 - d_mean[:, 1] * fy * ty / tz ** 2
                 - d_J[:, 0, 0] * fx / tz ** 2 - d_J[:, 1, 1] * fy / tz ** 2
                 + d_J[:, 0, 2] * 2 * fx * tx / tz ** 3 + d_J[:, 1, 2] * 2 * fy * ty / tz ** 3)
    d_mu = d_t @ W
    # Sigma = M M^T with M = R diag(s)
    M = p.Rq * scale[:, None, :]
    d_M = 2.0 * d_sigma @ M
    d_scale = np.einsum("kji,kji->ki", d_M, p.Rq)
    d_R = d_M * scale[:, None, :]
    q = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    w, x, y, z = q.T
    G = d_R
    d_qn = np.stack([
        2 * z * (G[:, 1, 0] - G[:, 0, 1]) + 2 * y * (G[:, 0, 2] - G[:, 2, 0]) + 2 * x * (G[:, 2, 1] - G[:, 1, 2]),
        2 * y * (G[:, 1, 0] + G[:, 0, 1]) + 2 * z * (G[:, 2, 0] + G[:, 0, 2]) + 2 * w * (G[:, 2, 1] - G[:, 1, 2])
        - 4 * x * (G[:, 1, 1] + G[:, 2, 2]),
        2 * x * (G[:, 1, 0] + G[:, 0, 1]) + 2 * w * (G[:, 0, 2] - G[:, 2, 0]) + 2 * z * (G[:, 2, 1] + G[:, 1, 2])
        - 4 * y * (G[:, 0, 0] + G[:, 2, 2]),
        2 * w * (G[:, 1, 0] - G[:, 0, 1]) + 2 * x * (G[:, 2, 0] + G[:, 0, 2]) + 2 * y * (G[:, 2, 1] + G[:, 1, 2])
        - 4 * z * (G[:, 0, 0] + G[:, 1, 1]),
    ], axis=1)
    norm = np.linalg.norm(rot, axis=1, keepdims=True)
    d_rot = (d_qn - q * np.sum(q * d_qn, axis=1, keepdims=True)) / norm
    invalid = ~valid
    d_mu[invalid] = 0.0
    d_rot[invalid] = 0.0
    d_scale[invalid] = 0.0
    return d_mu, d_rot, d_scale


def rasterize_backward_arrays(camera: Camera, mu, opacity, rot, scale, color, output: RenderOutput,
                              grad_image) -> dict[str, np.ndarray]:
    st = output._state
    mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(-1, 3)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
    rot = np.ascontiguousarray(rot, dtype=np.float64).reshape(-1, 4)
    scale = np.ascontiguousarray(scale, dtype=np.float64).reshape(-1, 3)
    color = np.ascontiguousarray(color, dtype=np.float64).reshape(-1, 3)
    cam = st.get("camera", camera)
    if st.get("fingerprint") != _fingerprint(cam, (mu, opacity, rot, scale, color)):
        raise ContractError("rasterize_backward called with inputs that differ from the forward pass")
    k = len(mu)
    d_mean = np.zeros((k, 2))
    d_conic = np.zeros((k, 3))
    d_opac = np.zeros(k)
    d_color = np.zeros((k, 3))
    if k == 0:
        return dict(mu=np.zeros((0, 3)), opacity=d_opac, rot=np.zeros((0, 4)), scale=np.zeros((0, 3)), color=d_color)
    gimg = np.ascontiguousarray(np.asarray(grad_image, dtype=np.float64).reshape(cam.height, cam.width, 3))
    p = st["proj"]
    _backward(p.mean2d, p.conic, opacity, color, *st["box"], st["start"], st["lists"], st["tile"],
              st["tiles_x"], cam.width, cam.height, gimg, d_mean, d_conic, d_opac, d_color)
    d_mu, d_rot, d_scale = _chain_projection(cam, p, rot, scale, d_mean, d_conic)
    return dict(mu=d_mu, opacity=d_opac, rot=d_rot, scale=d_scale, color=d_color,
                mean2d=d_mean, conic=d_conic)


def rasterize_backward(gaussians: GaussianSet, camera: Camera, output: RenderOutput,
                       grad_image) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_image * image)`` for every Gaussian parameter.

    Keys: ``mu``, ``opacity``, ``rot`` (w.r.t. the stored, possibly
    unnormalized quaternion), ``scale``, ``color``; plus the screen-space
    ``mean2d`` and ``conic`` intermediates.
    """
    if isinstance(grad_image, Image):
        grad_image = grad_image.pixels
    return rasterize_backward_arrays(camera, *_as_arrays(gaussians), output, grad_image)


def render(camera: Camera, mu, opacity, rot, scale, color, tile_size: int = 16) -> Tensor:
    """Tape-aware rendering: returns an (H, W, 3) image tensor."""
    ins = [x if isinstance(x, Tensor) else Tensor(x) for x in (mu, opacity, rot, scale, color)]
    arrays = [x.data for x in ins]
    out = rasterize_arrays(camera, *arrays, tile_size=tile_size)

    def bw(g):
        d = rasterize_backward_arrays(camera, *arrays, out, g)
        return d["mu"], d["opacity"], d["rot"], d["scale"], d["color"]

    return record(out.image.pixels, ins, bw, "rasterize")
