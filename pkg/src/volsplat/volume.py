"""Scalar volumes, transfer functions and the ray-casting DVR reference renderer."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .camera import Camera
from .errors import ContractError, FormatError
from .imaging import Image

_SCALAR_TYPES = {"u8": "<u1", "u16": "<u2", "f32": "<f4"}

EARLY_TERMINATION = 1e-3
SHELL_RADIUS = 0.35
SHELL_HALF_WIDTH = 0.04


@dataclass(frozen=True)
class Volume:
    """Scalar grid with values in [0, 1].

    ``values`` has shape (nx, ny, nz), indexed ``values[i, j, k]``; voxel
    (i, j, k) sits at ``origin + (i, j, k) * spacing``.
    """

    values: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ContractError(f"volume needs >= 2 voxels per axis, got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ContractError("volume values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", np.asarray(self.spacing, dtype=np.float64).reshape(3))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """World box spanned by the voxel centers."""
        return self.origin, self.origin + (np.array(self.dims) - 1) * self.spacing

    @property
    def extent(self) -> float:
        lo, hi = self.bbox
        return float(np.max(hi - lo))

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.bbox
        return 0.5 * (lo + hi)

    @classmethod
    def centered(cls, values, extent: float = 1.0) -> "Volume":
        """Place ``values`` in a box of the given largest side centered at the origin."""
        values = np.asarray(values, dtype=np.float64)
        dims = np.array(values.shape)
        h = extent / (dims.max() - 1)
        spacing = np.full(3, h)
        return cls(values, spacing, -0.5 * (dims - 1) * h)


def normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


# ------------------------------------------------------------ transfer function

@dataclass(frozen=True)
class TransferFunction:
    """Piecewise-linear scalar -> RGBA map.

    ``points`` holds strictly increasing scalars starting at 0 and ending at
    1; ``rgba`` has one row per point.
    """

    points: np.ndarray
    rgba: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        c = np.asarray(self.rgba, dtype=np.float64).reshape(-1, 4)
        if len(p) < 2 or len(p) != len(c):
            raise ContractError("transfer function needs >= 2 control points with matching colors")
        if p[0] != 0.0 or p[-1] != 1.0 or np.any(np.diff(p) <= 0):
            raise ContractError("control scalars must increase strictly from 0 to 1")
        if c.min() < 0 or c.max() > 1:
            raise ContractError("control colors must lie in [0, 1]")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "rgba", c)

    @classmethod
    def from_pairs(cls, pairs) -> "TransferFunction":
        return cls(np.array([s for s, _ in pairs]), np.array([c for _, c in pairs]))

    def __call__(self, scalar):
        return apply_tf(self, scalar)


def apply_tf(tf: TransferFunction, scalar):
    """Interpolate control colors; returns (..., 4) RGBA."""
    s = np.clip(np.asarray(scalar, dtype=np.float64), 0.0, 1.0)
    out = np.stack([np.interp(s, tf.points, tf.rgba[:, ch]) for ch in range(4)], axis=-1)
    return out


def preset_tf(name: str = "shell") -> TransferFunction:
    """A few ready-made transfer functions used by the demos and tests."""
    presets = {
        "ramp": [(0.0, (0, 0, 0, 0)), (1.0, (1, 1, 1, 1))],
        "shell": [(0.0, (0, 0, 0, 0)), (0.3, (0.1, 0.2, 0.6, 0.0)), (0.6, (0.2, 0.6, 0.9, 0.15)),
                  (0.85, (0.9, 0.7, 0.3, 0.6)), (1.0, (1.0, 0.95, 0.8, 0.9))],
        "band": [(0.0, (0, 0, 0, 0)), (0.45, (0.2, 0.3, 0.9, 0.0)), (0.55, (0.9, 0.4, 0.2, 0.5)),
                 (0.65, (0.9, 0.8, 0.3, 0.0)), (1.0, (1, 1, 1, 0.0))],
        "fire": [(0.0, (0, 0, 0, 0)), (0.4, (0.6, 0.1, 0.0, 0.02)), (0.7, (0.95, 0.5, 0.1, 0.2)),
                 (1.0, (1.0, 1.0, 0.6, 0.7))],
    }
    if name not in presets:
        raise ContractError(f"unknown transfer function preset {name!r}")
    return TransferFunction.from_pairs(presets[name])


def save_tf(path, tf: TransferFunction) -> None:
    doc = {"control_points": [{"scalar": float(s), "rgba": [float(x) for x in c]}
                              for s, c in zip(tf.points, tf.rgba)]}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_tf(path) -> TransferFunction:
    try:
        doc = json.loads(Path(path).read_text())
        pts = doc["control_points"]
        return TransferFunction(np.array([p["scalar"] for p in pts]), np.array([p["rgba"] for p in pts]))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed transfer function: {e}") from e


# ------------------------------------------------------------------ volume I/O

def load_volume(data_path, meta_path) -> Volume:
    """Read a little-endian raw grid (x fastest) plus its JSON metadata sidecar."""
    try:
        meta = json.loads(Path(meta_path).read_text())
        dims = [int(d) for d in meta["dims"]]
        stype = meta["scalar_type"]
        spacing = meta["spacing"]
        origin = meta["origin"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise FormatError(f"{meta_path}: malformed volume metadata: {e}") from e
    if stype not in _SCALAR_TYPES:
        raise FormatError(f"{meta_path}: unknown scalar type {stype!r}")
    dtype = np.dtype(_SCALAR_TYPES[stype])
    raw = Path(data_path).read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{data_path}: {len(raw)} bytes, expected {expected} for dims {dims} ({stype})")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims[::-1]).transpose(2, 1, 0)
    return Volume(normalize(arr.astype(np.float64)), spacing, origin)


def save_volume(data_path, meta_path, volume: Volume, scalar_type: str = "f32") -> None:
    if scalar_type not in _SCALAR_TYPES:
        raise FormatError(f"unknown scalar type {scalar_type!r}")
    v = volume.values
    if scalar_type == "u8":
        arr = np.floor(v * 255 + 0.5).astype("<u1")
    elif scalar_type == "u16":
        arr = np.floor(v * 65535 + 0.5).astype("<u2")
    else:
        arr = v.astype("<f4")
    Path(data_path).write_bytes(np.ascontiguousarray(arr.transpose(2, 1, 0)).tobytes())
    meta = {"dims": list(volume.dims), "spacing": volume.spacing.tolist(),
            "scalar_type": scalar_type, "origin": volume.origin.tolist()}
    Path(meta_path).write_text(json.dumps(meta, indent=1))


# ------------------------------------------------------------ synthetic scenes

def gen_synthetic_volume(kind: str, dims=(64, 64, 64), seed: int = 0, extent: float = 1.0) -> Volume:
    """Deterministic test volumes: ``blobs``, ``filtered_noise`` or ``shell``."""
    dims = tuple(int(d) for d in np.broadcast_to(dims, (3,)))
    if min(dims) < 8:
        raise ContractError(f"synthetic volumes need >= 8 voxels per axis, got {dims}")
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.linspace(-0.5, 0.5, n) for n in dims], indexing="ij")
    x, y, z = grids
    if kind == "shell":
        # flat-topped band of half-width 0.04 around radius 0.35 (seed unused)
        r = np.sqrt(x * x + y * y + z * z)
        v = 0.5 * (1.0 - np.tanh((np.abs(r - SHELL_RADIUS) - SHELL_HALF_WIDTH) / 0.015))
    elif kind == "blobs":
        v = np.zeros(dims)
        for _ in range(6):
            c = rng.uniform(-0.3, 0.3, 3)
            s = rng.uniform(0.05, 0.15)
            w = rng.uniform(0.5, 1.0)
            v += w * np.exp(-0.5 * ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / s ** 2)
    elif kind == "filtered_noise":
        from scipy.ndimage import gaussian_filter

        noise = rng.standard_normal(dims)
        v = gaussian_filter(noise, sigma=max(dims) / 16.0, mode="wrap")
    else:
        raise ContractError(f"unknown synthetic volume kind {kind!r}")
    return Volume.centered(normalize(v), extent)


# ------------------------------------------------------------------- sampling

@numba.njit(cache=True)
def _trilinear(values, inv_spacing, origin, px, py, pz):
    nx, ny, nz = values.shape
    fx = (px - origin[0]) * inv_spacing[0]
    fy = (py - origin[1]) * inv_spacing[1]
    fz = (pz - origin[2]) * inv_spacing[2]
    if fx < 0.0 or fy < 0.0 or fz < 0.0 or fx > nx - 1 or fy > ny - 1 or fz > nz - 1:
        return 0.0
    i = min(int(fx), nx - 2)
    j = min(int(fy), ny - 2)
    k = min(int(fz), nz - 2)
    tx = fx - i
    ty = fy - j
    tz = fz - k
    c00 = values[i, j, k] * (1 - tx) + values[i + 1, j, k] * tx
    c10 = values[i, j + 1, k] * (1 - tx) + values[i + 1, j + 1, k] * tx
    c01 = values[i, j, k + 1] * (1 - tx) + values[i + 1, j, k + 1] * tx
    c11 = values[i, j + 1, k + 1] * (1 - tx) + values[i + 1, j + 1, k + 1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


@numba.njit(cache=True)
def _trilinear_many(values, inv_spacing, origin, pts):
    out = np.empty(pts.shape[0])
    for n in range(pts.shape[0]):
        out[n] = _trilinear(values, inv_spacing, origin, pts[n, 0], pts[n, 1], pts[n, 2])
    return out


def trilinear(volume: Volume, world_point):
    """Trilinear interpolation; 0 outside the voxel-center bounding box."""
    p = np.asarray(world_point, dtype=np.float64)
    flat = np.ascontiguousarray(p.reshape(-1, 3))
    out = _trilinear_many(volume.values, 1.0 / volume.spacing, volume.origin, flat)
    return float(out[0]) if p.ndim == 1 else out.reshape(p.shape[:-1])


@numba.njit(cache=True)
def _tf_lookup(points, rgba, s, out):
    if s <= points[0]:
        for c in range(4):
            out[c] = rgba[0, c]
        return
    n = points.shape[0]
    if s >= points[n - 1]:
        for c in range(4):
            out[c] = rgba[n - 1, c]
        return
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if points[mid] <= s:
            lo = mid
        else:
            hi = mid
    t = (s - points[lo]) / (points[hi] - points[lo])
    for c in range(4):
        out[c] = rgba[lo, c] * (1 - t) + rgba[hi, c] * t


@numba.njit(cache=True)
def _dvr_kernel(values, inv_spacing, origin, box_lo, box_hi, points, rgba,
                R, cam_center, fx, fy, cx, cy, width, height, step, ref_step, out, trans):
    col = np.empty(4)
    expo = step / ref_step
    for row in range(height):
        for c in range(width):
            # ray direction in camera frame, then world frame
            dcx = (c + 0.5 - cx) / fx
            dcy = (row + 0.5 - cy) / fy
            dx = R[0, 0] * dcx + R[1, 0] * dcy + R[2, 0]
            dy = R[0, 1] * dcx + R[1, 1] * dcy + R[2, 1]
            dz = R[0, 2] * dcx + R[1, 2] * dcy + R[2, 2]
            nrm = np.sqrt(dx * dx + dy * dy + dz * dz)
            d = (dx / nrm, dy / nrm, dz / nrm)
            t0 = 0.0
            t1 = 1e30
            hit = True
            for a in range(3):
                if abs(d[a]) < 1e-15:
                    if cam_center[a] < box_lo[a] or cam_center[a] > box_hi[a]:
                        hit = False
                    continue
                ta = (box_lo[a] - cam_center[a]) / d[a]
                tb = (box_hi[a] - cam_center[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
            r = 0.0
            g = 0.0
            b = 0.0
            T = 1.0
            if hit and t1 > t0:
                n_steps = int(np.ceil((t1 - t0) / step))
                for i in range(n_steps):
                    t = t0 + (i + 0.5) * step
                    if t > t1:
                        break
                    s = _trilinear(values, inv_spacing, origin,
                                   cam_center[0] + t * d[0], cam_center[1] + t * d[1], cam_center[2] + t * d[2])
                    _tf_lookup(points, rgba, s, col)
                    a = col[3]
                    if a <= 0.0:
                        continue
                    alpha = 1.0 - (1.0 - a) ** expo if a < 1.0 else 1.0
                    w = T * alpha
                    r += w * col[0]
                    g += w * col[1]
                    b += w * col[2]
                    T *= 1.0 - alpha
                    if T < EARLY_TERMINATION:
                        break
            out[row, c, 0] = r
            out[row, c, 1] = g
            out[row, c, 2] = b
            trans[row, c] = T


def dvr_render(volume: Volume, tf: TransferFunction, camera: Camera, step_size: float | None = None,
               reference_step: float | None = None, return_transmittance: bool = False):
    """Front-to-back ray casting with opacity correction and early termination.

    ``step_size`` and ``reference_step`` default to the smallest voxel
    spacing; a TF opacity ``a`` is the opacity over one reference step.
    """
    if camera.fx <= 0 or camera.fy <= 0:
        raise ContractError("degenerate camera: focal length must be positive")
    h = float(volume.spacing.min())
    step = h if step_size is None else float(step_size)
    ref = h if reference_step is None else float(reference_step)
    if step <= 0 or ref <= 0:
        raise ContractError("step sizes must be positive")
    lo, hi = volume.bbox
    out = np.zeros((camera.height, camera.width, 3))
    trans = np.ones((camera.height, camera.width))
    _dvr_kernel(volume.values, 1.0 / volume.spacing, volume.origin, lo, hi, tf.points, tf.rgba,
                camera.rotation, camera.center, camera.fx, camera.fy, camera.cx, camera.cy,
                camera.width, camera.height, step, ref, out, trans)
    img = Image(out)
    return (img, trans) if return_transmittance else img
