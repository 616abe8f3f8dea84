"""Pinhole cameras, orbit rigs and the view-distance term of the attention bias.

Conventions: the camera frame is x right, y down, z forward.  Pixel (col j,
row i) has its center at image coordinates (j + 0.5, i + 0.5), so a
principal point of (width/2, height/2) is the geometric image center.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, FormatError

NEAR = 0.01


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ContractError("camera rotation must be orthonormal with det +1")

    @property
    def center(self) -> np.ndarray:
        """World position of the optical center."""
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def with_image_size(self, width: int, height: int) -> "Camera":
        """Same pose with intrinsics rescaled to a new resolution."""
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height,
                      self.rotation, self.translation)


def project(camera: Camera, world_point) -> tuple:
    """Pinhole projection; returns ``(u, v, depth)``.

    Works on a single point or an (..., 3) array.  Points with depth <= 0 are
    behind the camera: their pixel coordinates are NaN.
    """
    p = camera.to_camera(world_point)
    z = p[..., 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    u = np.where(front, camera.fx * p[..., 0] / safe + camera.cx, np.nan)
    v = np.where(front, camera.fy * p[..., 1] / safe + camera.cy, np.nan)
    if np.ndim(z) == 0:
        return float(u), float(v), float(z)
    return u, v, z


def is_behind(depth) -> np.ndarray | bool:
    return np.asarray(depth) <= 0


def unproject(camera: Camera, u, v, depth) -> np.ndarray:
    """Inverse of :func:`project` for positive depth."""
    u, v, depth = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(depth, float))
    pc = np.stack([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth], axis=-1)
    return (pc - camera.translation) @ camera.rotation


def view_distance(camera: Camera, world_point, scene_extent: float, mode: str = "center"):
    """Geometric distance between a point and a view, in units of scene extent.

    ``mode="center"`` measures to the optical center; ``mode="ray"`` measures
    to the principal ray (the optical axis), for ablation.
    """
    if scene_extent <= 0:
        raise ContractError("scene_extent must be positive")
    p = np.asarray(world_point, dtype=np.float64)
    rel = p - camera.center
    if mode == "center":
        d = np.linalg.norm(rel, axis=-1)
    elif mode == "ray":
        axis = camera.rotation[2]
        along = rel @ axis
        d = np.linalg.norm(rel - along[..., None] * axis, axis=-1)
    else:
        raise ContractError(f"unknown view distance mode {mode!r}")
    return d / scene_extent


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``position`` gazing at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(fwd @ up) > 1 - 1e-9:
        # gaze parallel to up: regularize with a fixed perpendicular
        up = np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ position


@dataclass(frozen=True)
class ViewRig:
    cameras: tuple[Camera, ...]
    radius: float
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]


def default_intrinsics(width: int, height: int, fov_deg: float = 40.0) -> tuple[float, float, float, float]:
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return f, f * height / width, width / 2.0, height / 2.0


def make_orbit_rig(n_views: int, radius: float, elevation_pattern: Sequence[float] = (0.0,),
                   target=(0.0, 0.0, 0.0), intrinsics=None, width: int = 128, height: int = 128,
                   azimuth_offset: float = 0.0) -> ViewRig:
    """Cameras on rings of constant elevation (degrees), evenly spaced in azimuth.

    Views are split across rings as evenly as possible, earlier rings taking
    the remainder.  ``azimuth_offset`` (degrees) rotates every ring; a
    half-spacing offset interleaves held-out views between training views.
    """
    if n_views < 2:
        raise ContractError("an orbit rig needs at least 2 views")
    if intrinsics is None:
        intrinsics = default_intrinsics(width, height)
    fx, fy, cx, cy = intrinsics
    target = np.asarray(target, dtype=np.float64)
    rings = list(elevation_pattern)
    base, extra = divmod(n_views, len(rings))
    cams = []
    for r, elev in enumerate(rings):
        count = base + (1 if r < extra else 0)
        for j in range(count):
            az = np.radians(azimuth_offset + 360.0 * j / count)
            el = np.radians(elev)
            pos = target + radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            R, t = look_at(pos, target)
            cams.append(Camera(fx, fy, cx, cy, width, height, R, t))
    return ViewRig(tuple(cams), float(radius), target)


# paper view protocol: three elevation rings for the 24/36-view settings
PROTOCOL_ELEVATIONS = (-20.0, 10.0, 40.0)


def make_protocol_rigs(n_train: int, n_heldout: int, radius: float, width: int = 128,
                       height: int = 128, intrinsics=None) -> tuple[ViewRig, ViewRig]:
    """Training rig plus an azimuthally interleaved held-out rig."""
    elev = PROTOCOL_ELEVATIONS if n_train >= 12 else (10.0, 40.0) if n_train >= 6 else (20.0,)
    train = make_orbit_rig(n_train, radius, elev, intrinsics=intrinsics, width=width, height=height)
    per_ring = max(1, n_train // len(elev))
    held = make_orbit_rig(n_heldout, radius, (25.0,) if n_heldout < 6 else elev,
                          intrinsics=intrinsics, width=width, height=height,
                          azimuth_offset=180.0 / per_ring)
    return train, held


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z), sign fixed by canonical_quaternion."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return canonical_quaternion(q)


def canonical_quaternion(q, tol: float = 1e-12) -> np.ndarray:
    """Resolve the q / -q ambiguity: the first component larger than tol is positive."""
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if abs(c) > tol:
            return -q if c < 0 else q
    return q


def encode_camera(camera: Camera, scene_extent: float = 1.0) -> np.ndarray:
    """11-vector: quaternion (4), translation / extent (3), normalized intrinsics (4)."""
    q = rotation_to_quaternion(camera.rotation)
    t = camera.translation / scene_extent
    k = np.array([camera.fx / camera.width, camera.fy / camera.height,
                  camera.cx / camera.width, camera.cy / camera.height])
    return np.concatenate([q, t, k])


# ------------------------------------------------------------------ rig files

def rig_to_dict(rig: ViewRig) -> dict:
    return {
        "radius": rig.radius,
        "target": rig.target.tolist(),
        "cameras": [
            {
                "rotation": c.rotation.reshape(-1).tolist(),
                "translation": c.translation.tolist(),
                "intrinsics": [c.fx, c.fy, c.cx, c.cy],
                "image_size": [c.width, c.height],
            }
            for c in rig.cameras
        ],
    }


def rig_from_dict(d: dict) -> ViewRig:
    try:
        cams = tuple(
            Camera(*c["intrinsics"], *c["image_size"], np.reshape(c["rotation"], (3, 3)), c["translation"])
            for c in d["cameras"]
        )
        return ViewRig(cams, float(d["radius"]), np.asarray(d["target"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed rig description: {e}") from e


def save_rig(path, rig: ViewRig) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=1))


def load_rig(path) -> ViewRig:
    return rig_from_dict(json.loads(Path(path).read_text()))
