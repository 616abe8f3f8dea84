"""Gaussian primitives and the splat PLY layout shared with 3DGS tooling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

SH0 = 0.28209479177387814

# order matters: it is the on-disk property order
PLY_PROPERTIES = ("x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                  "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2")
PLY_DTYPE = np.dtype([(name, "<f4") for name in PLY_PROPERTIES])


@dataclass(frozen=True)
class Gaussian:
    mu: np.ndarray
    opacity: float
    rot: np.ndarray
    scale: np.ndarray
    color: np.ndarray


@dataclass(frozen=True)
class GaussianSet:
    """K Gaussians stored column-wise.

    mu (K, 3) world centers; opacity (K,) in (0, 1); rot (K, 4) unit
    quaternions (w, x, y, z); scale (K, 3) positive standard deviations;
    color (K, 3) RGB in [0, 1].
    """

    mu: np.ndarray
    opacity: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    color: np.ndarray
    scene_extent: float = 1.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        k = len(mu)
        fields = {
            "mu": mu,
            "opacity": np.asarray(self.opacity, dtype=np.float64).reshape(k),
            "rot": np.asarray(self.rot, dtype=np.float64).reshape(k, 4),
            "scale": np.asarray(self.scale, dtype=np.float64).reshape(k, 3),
            "color": np.asarray(self.color, dtype=np.float64).reshape(k, 3),
        }
        for name, arr in fields.items():
            object.__setattr__(self, name, arr)
        if self.scene_extent <= 0:
            raise ContractError("scene_extent must be positive")

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], float(self.opacity[i]), self.rot[i], self.scale[i], self.color[i])

    def validate(self, rot_tol: float = 1e-9) -> None:
        """Raise if any Gaussian breaks the type invariants."""
        if len(self) == 0:
            raise ContractError("a GaussianSet must not be empty")
        for name in ("mu", "opacity", "rot", "scale", "color"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"non-finite {name}")
        if np.abs(np.linalg.norm(self.rot, axis=1) - 1).max() > rot_tol:
            raise ContractError("rotations must be unit quaternions")
        if np.any(self.scale <= 0):
            raise ContractError("scales must be positive")
        if np.any(self.opacity <= 0) or np.any(self.opacity >= 1):
            raise ContractError("opacities must lie in (0, 1)")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ContractError("colors must lie in [0, 1]")

    def replace(self, **changes) -> "GaussianSet":
        kw = dict(mu=self.mu, opacity=self.opacity, rot=self.rot, scale=self.scale,
                  color=self.color, scene_extent=self.scene_extent)
        kw.update(changes)
        return GaussianSet(**kw)

    def subset(self, idx) -> "GaussianSet":
        return GaussianSet(self.mu[idx], self.opacity[idx], self.rot[idx], self.scale[idx],
                           self.color[idx], self.scene_extent)

    def raw_features(self) -> np.ndarray:
        """(K, 14): mu/extent, opacity logit, rot, log(scale/extent), color."""
        e = self.scene_extent
        op = np.clip(self.opacity, 1e-6, 1 - 1e-6)
        return np.concatenate([
            self.mu / e,
            np.log(op / (1 - op))[:, None],
            self.rot,
            np.log(self.scale / e),
            self.color,
        ], axis=1)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def write_splat_ply(path, gaussians: GaussianSet) -> None:
    """Binary little-endian PLY with the standard 3DGS vertex properties."""
    k = len(gaussians)
    arr = np.empty(k, dtype=PLY_DTYPE)
    norm = np.linalg.norm(gaussians.rot, axis=1, keepdims=True)
    # quaternions already unit at float32 precision are written untouched, so
    # that write -> read -> write reproduces the same bytes
    rot = np.where(np.abs(norm - 1.0) > 1e-6, gaussians.rot / norm, gaussians.rot)
    cols = {
        "x": gaussians.mu[:, 0], "y": gaussians.mu[:, 1], "z": gaussians.mu[:, 2],
        "opacity": logit(gaussians.opacity),
    }
    for i in range(3):
        cols[f"scale_{i}"] = np.log(gaussians.scale[:, i])
        cols[f"f_dc_{i}"] = (gaussians.color[:, i] - 0.5) / SH0
    for i in range(4):
        cols[f"rot_{i}"] = rot[:, i]
    for name in PLY_PROPERTIES:
        arr[name] = cols[name]
    header = ["ply", "format binary_little_endian 1.0",
              f"comment scene_extent {float(gaussians.scene_extent)!r}",
              f"element vertex {k}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    Path(path).write_bytes(("\n".join(header) + "\n").encode("ascii") + arr.tobytes())


def read_splat_ply(path) -> GaussianSet:
    """Inverse of :func:`write_splat_ply`.

    Quaternions are returned exactly as stored (unit to float32 precision);
    validate loaded sets with ``rot_tol=1e-6``.
    """
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    count = None
    extent = 1.0
    props: list[str] = []
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:1] == ["property"]:
            if len(parts) != 3 or parts[1] != "float":
                raise FormatError(f"{path}: unsupported property line {line!r}")
            props.append(parts[2])
        elif parts[:2] == ["comment", "scene_extent"]:
            extent = float(parts[2])
    if count is None:
        raise FormatError(f"{path}: missing vertex element")
    missing = [p for p in PLY_PROPERTIES if p not in props]
    if missing:
        raise FormatError(f"{path}: missing properties {missing}")
    dtype = np.dtype([(p, "<f4") for p in props])
    body = raw[end + len(marker):]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{path}: expected {count * dtype.itemsize} bytes of vertex data, got {len(body)}")
    arr = np.frombuffer(body, dtype=dtype)
    f = lambda name: arr[name].astype(np.float64)  # noqa: E731
    mu = np.stack([f("x"), f("y"), f("z")], axis=1)
    rot = np.stack([f(f"rot_{i}") for i in range(4)], axis=1)
    scale = np.exp(np.stack([f(f"scale_{i}") for i in range(3)], axis=1))
    color = 0.5 + SH0 * np.stack([f(f"f_dc_{i}") for i in range(3)], axis=1)
    return GaussianSet(mu, sigmoid(f("opacity")), rot, scale, np.clip(color, 0.0, 1.0), extent)
