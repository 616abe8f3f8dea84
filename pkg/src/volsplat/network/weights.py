"""Weight initialization and the named-tensor checkpoint format.

A checkpoint is a directory holding ``weights.bin`` (a sequence of records:
u32 name length, UTF-8 name, u32 ndim, u64 dims, little-endian float64
data) and ``manifest.json`` (format version, network config, tensor names,
sha256 of the binary, free-form metadata).
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, VersionError
from .config import NetConfig

FORMAT_VERSION = 1
CAMERA_CODE = 11
RAW_ATTRS = 14
BETA_INIT_RAW = float(np.log(np.expm1(1.0)))  # softplus(raw) = 1


def _dense(rng, fan_in, fan_out, gain=1.0):
    std = gain * np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def _block(w, rng, prefix, dim, ratio):
    for name in ("ln1", "ln2"):
        w[f"{prefix}.{name}.g"] = np.ones(dim)
        w[f"{prefix}.{name}.b"] = np.zeros(dim)
    for name in ("q", "k", "v"):
        w[f"{prefix}.attn.w{name}"] = _dense(rng, dim, dim)
        w[f"{prefix}.attn.b{name}"] = np.zeros(dim)
    w[f"{prefix}.attn.wo"] = _dense(rng, dim, dim, 0.5)
    w[f"{prefix}.attn.bo"] = np.zeros(dim)
    w[f"{prefix}.mlp.w1"] = _dense(rng, dim, ratio * dim)
    w[f"{prefix}.mlp.b1"] = np.zeros(ratio * dim)
    w[f"{prefix}.mlp.w2"] = _dense(rng, ratio * dim, dim, 0.5)
    w[f"{prefix}.mlp.b2"] = np.zeros(dim)


def init_weights(cfg: NetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh weights; every draw comes from one generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    d = cfg.dim
    w: dict[str, np.ndarray] = {}
    pdim = cfg.patch * cfg.patch * 3
    w["patch.w"] = _dense(rng, pdim, d)
    w["patch.b"] = np.zeros(d)
    w["cam.token"] = rng.normal(0.0, 0.02, size=d)
    w["cam.enc.w1"] = _dense(rng, CAMERA_CODE, d)
    w["cam.enc.b1"] = np.zeros(d)
    w["cam.enc.w2"] = _dense(rng, d, d)
    w["cam.enc.b2"] = np.zeros(d)
    # zero projection: camera injection starts as an exact no-op
    w["cam.zero.w"] = np.zeros((d, d))
    w["cam.zero.b"] = np.zeros(d)
    for b in range(cfg.blocks2d):
        _block(w, rng, f"2d.{b}.frame", d, cfg.mlp_ratio)
        _block(w, rng, f"2d.{b}.global", d, cfg.mlp_ratio)
    for s in range(cfg.pyramid_scales):
        for l in range(cfg.layer_taps):
            w[f"pyr.{s}.{l}.w"] = _dense(rng, d, d)
            w[f"pyr.{s}.{l}.b"] = np.zeros(d)
    w["embed.w"] = _dense(rng, RAW_ATTRS, d)
    w["embed.b"] = np.zeros(d)
    for b in range(cfg.n_blocks3d):
        _block(w, rng, f"3d.{b}", d, cfg.mlp_ratio)
    w["3d.final.g"] = np.ones(d)
    w["3d.final.b"] = np.zeros(d)
    w["vgf.ln.g"] = np.ones(d)
    w["vgf.ln.b"] = np.zeros(d)
    for name in ("q", "k", "v"):
        w[f"vgf.w{name}"] = _dense(rng, d, d)
    w["vgf.wo"] = _dense(rng, d, d, 0.5)
    w["vgf.sl_embed"] = rng.normal(0.0, 0.02, size=(cfg.pyramid_scales * cfg.layer_taps, d))
    w["vgf.beta_raw"] = np.array(BETA_INIT_RAW)
    w["head.w"] = rng.normal(0.0, 0.01, size=(d, RAW_ATTRS))
    w["head.b"] = head_bias()
    return w


def head_bias() -> np.ndarray:
    """Head offsets: zero shift, opacity 0.1, identity rotation, scale 0.02 extent, gray."""
    b = np.zeros(RAW_ATTRS)
    b[3] = np.log(0.1 / 0.9)
    b[4] = 1.0
    b[8:11] = np.log(0.02)
    return b


def count_parameters(weights: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in weights.values()))


# ----------------------------------------------------------------- checkpoint

def _encode(tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d scalars 0-d
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


def _decode(data: bytes) -> dict[str, np.ndarray]:
    tensors = {}
    pos = 0
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(data):
                raise FormatError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"corrupt weights file: {e}") from e
    return tensors


def save_checkpoint(path, weights: dict[str, np.ndarray], cfg: NetConfig, extra: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write weights plus optional extra tensors (optimizer state) and metadata."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = dict(weights)
    for k, v in (extra or {}).items():
        tensors[f"extra/{k}"] = v
    blob = _encode(tensors)
    (path / "weights.bin").write_bytes(blob)
    manifest = {
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "tensors": list(tensors),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path, expect: NetConfig | None = None):
    """Returns ``(weights, cfg, extra, meta)``.

    Raises VersionError for an unknown format version or when ``expect``
    differs from the stored config, FormatError for damaged files.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError as e:
        raise FileNotFoundError(f"checkpoint incomplete: {e.filename}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}/manifest.json: {e}") from e
    if "version" not in manifest:
        raise VersionError(f"{path}: manifest has no version field")
    if manifest["version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint version {manifest['version']}, expected {FORMAT_VERSION}")
    cfg = NetConfig.from_dict(manifest["config"])
    if expect is not None and cfg != expect:
        diff = {k: (v, getattr(expect, k)) for k, v in cfg.to_dict().items() if getattr(expect, k) != v}
        raise VersionError(f"{path}: checkpoint config does not match (stored, expected): {diff}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise FormatError(f"{path}/weights.bin: content hash mismatch")
    tensors = _decode(blob)
    if list(tensors) != manifest["tensors"]:
        raise FormatError(f"{path}: tensor list differs from manifest")
    weights = {k: v for k, v in tensors.items() if not k.startswith("extra/")}
    extra = {k[len("extra/"):]: v for k, v in tensors.items() if k.startswith("extra/")}
    return weights, cfg, extra, manifest.get("meta", {})
