"""On-disk scene directories and content manifests.

Layout::

    volume.raw  volume.meta  tf.txt  rig.txt  gt/view_###.ppm  manifest.txt

``rig.txt`` holds both the training and the held-out rig; ground-truth
images are numbered training views first, held-out views after.
``manifest.txt`` maps every file to its sha256.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

from .camera import ViewRig, rig_from_dict, rig_to_dict
from .errors import FormatError
from .imaging import Image, read_image, write_image
from .training import Scene
from .volume import TransferFunction, Volume, load_tf, load_volume, save_tf, save_volume

MANIFEST = "manifest.txt"
SCENE_FILES = ("volume.raw", "volume.meta", "tf.txt", "rig.txt")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(root, extra: dict | None = None) -> dict:
    """Hash every file under ``root`` (except the manifest itself)."""
    root = Path(root)
    files = {p.relative_to(root).as_posix(): sha256_file(p)
             for p in sorted(root.rglob("*")) if p.is_file() and p.name != MANIFEST}
    manifest = {"files": files, **(extra or {})}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def view_name(i: int) -> str:
    return f"view_{i:03d}.ppm"


def write_scene(root, volume: Volume, tf: TransferFunction, train: ViewRig, heldout: ViewRig,
                train_images: Iterable[Image], heldout_images: Iterable[Image],
                scalar_type: str = "f32") -> dict:
    root = Path(root)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    save_volume(root / "volume.raw", root / "volume.meta", volume, scalar_type)
    save_tf(root / "tf.txt", tf)
    (root / "rig.txt").write_text(json.dumps({"train": rig_to_dict(train), "heldout": rig_to_dict(heldout)},
                                             indent=1))
    images = list(train_images) + list(heldout_images)
    for i, img in enumerate(images):
        write_image(root / "gt" / view_name(i), img)
    n = len(train)
    return write_manifest(root, {"train_views": [view_name(i) for i in range(n)],
                                 "heldout_views": [view_name(i) for i in range(n, len(images))]})


def require_files(root, names: Iterable[str]) -> None:
    root = Path(root)
    for name in names:
        if not (root / name).is_file():
            raise FileNotFoundError(f"missing input file: {root / name}")


def load_rigs(root) -> tuple[ViewRig, ViewRig]:
    try:
        d = json.loads((Path(root) / "rig.txt").read_text())
        return rig_from_dict(d["train"]), rig_from_dict(d["heldout"])
    except (json.JSONDecodeError, KeyError) as e:
        raise FormatError(f"{root}/rig.txt: {e}") from e


def load_scene(root) -> Scene:
    """Read a scene directory; a missing file raises FileNotFoundError naming it."""
    root = Path(root)
    require_files(root, SCENE_FILES)
    train, held = load_rigs(root)
    names = [view_name(i) for i in range(len(train) + len(held))]
    require_files(root / "gt", names)
    imgs = [read_image(root / "gt" / n) for n in names]
    vol = load_volume(root / "volume.raw", root / "volume.meta")
    return Scene(vol, load_tf(root / "tf.txt"), list(train), imgs[:len(train)], list(held),
                 imgs[len(train):], root.name)


def heldout_names(root) -> list[str]:
    train, held = load_rigs(root)
    return [view_name(i) for i in range(len(train), len(train) + len(held))]
