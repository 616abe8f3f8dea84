"""Command-line pipeline: gen, init, infer, refine, eval, train.

Global flags go before the subcommand::

    volsplat --out scenes/shell --seed 0 gen
    volsplat --out runs/init init scenes/shell --K 4000
    volsplat --out runs/refine refine scenes/shell runs/init/init.ply --steps 200
    volsplat --out runs/eval eval runs/refine/renders scenes/shell/gt

Each command writes only into ``--out`` and finishes with a manifest of
content hashes.  Exit codes: 0 success, 2 contract/format/version error,
3 missing or unwritable file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .camera import make_protocol_rigs
from .config import loss_config, net_config, resolve_config, train_config
from .errors import ContractError, VolsplatError
from .gaussians import GaussianSet, read_splat_ply, write_splat_ply
from .imaging import read_image, write_image
from .losses import psnr, ssim_value
from .network import infer, init_weights, load_checkpoint
from .rasterizer import rasterize
from .refine import post_optimize
from .scene import heldout_names, load_scene, write_manifest, write_scene
from .training import train_toy
from .vbm import vbm_init
from .volume import dvr_render, gen_synthetic_volume, load_tf, load_volume, preset_tf, save_volume

IMAGE_SUFFIXES = (".ppm", ".png")
log = logging.getLogger("volsplat")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, cfg: dict, command: str) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    write_manifest(out, {"command": command})


def _view_metrics(gs: GaussianSet, cameras, gts, names) -> dict:
    per = {}
    renders = []
    for name, cam, gt in zip(names, cameras, gts):
        img = rasterize(gs, cam).image
        renders.append(img)
        per[name] = {"psnr": psnr(img, gt), "ssim": ssim_value(img, gt)}
    mean = {k: float(np.mean([v[k] for v in per.values()])) for k in ("psnr", "ssim")} if per else {}
    return {"views": per, "mean": mean}, renders


def _write_renders(out: Path, names, renders) -> None:
    (out / "renders").mkdir(exist_ok=True)
    for name, img in zip(names, renders):
        write_image(out / "renders" / name, img)


# ------------------------------------------------------------------ commands

def cmd_gen(args, cfg) -> int:
    out = _out_dir(cfg)
    vc, rc = cfg["volume"], cfg["rig"]
    if vc["source"] == "file":
        vol = load_volume(vc["raw"], vc["meta"])
    else:
        vol = gen_synthetic_volume(vc["kind"], vc["dims"], seed=cfg["seed"])
    # ground truth is rendered from the stored (possibly quantized) volume
    save_volume(out / "volume.raw", out / "volume.meta", vol, vc["scalar_type"])
    vol = load_volume(out / "volume.raw", out / "volume.meta")
    tf = load_tf(cfg["tf"]["path"]) if cfg["tf"]["path"] else preset_tf(cfg["tf"]["preset"])
    train, held = make_protocol_rigs(rc["n_views"], rc["n_heldout"], rc["radius"],
                                     rc["image_size"], rc["image_size"])
    manifest = write_scene(out, vol, tf, train, held, [dvr_render(vol, tf, c) for c in train],
                           [dvr_render(vol, tf, c) for c in held], vc["scalar_type"])
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    write_manifest(out, {k: v for k, v in manifest.items() if k != "files"} | {"command": "gen"})
    _emit({"scene": str(out), "dims": list(vol.dims), "train_views": len(train), "heldout_views": len(held)})
    return 0


def cmd_init(args, cfg) -> int:
    scene = load_scene(args.scene)
    k = args.K if args.K is not None else cfg["net"]["k_gaussians"]
    gs = vbm_init(scene.volume, scene.tf, k, seed=cfg["seed"])
    out = _out_dir(cfg)
    write_splat_ply(out / "init.ply", gs)
    sizes, counts = np.unique(np.round(gs.scale[:, 0] / scene.volume.spacing[0], 6), return_counts=True)
    summary = {
        "K": len(gs),
        "bbox_min": gs.mu.min(axis=0).tolist(),
        "bbox_max": gs.mu.max(axis=0).tolist(),
        "mean_opacity": float(gs.opacity.mean()),
        "cells_by_half_width_voxels": {str(s): int(c) for s, c in zip(sizes, counts)},
    }
    (out / "init_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _finish(out, cfg, "init")
    _emit(summary)
    return 0


def cmd_infer(args, cfg) -> int:
    net = net_config(cfg)
    weights, net, _, _ = load_checkpoint(args.checkpoint, expect=net)
    scene = load_scene(args.scene)
    init = vbm_init(scene.volume, scene.tf, net.k_gaussians, seed=cfg["seed"])
    pred = infer(init, scene.train_images, scene.train_cameras, weights, net)
    pred.validate()
    out = _out_dir(cfg)
    write_splat_ply(out / "pred.ply", pred)
    names = heldout_names(args.scene)
    metrics, renders = _view_metrics(pred, scene.val_cameras, scene.val_images, names)
    _write_renders(out, names, renders)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    _finish(out, cfg, "infer")
    _emit(metrics["mean"])
    return 0


def cmd_refine(args, cfg) -> int:
    scene = load_scene(args.scene)
    gs = read_splat_ply(args.splat)
    gs.validate(rot_tol=1e-6)
    steps = args.steps if args.steps is not None else cfg["refine"]["steps"]
    names = heldout_names(args.scene)
    before, _ = _view_metrics(gs, scene.val_cameras, scene.val_images, names)
    refined = post_optimize(gs, list(zip(scene.train_images, scene.train_cameras)), steps, loss_config(cfg))
    refined.validate()
    after, renders = _view_metrics(refined, scene.val_cameras, scene.val_images, names)
    out = _out_dir(cfg)
    write_splat_ply(out / "refined.ply", refined)
    _write_renders(out, names, renders)
    metrics = {"steps": steps, "before": before, "after": after,
               "psnr_gain": after["mean"]["psnr"] - before["mean"]["psnr"]}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    _finish(out, cfg, "refine")
    _emit({"before": before["mean"], "after": after["mean"], "psnr_gain": metrics["psnr_gain"]})
    return 0


def _images_in(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_eval(args, cfg) -> int:
    renders, gts = _images_in(Path(args.renders)), _images_in(Path(args.gt))
    missing = sorted(set(renders) - set(gts))
    if not renders:
        raise ContractError(f"no images in {args.renders}")
    if missing:
        print("renders without ground truth: " + ", ".join(missing), file=sys.stderr)
        return 2
    per = {}
    for name, path in renders.items():
        a, b = read_image(path), read_image(gts[name])
        per[name] = {"psnr": psnr(a, b), "ssim": ssim_value(a, b)}
    mean = {k: float(np.mean([v[k] for v in per.values()])) for k in ("psnr", "ssim")}
    table = {"views": per, "mean": mean}
    out = _out_dir(cfg)
    (out / "metrics.json").write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
    _finish(out, cfg, "eval")
    _emit(table)
    return 0


def cmd_train(args, cfg) -> int:
    dirs = cfg["train"]["scenes"] + list(args.scenes or [])
    if not dirs:
        raise ContractError("train needs at least one scene directory (train.scenes or positional)")
    scenes = [load_scene(d) for d in dirs]
    net = net_config(cfg)
    tcfg = train_config(cfg)
    out = _out_dir(cfg)
    result = train_toy(scenes, init_weights(net, cfg["seed"]), net, tcfg, loss_config(cfg),
                       log_path=out / "train_log.jsonl", checkpoint_dir=out / "checkpoint",
                       resume=args.resume)
    _finish(out, cfg, "train")
    _emit(result.log[-1] if result.log else {})
    return 0


COMMANDS = {"gen": cmd_gen, "init": cmd_init, "infer": cmd_infer, "refine": cmd_refine,
            "eval": cmd_eval, "train": cmd_train}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volsplat", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set rig.n_views=24 (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and continue")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("gen", help="generate a scene directory with ground-truth renders")
    s = sub.add_parser("init", help="wavelet-sampled initial Gaussians")
    s.add_argument("scene")
    s.add_argument("--K", type=int)
    s = sub.add_parser("infer", help="feed-forward prediction from a checkpoint")
    s.add_argument("scene")
    s.add_argument("checkpoint")
    s = sub.add_parser("refine", help="post-optimize a splat PLY against the training views")
    s.add_argument("scene")
    s.add_argument("splat")
    s.add_argument("--steps", type=int)
    s = sub.add_parser("eval", help="PSNR/SSIM between two image directories")
    s.add_argument("renders")
    s.add_argument("gt")
    s = sub.add_parser("train", help="train the network on scene directories")
    s.add_argument("scenes", nargs="*")
    s.add_argument("--resume", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args.set, args.seed, args.out)
        if args.print_config:
            _emit(cfg)
        if args.command is None:
            if not args.print_config:
                build_parser().print_usage(sys.stderr)
                return 2
            return 0
        return COMMANDS[args.command](args, cfg)
    except VolsplatError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
