"""Toy-scale training of the dual transformer on ray-cast scenes."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward
from .camera import Camera, make_protocol_rigs
from .errors import ContractError
from .gaussians import GaussianSet
from .imaging import Image
from .losses import LossConfig, loss_total, psnr, ssim_value
from .network import NetConfig, dtn_forward, infer
from .network.weights import load_checkpoint, save_checkpoint
from .optim import OptimState, adam_step, cosine_lr
from .rasterizer import rasterize, render
from .vbm import vbm_init
from .volume import TransferFunction, Volume, dvr_render, gen_synthetic_volume, preset_tf

log = logging.getLogger(__name__)


@dataclass
class Scene:
    volume: Volume
    tf: TransferFunction
    train_cameras: list[Camera]
    train_images: list[Image]
    val_cameras: list[Camera] = field(default_factory=list)
    val_images: list[Image] = field(default_factory=list)
    name: str = "scene"


def make_scene(kind: str = "shell", dims: int = 32, n_train: int = 8, n_val: int = 4, size: int = 64,
               radius: float = 2.5, tf_name: str | None = None, seed: int = 0) -> Scene:
    """Synthetic volume plus ray-cast training and held-out views."""
    vol = gen_synthetic_volume(kind, dims, seed=seed)
    tf = preset_tf(tf_name or ("shell" if kind == "shell" else "ramp"))
    train, held = make_protocol_rigs(n_train, n_val, radius, width=size, height=size)
    return Scene(vol, tf, list(train), [dvr_render(vol, tf, c) for c in train],
                 list(held), [dvr_render(vol, tf, c) for c in held], f"{kind}{dims}-s{seed}")


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 200
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    val_every: int = 50
    checkpoint_every: int = 0
    init_seed: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    state: OptimState
    log: list[dict]


def _init_for(scene: Scene, net: NetConfig, seed: int) -> GaussianSet:
    return vbm_init(scene.volume, scene.tf, net.k_gaussians, seed)


def validate_scene(scene: Scene, init: GaussianSet, weights, net: NetConfig) -> tuple[float, float]:
    """Mean held-out PSNR and SSIM of the feed-forward prediction."""
    pred = infer(init, scene.train_images, scene.train_cameras, weights, net)
    ps, ss = [], []
    for cam, gt in zip(scene.val_cameras, scene.val_images):
        img = rasterize(pred, cam).image
        ps.append(psnr(img, gt))
        ss.append(ssim_value(img, gt))
    return float(np.mean(ps)), float(np.mean(ss))


def training_step(scene: Scene, init: GaussianSet, weights: dict[str, np.ndarray], net: NetConfig,
                  loss_cfg: LossConfig, frozen: Sequence[str] = ()) -> tuple[float, dict[str, np.ndarray]]:
    """Loss (mean over supervision views) and its gradient for every weight."""
    with Tape() as tape:
        W = {k: Tensor(v, requires_grad=k not in frozen) for k, v in weights.items()}
        out = dtn_forward(init, scene.train_images, scene.train_cameras, W, net)
        total = Tensor(0.0)
        for cam, gt in zip(scene.train_cameras, scene.train_images):
            total = total + loss_total(render(cam, *out.arrays()), gt, loss_cfg)
        loss = total * (1.0 / len(scene.train_cameras))
        g = backward(tape, loss)
        tape.clear()
    grads = {k: g[t.node] for k, t in W.items() if t.node is not None and t.node in g}
    return loss.item(), grads


def train_toy(scenes: Sequence[Scene], weights: dict[str, np.ndarray], net: NetConfig,
              cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig = LossConfig(),
              log_path=None, checkpoint_dir=None, resume: bool = False,
              on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """AdamW on the network weights with a cosine schedule.

    The scene for iteration ``i`` is drawn from a generator seeded by
    ``(cfg.seed, i)``, so a run resumed from a checkpoint at iteration ``i``
    continues exactly as the uninterrupted run would.  Log records are
    JSON lines: iter, loss, lr and, every ``val_every`` iterations and at the
    end, val_psnr / val_ssim on the first scene's held-out views.
    """
    if not scenes:
        raise ContractError("train_toy needs at least one scene")
    weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    state = OptimState.zeros_like(weights)
    records: list[dict] = []
    start = 0
    if resume:
        if checkpoint_dir is None:
            raise ContractError("resume requires checkpoint_dir")
        weights, _, extra, meta = load_checkpoint(checkpoint_dir, expect=net)
        state = OptimState.from_tensors(extra)
        start = int(meta["iter"])
        if log_path is not None and Path(log_path).exists():
            records = [json.loads(x) for x in Path(log_path).read_text().splitlines() if x.strip()]
            records = [r for r in records if r["iter"] < start]
    frozen = () if net.learn_beta else ("vgf.beta_raw",)
    inits = [_init_for(s, net, cfg.init_seed) for s in scenes]

    def save(it):
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, weights, net, extra=state.to_tensors(),
                            meta={"iter": it, "train": cfg.to_dict(),
                                  "loss": dataclasses.asdict(loss_cfg)})
        if log_path is not None:
            Path(log_path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))

    for it in range(start, cfg.iters):
        pick = int(np.random.default_rng([cfg.seed, it]).integers(len(scenes)))
        lr = cosine_lr(it, cfg.iters, cfg.lr_max, cfg.lr_min)
        loss, grads = training_step(scenes[pick], inits[pick], weights, net, loss_cfg, frozen)
        update = {k: v for k, v in weights.items() if k not in frozen}
        update, state = adam_step(update, grads, state, lr, cfg.betas, weight_decay=cfg.weight_decay)
        weights.update(update)
        rec = {"iter": it, "scene": pick, "loss": loss, "lr": lr}
        last = it == cfg.iters - 1
        if scenes[0].val_cameras and ((cfg.val_every and (it + 1) % cfg.val_every == 0) or last):
            rec["val_psnr"], rec["val_ssim"] = validate_scene(scenes[0], inits[0], weights, net)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        log.info("iter %d loss %.5f", it, loss)
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save(it + 1)
    save(cfg.iters)
    return TrainResult(weights, state, records)
