import json

import numpy as np
import pytest

from volsplat.errors import ContractError
from volsplat.network import NetConfig, init_weights
from volsplat.training import TrainConfig, make_scene, train_toy

TINY = NetConfig(dim=16, heads=2, blocks2d=2, layer_taps=2, k_gaussians=60, window=16, grid_cells=8)


@pytest.fixture(scope="module")
def scene():
    return make_scene("shell", 16, 4, 2, 32)


def test_training_loss_decreases(scene):
    res = train_toy([scene], init_weights(TINY, 0), TINY, TrainConfig(iters=200, lr_max=1e-3, val_every=0))
    losses = [r["loss"] for r in res.log]
    assert len(losses) == 200 and losses[-1] < losses[0]
    assert "val_psnr" in res.log[-1] and "val_psnr" not in res.log[0]


def test_training_is_deterministic_and_logs_json(scene, tmp_path):
    cfg = TrainConfig(iters=4, lr_max=1e-3, val_every=2)
    a = train_toy([scene], init_weights(TINY, 0), TINY, cfg, log_path=tmp_path / "a.jsonl")
    b = train_toy([scene], init_weights(TINY, 0), TINY, cfg, log_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()
    recs = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in recs] == [0, 1, 2, 3]
    assert {"iter", "scene", "loss", "lr"} <= set(recs[0]) and "val_psnr" in recs[1]
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def test_resume_is_bit_exact(scene, tmp_path):
    cfg = TrainConfig(iters=6, lr_max=1e-3, val_every=3, checkpoint_every=3)
    scenes = [scene, make_scene("blobs", 16, 4, 2, 32, seed=1)]
    full = train_toy(scenes, init_weights(TINY, 0), TINY, cfg, log_path=tmp_path / "full.jsonl",
                     checkpoint_dir=tmp_path / "full_ck")
    # stop after the first checkpoint, then resume
    half = TrainConfig(**{**cfg.to_dict(), "iters": 6, "betas": cfg.betas})
    calls = []

    class Stop(Exception):
        pass

    def stop_at(rec):
        calls.append(rec["iter"])
        if rec["iter"] == 3:
            raise Stop

    with pytest.raises(Stop):
        train_toy(scenes, init_weights(TINY, 0), TINY, half, log_path=tmp_path / "r.jsonl",
                  checkpoint_dir=tmp_path / "r_ck", on_record=stop_at)
    resumed = train_toy(scenes, init_weights(TINY, 0), TINY, half, log_path=tmp_path / "r.jsonl",
                        checkpoint_dir=tmp_path / "r_ck", resume=True)
    assert resumed.log[0]["iter"] == 0 and len(resumed.log) == 6
    assert (tmp_path / "r.jsonl").read_text() == (tmp_path / "full.jsonl").read_text()
    assert all(np.array_equal(full.weights[k], resumed.weights[k]) for k in full.weights)


def test_frozen_beta_stays_fixed(scene):
    cfg = NetConfig(**{**TINY.to_dict(), "learn_beta": False})
    w0 = init_weights(cfg, 0)
    res = train_toy([scene], w0, cfg, TrainConfig(iters=2, lr_max=1e-2, val_every=0))
    assert np.array_equal(res.weights["vgf.beta_raw"], w0["vgf.beta_raw"])
    res = train_toy([scene], w0, TINY, TrainConfig(iters=2, lr_max=1e-2, val_every=0))
    assert not np.array_equal(res.weights["vgf.beta_raw"], w0["vgf.beta_raw"])


def test_empty_scene_list_and_resume_without_dir(scene):
    with pytest.raises(ContractError):
        train_toy([], init_weights(TINY, 0), TINY)
    with pytest.raises(ContractError):
        train_toy([scene], init_weights(TINY, 0), TINY, resume=True)
