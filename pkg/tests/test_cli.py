import json

import numpy as np
import pytest

from volsplat.cli import main
from volsplat.gaussians import read_splat_ply

SCENE = ["--set", "volume.dims=32", "--set", "rig.image_size=32", "--set", "rig.n_views=8",
         "--set", "rig.n_heldout=4"]
NET = ["--set", "net.dim=16", "--set", "net.heads=2", "--set", "net.blocks2d=2", "--set", "net.k_gaussians=60",
       "--set", "net.window=16", "--set", "net.grid_cells=8"]


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "scene"
    assert main(["--out", str(d), *SCENE, "gen"]) == 0
    return d


def test_gen_layout(scene_dir):
    for name in ("volume.raw", "volume.meta", "tf.txt", "rig.txt", "manifest.txt", "config.json"):
        assert (scene_dir / name).is_file()
    assert len(list((scene_dir / "gt").glob("view_*.ppm"))) == 12


def test_rerun_is_bit_identical(scene_dir, tmp_path):
    again = tmp_path / "scene"
    assert main(["--out", str(again), *SCENE, "gen"]) == 0
    for p in scene_dir.rglob("*"):
        if p.is_file() and p.name not in ("config.json", "manifest.txt"):
            assert p.read_bytes() == (again / p.relative_to(scene_dir)).read_bytes(), p
    before = (scene_dir / "manifest.txt").read_text()
    assert main(["--out", str(scene_dir), *SCENE, "gen"]) == 0
    assert (scene_dir / "manifest.txt").read_text() == before


def test_init_refine_eval_chain(scene_dir, tmp_path, capsys):
    init = tmp_path / "init"
    assert main(["--out", str(init), "init", str(scene_dir), "--K", "300"]) == 0
    summary = json.loads((init / "init_summary.json").read_text())
    assert summary["K"] == 300 and len(read_splat_ply(init / "init.ply")) == 300
    ref = tmp_path / "refine"
    assert main(["--out", str(ref), "refine", str(scene_dir), str(init / "init.ply"), "--steps", "200"]) == 0
    metrics = json.loads((ref / "metrics.json").read_text())
    assert metrics["psnr_gain"] >= 3.0
    ev = tmp_path / "eval"
    capsys.readouterr()
    assert main(["--out", str(ev), "eval", str(scene_dir / "gt"), str(scene_dir / "gt")]) == 0
    table = json.loads((ev / "metrics.json").read_text())
    assert all(v["psnr"] == 99.0 and v["ssim"] == pytest.approx(1.0) for v in table["views"].values())
    assert main(["--out", str(tmp_path / "ev2"), "eval", str(ref / "renders"), str(scene_dir / "gt")]) == 0


def test_train_then_infer(scene_dir, tmp_path):
    run = tmp_path / "train"
    assert main(["--out", str(run), *NET, "--set", "train.iters=2", "train", str(scene_dir)]) == 0
    assert (run / "checkpoint" / "manifest.json").is_file()
    assert len((run / "train_log.jsonl").read_text().splitlines()) == 2
    inf = tmp_path / "infer"
    assert main(["--out", str(inf), *NET, "infer", str(scene_dir), str(run / "checkpoint")]) == 0
    metrics = json.loads((inf / "metrics.json").read_text())
    assert len(metrics["views"]) == 4 and np.isfinite(metrics["mean"]["psnr"])
    # a config that differs from the checkpoint is a version error
    assert main(["--out", str(inf), "infer", str(scene_dir), str(run / "checkpoint")]) == 2


def test_error_exit_codes(scene_dir, tmp_path, capsys):
    assert main(["--out", str(tmp_path / "x"), "init", str(tmp_path / "nowhere")]) == 3
    assert "nowhere" in capsys.readouterr().err
    assert main(["--set", "rig.n_views=7", "gen"]) == 2
    assert main(["--set", "bogus.key=1", "gen"]) == 2
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    assert main(["--out", str(tmp_path / "r"), "refine", str(scene_dir), str(bad)]) == 2
    lonely = tmp_path / "renders"
    lonely.mkdir()
    (lonely / "other.ppm").write_bytes((scene_dir / "gt" / "view_000.ppm").read_bytes())
    assert main(["--out", str(tmp_path / "e"), "eval", str(lonely), str(scene_dir / "gt")]) == 2
    assert "other.ppm" in capsys.readouterr().err


def test_print_config(capsys):
    assert main(["--print-config", "--seed", "7", "--set", "rig.n_views=24"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["seed"] == 7 and cfg["rig"]["n_views"] == 24 and cfg["refine"]["steps"] == 200
