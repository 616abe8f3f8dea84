import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from volsplat.camera import Camera, look_at, make_orbit_rig
from volsplat.gaussians import GaussianSet

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def front_camera(width=16, height=16, distance=3.0, fov_px=None):
    """Camera on the -z axis looking at the origin."""
    R, t = look_at((0.0, 0.0, -distance), (0.0, 0.0, 0.0), up=(0.0, -1.0, 0.0))
    f = fov_px or 1.2 * width
    return Camera(f, f, width / 2, height / 2, width, height, R, t)


def random_gaussians(rng, k, spread=0.3, scale=(0.05, 0.15), extent=1.0):
    q = rng.normal(size=(k, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(rng.uniform(-spread, spread, (k, 3)), rng.uniform(0.2, 0.9, k), q,
                       rng.uniform(*scale, (k, 3)), rng.uniform(0.05, 0.95, (k, 3)), extent)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cam16():
    return front_camera(16, 16)


@pytest.fixture(scope="session")
def small_rig():
    return make_orbit_rig(4, 2.5, (10.0, 40.0), width=32, height=32)


def network_grad_check(n_weights=20, seed=0, step=1e-6, floor=1e-6):
    """Tape vs central-difference gradients for sampled network weights.

    Scalar loss: sum of the image rendered from the head output, K=8 initial
    Gaussians, two 32x32 views.  Returns the max relative error.
    """
    from volsplat.autodiff import Tape, Tensor, backward, tsum
    from volsplat.camera import make_orbit_rig
    from volsplat.network import NetConfig, dtn_forward, init_weights
    from volsplat.rasterizer import render
    from volsplat.vbm import vbm_init
    from volsplat.volume import dvr_render, gen_synthetic_volume, preset_tf

    cfg = NetConfig(dim=16, heads=2, blocks2d=2, layer_taps=2, k_gaussians=8, window=4, grid_cells=4)
    vol = gen_synthetic_volume("shell", 16)
    tf = preset_tf("shell")
    cams = list(make_orbit_rig(2, 2.5, (20.0,), width=32, height=32))
    images = [dvr_render(vol, tf, c) for c in cams]
    init = vbm_init(vol, tf, 8, seed=seed)
    weights = init_weights(cfg, seed)

    def loss_of(W):
        out = dtn_forward(init, images, cams, W, cfg)
        return tsum(render(cams[0], *out.arrays()))

    with Tape() as tape:
        W = {k: Tensor(v, requires_grad=True) for k, v in weights.items()}
        grads = backward(tape, loss_of(W))
        tape.clear()
    rng = np.random.default_rng(seed)
    # sample entries from tensors that receive gradient, one tensor at a time
    names = sorted(k for k in weights if W[k].node in grads)
    picks = []
    for name in rng.choice(names, size=n_weights, replace=len(names) < n_weights):
        picks.append((name, int(rng.integers(weights[name].size))))
    worst = 0.0
    for name, i in picks:
        vals = []
        for sgn in (1, -1):
            arr = weights[name].copy()
            arr.reshape(-1)[i] += sgn * step
            vals.append(loss_of({**{k: Tensor(v) for k, v in weights.items()}, name: Tensor(arr)}).item())
        fd = (vals[0] - vals[1]) / (2 * step)
        an = grads[W[name].node].reshape(-1)[i]
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), floor))
    return worst, picks
