# # Does the network look at the images?
#
# The 3D tokens see the input views only through epipolar cross-attention.
# Train the same toy network twice on one scene, with and without it, and
# compare validation PSNR.  Takes about six minutes.

from volsplat.network import NetConfig, init_weights
from volsplat.training import TrainConfig, make_scene, train_toy

scene = make_scene("shell", dims=32, n_train=8, n_val=4, size=64)
cfg = TrainConfig(iters=200, val_every=50, seed=6)

for vgf in (True, False):
    net = NetConfig(k_gaussians=1000, vgf=vgf)
    log = train_toy([scene], init_weights(net, 6), net, cfg,
                    on_record=lambda r: "val_psnr" in r and print(f"  iter {r['iter']}: {r['val_psnr']:.2f} dB")).log
    print(f"cross-attention {'on' if vgf else 'off'}: final val PSNR {log[-1]['val_psnr']:.2f} dB")
