# # Rendering Gaussians by hand
#
# A Gaussian splat is a 3D blob with a center, an orientation, three axis
# lengths, an opacity and a color.  The rasterizer projects each blob to an
# ellipse on screen and blends the ellipses front to back.  This script builds
# a few blobs by hand and looks at what comes out.

import numpy as np

from volsplat import Camera, GaussianSet, rasterize, write_image
from volsplat.rasterizer import ewa_project

# A camera at the origin looking down +z, 64 x 64 pixels.

cam = Camera(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)

# ## One blob
#
# An isotropic blob of radius 0.1 at depth 2 covers roughly fx * 0.1 / 2 = 4
# pixels of standard deviation on screen.

one = GaussianSet(mu=[[0.0, 0.0, 2.0]], opacity=[0.8], rot=[[1, 0, 0, 0]],
                  scale=[[0.1, 0.1, 0.1]], color=[[1.0, 0.5, 0.1]])
proj = ewa_project(cam, one[0])
print("screen center", proj.mean2d, "screen std", np.sqrt(np.diag(proj.cov2d)))

out = rasterize(one, cam)
print("peak pixel", out.image.pixels.max(axis=(0, 1)), "min transmittance", out.transmittance.min())

# ## Stretching and rotating
#
# Scales are per axis, so a (0.3, 0.03, 0.03) blob is a needle.  Rotating it
# by 45 degrees about the view axis turns the needle diagonally.

angle = np.pi / 8  # half the rotation angle
needle = GaussianSet(mu=[[0.0, 0.0, 2.0]], opacity=[0.9], rot=[[np.cos(angle), 0, 0, np.sin(angle)]],
                     scale=[[0.3, 0.03, 0.03]], color=[[0.2, 0.6, 1.0]])
write_image("needle.png", rasterize(needle, cam).image)

# ## Occlusion
#
# Two blobs on the same line of sight: the nearer one is blended first and
# takes most of the light at the shared pixels.

pair = GaussianSet(mu=[[0.0, 0.0, 2.0], [0.05, 0.0, 3.0]], opacity=[0.6, 0.95],
                   rot=[[1, 0, 0, 0]] * 2, scale=[[0.1] * 3, [0.2] * 3],
                   color=[[1, 0, 0], [0, 1, 0]])
center = rasterize(pair, cam).image.pixels[31, 31]
print("center pixel (red in front, green behind)", center)
write_image("pair.png", rasterize(pair, cam).image)
