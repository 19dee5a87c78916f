"""From a depth map to the six-channel RGB-Points input."""

import numpy as np

from suction_unet.geometry import (
    DEFAULT_BOUNDS,
    CameraIntrinsics,
    assemble_input,
    backproject,
    normalize_points,
    project,
)

k = CameraIntrinsics(fx=160.0, fy=160.0, cx=63.5, cy=63.5)

# a tilted plane 0.6 m away, with a few missing readings
v, u = np.mgrid[0:128, 0:128]
depth = 0.6 + 0.0005 * (u - 64)
depth[40:44, 90:94] = 0.0

pts = backproject(depth, k)
print("point grid:", pts.shape)
print("corner pixel ->", np.round(pts[0, 0], 4))
print("null pixel ->", pts[41, 91])

# projecting back lands on the original pixel
uu, vv = project(pts[10, 20], k)
print("re-projected (u, v) = (%.6f, %.6f)" % (uu, vv))

# normalized coordinates: 0 means "no point", everything else is in (0, 1]
norm = normalize_points(pts, DEFAULT_BOUNDS)
valid = norm.any(axis=-1)
print("valid points: %d of %d" % (valid.sum(), valid.size))
print("x range %.3f..%.3f" % (norm[valid, 0].min(), norm[valid, 0].max()))

rgb = np.full((128, 128, 3), 128, np.uint8)
for mode in ("rgb", "rgbd", "rgbp"):
    x = assemble_input(rgb, depth, pts, mode)
    print(mode, x.shape, x.dtype, "min %.3f max %.3f" % (x.min(), x.max()))
