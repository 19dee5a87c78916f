"""Render a synthetic bin, look at its label, and write a small dataset."""

import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from suction_unet.dataset import NAMED_OPS, augment, downsample_label, load_dataset
from suction_unet.synthgen import generate_dataset, generate_scene

scene = generate_scene(seed=3, n_objects=8)
print("rgb", scene.rgb.shape, "depth %.3f..%.3f m" % (scene.depth[scene.depth > 0].min(), scene.depth.max()))
print("graspable pixels: %.1f%%" % (100 * scene.mask.mean()))
print("null depth pixels:", int((scene.depth == 0).sum()))

# the label the network is trained on lives at 64x64
label = downsample_label(scene.mask)
print("label", label.shape, "positive cells:", int(label.sum()))

# the eight dihedral ops keep rgb, depth, mask and intrinsics in step
for name in NAMED_OPS:
    t = augment(scene, name)
    print("%-8s mask sum %d  cx %.1f" % (name, t.mask.sum(), t.intrinsics.cx))

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
generate_dataset(out / "data", count=4, seed=0)
print("wrote", sorted(p.name for p in (out / "data").iterdir()))
print("reloaded", len(load_dataset(out / "data")), "scenes")

# side by side: color, depth, mask
d = scene.depth / scene.depth.max()
strip = np.concatenate([scene.rgb, np.repeat((d * 255).astype(np.uint8)[..., None], 3, 2),
                        np.repeat(scene.mask[..., None] * 255, 3, 2)], axis=1)
Image.fromarray(strip).save(out / "scene.png")
print("preview:", out / "scene.png")
