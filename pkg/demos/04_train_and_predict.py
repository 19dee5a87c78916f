"""A short training run on synthetic scenes, then a suction point.

Kept small so it finishes in a few minutes on one core; the numbers are
only meant to show the loss going down.
"""

import numpy as np

from suction_unet import training
from suction_unet.dataset import downsample_label
from suction_unet.postprocess import process_map, select_suction_point
from suction_unet.synthgen import generate_scene
from suction_unet.unet import build_unet

scenes = [generate_scene(seed, n_objects=6) for seed in range(4)]
X, Y = training.prepare_arrays(scenes, "rgbp")
print("inputs", X.shape, "labels", Y.shape, "positive rate %.3f" % Y.mean())

model = build_unet("rgbp", seed=0)
print("parameters: %d" % sum(v.size for v in model.trainable().values()))

cfg = training.TrainConfig(epochs=8, batch_size=4, augment=False)
loss_cfg = training.LossConfig.for_mode("rgbp")  # alpha = 2
for rec in training.train(model, (X, Y), cfg, loss_cfg):
    print("epoch %d  lr %.5f  loss %.4f  (%.1fs)" % (rec.epoch, rec.lr, rec.mean_loss, rec.seconds))

# predict on the first scene and pick the grasp point
raw = model.predict(X[:1])[0]
processed = process_map(raw, smooth=True)
result = select_suction_point(processed, scenes[0].depth, scenes[0].intrinsics)
print("suction result:", result.line())
r, c = result.out_pixel
print("label at chosen cell:", downsample_label(scenes[0].mask)[r, c])
