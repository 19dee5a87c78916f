"""Precision tables: the two metric readings, and the effect of smoothing."""

import numpy as np

from suction_unet.evaluation import EvalConfig, evaluate, format_table, precision_literal, precision_standard
from suction_unet.postprocess import process_map

rng = np.random.default_rng(0)

# a label with one square region and a noisy prediction centred on it
label = np.zeros((64, 64))
label[20:36, 24:40] = 1
pred = np.clip(0.7 * label + rng.normal(0.15, 0.12, label.shape), 0, 1)

for smooth in (False, True):
    m = process_map(pred, smooth=smooth)
    print("smooth=%s" % smooth)
    for t in (0.98, 0.85, 0.5):
        print("  t=%.2f  literal %.3f  standard %.3f" % (t, precision_literal(m, label, t), precision_standard(m, label, t)))


class DistractedModel:
    """Stands in for a trained network: the label at 0.8, plus a false bright
    patch elsewhere whose strength varies per scene."""

    def __init__(self, mode, labels, max_distractor):
        self.input_mode = mode
        self.labels = labels
        self.strength = rng.uniform(0, max_distractor, len(labels))

    def predict(self, x):
        idx = x[:, 0, 0, 0].astype(int)
        out = 0.8 * self.labels[idx] + rng.normal(0, 0.05, self.labels[idx].shape)
        out[:, 45:55, 5:15] += self.strength[idx, None, None]
        return np.clip(out, 0, 1)


labels = np.stack([np.roll(label, 2 * i, axis=1) for i in range(10)])
X = np.zeros((10, 128, 128, 6), np.float32)
X[:, 0, 0, 0] = np.arange(10)
columns = {}
# weaker distractors stand for richer inputs
for mode, max_distractor in (("rgb", 1.2), ("rgbd", 0.9), ("rgbp", 0.6)):
    res = evaluate(DistractedModel(mode, labels, max_distractor), (X, labels[..., None]), EvalConfig())
    columns[mode] = res.gaussian
print(format_table(columns))
