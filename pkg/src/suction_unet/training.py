"""Weighted cross-entropy loss, optimizers, learning-rate schedule and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DIHEDRAL_OPS, SceneSample, augment_input, downsample_label
from .geometry import DEFAULT_BOUNDS, WorkspaceBounds, assemble_input, backproject
from .unet import UNetModel, normalize_mode

log = logging.getLogger(__name__)

# positive-class weight per input mode
DEFAULT_ALPHA = {"rgb": 5.0, "rgbd": 4.0, "rgbp": 2.0}
DEFAULT_BETA = 1e-4


@dataclass
class LossConfig:
    alpha: float = 2.0
    beta: float = DEFAULT_BETA
    clamp_eps: float = 1e-7

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must be in (0, 0.5)")

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "LossConfig":
        return cls(alpha=DEFAULT_ALPHA[normalize_mode(mode)], **kwargs)


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.8
    decay_every: int = 5
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    optimizer: str = "adam"
    augment: bool = True
    target_loss: float | None = None  # stop once an epoch's mean data loss is below this

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("decay_every and batch_size must be positive, epochs non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ----------------------------------------------------------------------------
# loss


def _check_pair(pred, label):
    if np.shape(pred) != np.shape(label):
        raise ValueError(f"prediction shape {np.shape(pred)} != label shape {np.shape(label)}")


def data_loss(pred: np.ndarray, label: np.ndarray, cfg: LossConfig) -> float:
    """Mean weighted binary cross-entropy over every pixel of the batch."""
    _check_pair(pred, label)
    p = np.clip(np.asarray(pred, dtype=np.float64), cfg.clamp_eps, 1 - cfg.clamp_eps)
    y = np.asarray(label, dtype=np.float64)
    per_pixel = -cfg.alpha * y * np.log(p) - (1 - y) * np.log1p(-p)
    return float(per_pixel.mean())


def weight_penalty(params: dict) -> float:
    """Sum of squared convolution/deconvolution kernel entries."""
    return float(sum(np.sum(np.square(v, dtype=np.float64)) for k, v in params.items() if k.endswith(".weight")))


def loss(pred, label, params: dict | None, cfg: LossConfig) -> float:
    """Data term plus ``beta`` times the squared kernel norm (biases and BN excluded)."""
    total = data_loss(pred, label, cfg)
    if params is not None and cfg.beta:
        total += cfg.beta * weight_penalty(params)
    return total


def loss_gradient(pred: np.ndarray, label: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """d(data loss)/d(prediction).  Zero where the clamp is active."""
    _check_pair(pred, label)
    pred = np.asarray(pred)
    p = np.clip(pred, cfg.clamp_eps, 1 - cfg.clamp_eps)
    y = np.asarray(label, dtype=pred.dtype)
    g = (-cfg.alpha * y / p + (1 - y) / (1 - p)) / pred.size
    g[(pred < cfg.clamp_eps) | (pred > 1 - cfg.clamp_eps)] = 0
    return g.astype(pred.dtype, copy=False)


def add_weight_decay(grads: dict, params: dict, beta: float) -> dict:
    """Add ``2 * beta * w`` to each kernel gradient in place."""
    if beta:
        for k, g in grads.items():
            if k.endswith(".weight"):
                g += (2 * beta) * params[k]
    return grads


# ----------------------------------------------------------------------------
# optimizers


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.9, velocity: dict | None = None) -> dict:
    """Momentum SGD, in place: ``v = momentum * v + g``, ``w -= lr * v``.

    Returns the velocity dict (created on first use).
    """
    if velocity is None:
        velocity = {}
    for k, g in grads.items():
        w = params[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {k}")
        v = velocity.get(k)
        if v is None:
            v = velocity[k] = np.zeros_like(w)
        v *= momentum
        v += g
        if lr:
            w -= (lr * v).astype(w.dtype, copy=False)
    return velocity


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, lr: float, state: AdamState) -> AdamState:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for k, g in grads.items():
        w = params[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {k}")
        m = state.m.setdefault(k, np.zeros_like(w))
        v = state.v.setdefault(k, np.zeros_like(w))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        if lr:
            w -= (lr / c1 * m / (np.sqrt(v / c2) + state.eps)).astype(w.dtype, copy=False)
    return state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Staircase schedule ``lr0 * decay ** (epoch // decay_every)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


# ----------------------------------------------------------------------------
# data preparation


def scene_input(sample: SceneSample, mode: str, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> np.ndarray:
    mode = normalize_mode(mode)
    points = backproject(sample.depth, sample.intrinsics) if mode == "rgbp" else None
    return assemble_input(sample.rgb, sample.depth, points, mode, bounds)


def prepare_arrays(samples, mode: str, bounds: WorkspaceBounds = DEFAULT_BOUNDS):
    """Stack scenes into ``X (n, 128, 128, C)`` and labels ``Y (n, 64, 64, 1)``, float32."""
    X = np.stack([scene_input(s, mode, bounds) for s in samples]).astype(np.float32)
    Y = np.stack([downsample_label(s.mask) for s in samples])[..., None].astype(np.float32)
    return X, Y


# ----------------------------------------------------------------------------
# training loop


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    mean_loss: float  # data term plus weight penalty, averaged over batches
    mean_data_loss: float
    seconds: float


def write_metrics(path, records) -> None:
    """One ``epoch<TAB>lr<TAB>mean_loss`` line per epoch."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.epoch}\t{r.lr:.10g}\t{r.mean_loss:.10g}\n")


def train_step(model: UNetModel, xb, yb, lr: float, train_cfg: TrainConfig, loss_cfg: LossConfig, opt_state):
    pred = model.forward(xb, mode="train")
    params = model.trainable()
    dl = data_loss(pred, yb, loss_cfg)
    total = dl + loss_cfg.beta * weight_penalty(params)
    model.backward(loss_gradient(pred, yb, loss_cfg))
    grads = add_weight_decay(model.grads(), params, loss_cfg.beta)
    if train_cfg.optimizer == "adam":
        opt_state = adam_step(params, grads, lr, opt_state or AdamState())
    else:
        opt_state = sgd_step(params, grads, lr, train_cfg.momentum, opt_state)
    return total, dl, opt_state


def train(
    model: UNetModel,
    dataset,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig | None = None,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
    metrics_path=None,
    progress=None,
):
    """Train ``model`` in place and return the per-epoch records.

    ``dataset`` is a list of :class:`SceneSample` or a prepared ``(X, Y)``
    pair.  Shuffling and augmentation draws come from ``train_cfg.seed``.
    """
    if isinstance(dataset, tuple):
        X, Y = dataset
    else:
        if not dataset:
            raise TrainingError("training set is empty")
        X, Y = prepare_arrays(dataset, model.input_mode, bounds)
    if len(X) == 0:
        raise TrainingError("training set is empty")
    loss_cfg = loss_cfg or LossConfig.for_mode(model.input_mode)
    rng = np.random.default_rng(train_cfg.seed)
    opt_state = None
    records = []
    n = len(X)
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, train_cfg)
        order = rng.permutation(n)
        totals, datas = [], []
        for b0 in range(0, n, train_cfg.batch_size):
            idx = order[b0 : b0 + train_cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            if train_cfg.augment:
                ops = rng.integers(len(DIHEDRAL_OPS), size=len(idx))
                pairs = [augment_input(x, y, DIHEDRAL_OPS[o], model.input_mode) for x, y, o in zip(xb, yb, ops)]
                xb = np.stack([p[0] for p in pairs])
                yb = np.stack([p[1] for p in pairs])
            total, dl, opt_state = train_step(model, xb, yb, lr, train_cfg, loss_cfg, opt_state)
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b0 // train_cfg.batch_size}")
            totals.append(total)
            datas.append(dl)
        rec = EpochRecord(epoch, lr, float(np.mean(totals)), float(np.mean(datas)), time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d lr %.3g loss %.5f data %.5f (%.1fs)", epoch, lr, rec.mean_loss, rec.mean_data_loss, rec.seconds)
        if progress is not None:
            progress(rec)
        if metrics_path is not None:
            write_metrics(metrics_path, records)
        if train_cfg.target_loss is not None and rec.mean_data_loss < train_cfg.target_loss:
            break
    model.set_mode("eval")
    return records
