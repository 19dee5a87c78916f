"""Precision of predicted grasp maps at fixed thresholds.

Two readings of precision are provided:

* ``literal``:  #(pred >= t) / #(label == 1); can exceed 1.
* ``standard``: #(pred >= t and label == 1) / #(pred >= t).

Per-sample values are macro-averaged; samples where the ratio is undefined
are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .postprocess import process_map

DEFAULT_THRESHOLDS = (0.98, 0.85)
MODE_LABELS = {"rgb": "RGB", "rgbd": "RGB-D", "rgbp": "RGB-Points"}


@dataclass
class EvalConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    metric: str = "standard"
    use_gaussian: bool = True
    batch_size: int = 8

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds:
            raise ValueError("at least one threshold is required")
        for t in self.thresholds:
            if not 0 < t <= 1:
                raise ValueError(f"threshold {t} outside (0, 1]")
        if self.metric not in ("standard", "literal"):
            raise ValueError(f"unknown metric {self.metric!r}")


def precision_literal(pred_norm: np.ndarray, label: np.ndarray, t: float) -> float:
    positives = int(np.count_nonzero(np.asarray(label) > 0.5))
    if positives == 0:
        return math.nan
    return int(np.count_nonzero(np.asarray(pred_norm) >= t)) / positives


def precision_standard(pred_norm: np.ndarray, label: np.ndarray, t: float) -> float:
    hits = np.asarray(pred_norm) >= t
    n = int(np.count_nonzero(hits))
    if n == 0:
        return math.nan
    return int(np.count_nonzero(hits & (np.asarray(label) > 0.5))) / n


METRICS = {"literal": precision_literal, "standard": precision_standard}


def macro_mean(values) -> float:
    """Mean over the defined (non-NaN) values, summed in a fixed order."""
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return math.nan
    return math.fsum(vals) / len(vals)


def score_maps(maps, labels, cfg: EvalConfig, smooth: bool) -> dict:
    """Mean metric per threshold over a stack of raw probability maps."""
    fn = METRICS[cfg.metric]
    per_t = {t: [] for t in cfg.thresholds}
    for raw, lab in zip(maps, labels):
        norm = process_map(raw, smooth=smooth)
        lab = np.asarray(lab).reshape(norm.shape)
        for t in cfg.thresholds:
            per_t[t].append(fn(norm, lab, t))
    return {t: macro_mean(v) for t, v in per_t.items()}


@dataclass
class EvalResult:
    mode: str
    metric: str
    raw: dict  # threshold -> mean metric without smoothing
    gaussian: dict = field(default_factory=dict)  # with smoothing, when requested
    n_samples: int = 0


def predict_maps(model, X: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode predictions ``(n, 64, 64)`` in fixed-size batches."""
    out = [model.predict(X[i : i + batch_size]) for i in range(0, len(X), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(model, eval_set, cfg: EvalConfig | None = None) -> EvalResult:
    """Score ``model`` on scenes (or a prepared ``(X, Y)`` pair).

    ``model`` needs ``predict(X) -> (n, h, w)`` and an ``input_mode``.
    """
    from .training import prepare_arrays

    cfg = cfg or EvalConfig()
    if isinstance(eval_set, tuple):
        X, Y = eval_set
    else:
        if not eval_set:
            raise ValueError("evaluation set is empty")
        X, Y = prepare_arrays(eval_set, model.input_mode)
    if len(X) == 0:
        raise ValueError("evaluation set is empty")
    maps = predict_maps(model, X, cfg.batch_size)
    labels = np.asarray(Y).reshape(maps.shape)
    res = EvalResult(model.input_mode, cfg.metric, score_maps(maps, labels, cfg, smooth=False), n_samples=len(X))
    if cfg.use_gaussian:
        res.gaussian = score_maps(maps, labels, cfg, smooth=True)
    return res


def format_table(columns: dict, thresholds=DEFAULT_THRESHOLDS) -> str:
    """Tab-separated table: header ``threshold<TAB><mode>...``, one row per threshold.

    ``columns`` maps an input mode to ``{threshold: value}``.
    """
    header = ["threshold"] + [MODE_LABELS.get(m, m) for m in columns]
    lines = ["\t".join(header)]
    for t in thresholds:
        row = [f"{t:g}"] + [f"{columns[m][t]:.4f}" for m in columns]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
