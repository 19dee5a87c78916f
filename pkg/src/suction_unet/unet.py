"""The grasp-region U-net: a fixed encoder/decoder with two skip connections.

Layer table (channels @ kernel size, stride-1 "same" convolutions)::

    conv1   28@11x11  -> conv2 64@7x7 -> pool
    conv3   64@5x5    (skip B, 64x64)  -> pool
    conv4  128@3x3    (skip A, 32x32)  -> pool
    conv5  192@3x3    -> deconv1 192@2x2 -> concat A (320)
    conv5b 224@3x3    -> deconv2 224@2x2 -> concat B (288)
    conv6  176@3x3    -> conv7 32@3x3 -> conv8 1@5x5 -> sigmoid

Every convolution and deconvolution except ``conv8`` is followed by batch
normalization and a ReLU.  A 128x128 input gives a 64x64 probability map.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .nn import BatchNormState, ConvLayer, ShapeError

MODE_CHANNELS = {"rgb": 3, "rgbd": 4, "rgbp": 6}
_MODE_CODES = {"rgb": 0, "rgbd": 1, "rgbp": 2}

# (name, kind, kernel, c_out); c_in of each layer follows from the wiring
ARCHITECTURE = (
    ("conv1", "conv", 11, 28),
    ("conv2", "conv", 7, 64),
    ("conv3", "conv", 5, 64),
    ("conv4", "conv", 3, 128),
    ("conv5", "conv", 3, 192),
    ("deconv1", "deconv", 2, 192),
    ("conv5b", "conv", 3, 224),
    ("deconv2", "deconv", 2, 224),
    ("conv6", "conv", 3, 176),
    ("conv7", "conv", 3, 32),
    ("conv8", "conv", 5, 1),
)


def _input_channels(c_image: int) -> dict[str, int]:
    return {
        "conv1": c_image,
        "conv2": 28,
        "conv3": 64,
        "conv4": 64,
        "conv5": 128,
        "deconv1": 192,
        "conv5b": 192 + 128,
        "deconv2": 224,
        "conv6": 224 + 64,
        "conv7": 176,
        "conv8": 32,
    }


def normalize_mode(mode: str) -> str:
    key = mode.lower().replace("-", "").replace("_", "")
    if key in ("rgbpoints",):
        key = "rgbp"
    if key not in MODE_CHANNELS:
        raise ValueError(f"unknown input mode {mode!r}; expected one of rgb, rgbd, rgbp")
    return key


class Block:
    """A conv or deconv layer, optionally followed by batch norm and ReLU."""

    def __init__(self, name: str, layer: ConvLayer, kind: str, bn: BatchNormState | None):
        self.name = name
        self.layer = layer
        self.kind = kind
        self.bn = bn
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        self._buffer = None  # im2col storage reused across training steps

    def forward(self, x: np.ndarray, keep: bool) -> np.ndarray:
        cols = None
        if self.kind == "conv":
            if keep:
                z, cols = nn.conv2d_forward(x, self.layer, return_cols=True, buffer=self._buffer)
                self._buffer = cols.reshape(-1)
            else:
                z = nn.conv2d_forward(x, self.layer)
        else:
            z = nn.deconv2_forward(x, self.layer)
        bn_cache = None
        if self.bn is not None:
            z, bn_cache = nn.batchnorm_forward(z, self.bn)
            z = nn.relu(z)
        if keep:
            self._cache = (x, cols, bn_cache, z)
        return z

    def backward(self, grad: np.ndarray, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a cached forward pass")
        x, cols, bn_cache, y = self._cache
        if self.bn is not None:
            grad = nn.relu_backward(grad, y)
            grad, g_gamma, g_beta = nn.batchnorm_backward(grad, bn_cache)
            self.grads["bn.gamma"] = g_gamma
            self.grads["bn.beta"] = g_beta
        if self.kind == "conv":
            gx, gw, gb = nn.conv2d_backward(x, self.layer, grad, cols, need_input_grad)
        else:
            gx, gw, gb = nn.deconv2_backward(x, self.layer, grad)
        self.grads["weight"] = gw
        self.grads["bias"] = gb
        self._cache = None
        return gx

    def named_tensors(self):
        yield "weight", self.layer.weights
        yield "bias", self.layer.bias
        if self.bn is not None:
            yield "bn.gamma", self.bn.gamma
            yield "bn.beta", self.bn.beta
            yield "bn.running_mean", self.bn.running_mean
            yield "bn.running_var", self.bn.running_var


@dataclass
class UNetModel:
    blocks: "OrderedDict[str, Block]"
    input_mode: str
    input_size: int = 128

    @property
    def in_channels(self) -> int:
        return MODE_CHANNELS[self.input_mode]

    @property
    def dtype(self):
        return self.blocks["conv1"].layer.weights.dtype

    def params(self) -> "OrderedDict[str, np.ndarray]":
        """Every stored tensor by name, including batch-norm running statistics.

        The arrays are the live model storage, so in-place updates take effect.
        """
        out = OrderedDict()
        for bname, block in self.blocks.items():
            for tname, arr in block.named_tensors():
                out[f"{bname}.{tname}"] = arr
        return out

    def trainable(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.params().items() if "running_" not in k)

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for bname, block in self.blocks.items():
            for tname, g in block.grads.items():
                out[f"{bname}.{tname}"] = g
        return out

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
        for block in self.blocks.values():
            if block.bn is not None:
                block.bn.mode = mode

    def _check_input(self, x: np.ndarray) -> None:
        nn.as_tensor4(x)
        n, h, w, c = x.shape
        if c != self.in_channels:
            raise ShapeError(
                f"{self.input_mode} model expects {self.in_channels} channels, got {c}"
            )
        if (h, w) != (self.input_size, self.input_size):
            raise ShapeError(f"expected {self.input_size}x{self.input_size} input, got {h}x{w}")

    def forward(self, x: np.ndarray, mode: str = "eval", keep: bool | None = None) -> np.ndarray:
        """Predict the grasp-probability map, ``(n, s, s, C) -> (n, s/2, s/2, 1)``.

        ``keep`` caches activations for :meth:`backward`; it defaults to True in
        train mode.  Eval mode without ``keep`` leaves the model untouched.
        """
        self._check_input(x)
        self.set_mode(mode)
        if keep is None:
            keep = mode == "train"
        x = np.asarray(x, dtype=self.dtype)
        b = self.blocks
        h = b["conv1"].forward(x, keep)
        h = b["conv2"].forward(h, keep)
        h, idx1 = nn.maxpool2_forward(h)
        skip_b = b["conv3"].forward(h, keep)
        h, idx2 = nn.maxpool2_forward(skip_b)
        skip_a = b["conv4"].forward(h, keep)
        h, idx3 = nn.maxpool2_forward(skip_a)
        h = b["conv5"].forward(h, keep)
        h = b["deconv1"].forward(h, keep)
        h = concat_skip(h, skip_a)
        h = b["conv5b"].forward(h, keep)
        h = b["deconv2"].forward(h, keep)
        h = concat_skip(h, skip_b)
        h = b["conv6"].forward(h, keep)
        h = b["conv7"].forward(h, keep)
        logits = b["conv8"].forward(h, keep)
        y = nn.sigmoid(logits)
        if keep:
            self._pools = (idx1, idx2, idx3)
            self._pool_shapes = (
                (x.shape[0], x.shape[1], x.shape[2], 64),
                skip_b.shape,
                skip_a.shape,
            )
            self._out = y
        return y

    def backward(self, grad_out: np.ndarray) -> None:
        """Backpropagate ``dLoss/dprediction``; gradients land in :meth:`grads`."""
        b = self.blocks
        (idx1, idx2, idx3), (s1, s2, s3) = self._pools, self._pool_shapes
        g = nn.sigmoid_backward(grad_out, self._out)
        g = b["conv8"].backward(g)
        g = b["conv7"].backward(g)
        g = b["conv6"].backward(g)
        g, g_skip_b = split_skip(g, 224)
        g = b["deconv2"].backward(g)
        g = b["conv5b"].backward(g)
        g, g_skip_a = split_skip(g, 192)
        g = b["deconv1"].backward(g)
        g = b["conv5"].backward(g)
        g = nn.maxpool2_backward(g, idx3, s3) + g_skip_a
        g = b["conv4"].backward(g)
        g = nn.maxpool2_backward(g, idx2, s2) + g_skip_b
        g = b["conv3"].backward(g)
        g = nn.maxpool2_backward(g, idx1, s1)
        g = b["conv2"].backward(g)
        b["conv1"].backward(g, need_input_grad=False)
        self._pools = self._pool_shapes = self._out = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode forward returning ``(n, s/2, s/2)`` maps."""
        return self.forward(x, mode="eval", keep=False)[..., 0]


def concat_skip(decoder: np.ndarray, skip: np.ndarray) -> np.ndarray:
    """Channel concatenation: decoder features first, skip features second."""
    return np.concatenate([decoder, skip], axis=3)


def split_skip(grad: np.ndarray, decoder_channels: int):
    return grad[..., :decoder_channels], grad[..., decoder_channels:]


def build_unet(input_mode: str = "rgbp", seed: int = 0, dtype=nn.DEFAULT_DTYPE, input_size: int = 128) -> UNetModel:
    """Create a freshly initialized model for the given input mode."""
    input_mode = normalize_mode(input_mode)
    if input_size % 8:
        raise ValueError("input size must be a multiple of 8")
    c_in = _input_channels(MODE_CHANNELS[input_mode])
    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(len(ARCHITECTURE))
    blocks = OrderedDict()
    for (name, kind, k, c_out), s in zip(ARCHITECTURE, seeds):
        if kind == "conv":
            layer = nn.make_conv(k, k, c_in[name], c_out, s, dtype)
        else:
            layer = ConvLayer(
                nn.init_params((2, 2, c_in[name], c_out), s, dtype), nn.init_bias(c_out, dtype), 2, "valid"
            )
        bn = None if name == "conv8" else BatchNormState.create(c_out, dtype)
        blocks[name] = Block(name, layer, kind, bn)
    return UNetModel(blocks, input_mode, input_size)


# ----------------------------------------------------------------------------
# checkpoints

MAGIC = b"SUNET1\n"
VERSION = 1


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed; the message names the offending field."""


def save_checkpoint(model: UNetModel, path) -> None:
    """Write all model tensors (float32, little endian) to ``path``."""
    params = model.params()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBI", VERSION, _MODE_CODES[model.input_mode], len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        dims = (1,) * (4 - arr.ndim) + arr.shape
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<4I", *dims))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(data: memoryview, pos: int, n: int, what: str):
    if pos + n > len(data):
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return data[pos : pos + n], pos + n


def load_checkpoint(path, dtype=nn.DEFAULT_DTYPE) -> UNetModel:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    data = memoryview(Path(path).read_bytes())
    magic, pos = _read(data, 0, len(MAGIC), "magic")
    if bytes(magic) != MAGIC:
        raise CheckpointFormatError(f"bad magic {bytes(magic)!r}")
    head, pos = _read(data, pos, 9, "header")
    version, mode_code, count = struct.unpack("<IBI", head)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    modes = {v: k for k, v in _MODE_CODES.items()}
    if mode_code not in modes:
        raise CheckpointFormatError(f"unknown input_mode code {mode_code}")
    model = build_unet(modes[mode_code], seed=0, dtype=dtype)
    expected = model.params()
    if count != len(expected):
        raise CheckpointFormatError(f"tensor count {count}, expected {len(expected)}")
    seen = set()
    for _ in range(count):
        raw, pos = _read(data, pos, 4, "name length")
        (nlen,) = struct.unpack("<I", raw)
        raw, pos = _read(data, pos, nlen, "tensor name")
        try:
            name = bytes(raw).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("tensor name is not valid UTF-8") from None
        if name not in expected or name in seen:
            raise CheckpointFormatError(f"unexpected tensor name {name!r}")
        seen.add(name)
        raw, pos = _read(data, pos, 16, f"dims of {name}")
        dims = struct.unpack("<4I", raw)
        target = expected[name]
        if int(np.prod(dims)) != target.size:
            raise CheckpointFormatError(f"dims {dims} of {name} do not match {target.shape}")
        raw, pos = _read(data, pos, 4 * target.size, f"data of {name}")
        target[...] = np.frombuffer(raw, dtype="<f4").reshape(target.shape)
    if pos != len(data):
        raise CheckpointFormatError(f"{len(data) - pos} trailing bytes after last tensor")
    return model
