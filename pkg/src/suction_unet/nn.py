"""Layer primitives with hand-written forward and backward passes.

All feature tensors are rank-4 numpy arrays in NHWC layout
``(batch, height, width, channels)``.  Convolution kernels are stored as
``(kh, kw, c_in, c_out)``.  Every function works in whatever floating dtype
it is given: float32 is used for training, float64 for gradient checks.

Convolutions are lowered to a single GEMM through an im2col buffer.  The
buffer built by the forward pass can be handed back to the backward pass so
it is not rebuilt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when a tensor does not have the dimensions an operation needs."""


def as_tensor4(x, dtype=None) -> np.ndarray:
    """Validate ``x`` as a rank-4 NHWC tensor and return it as an ndarray."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 (n, h, w, c) tensor, got shape {arr.shape}")
    return arr


@dataclass
class ConvLayer:
    """Weights and geometry of a 2-D convolution (or 2x2 transposed convolution)."""

    weights: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel must be (kh, kw, c_in, c_out), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match c_out={self.weights.shape[3]}"
            )
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', not {self.padding!r}")
        kh, kw = self.weights.shape[:2]
        if self.padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError("'same' padding needs odd kernel sizes")

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[3]


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics of a batch norm."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, channels: int, dtype=DEFAULT_DTYPE, **kwargs) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kwargs,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    """What the batch-norm backward pass needs from the forward pass."""

    normalized: np.ndarray
    inv_std: np.ndarray
    mode: str
    gamma: np.ndarray = field(repr=False)


# ----------------------------------------------------------------------------
# convolution


def _pad_amount(layer: ConvLayer) -> tuple[int, int]:
    if layer.padding == "valid":
        return 0, 0
    kh, kw = layer.weights.shape[:2]
    return (kh - 1) // 2, (kw - 1) // 2


def _output_hw(h: int, w: int, layer: ConvLayer) -> tuple[int, int]:
    kh, kw = layer.weights.shape[:2]
    ph, pw = _pad_amount(layer)
    ho = (h + 2 * ph - kh) // layer.stride + 1
    wo = (w + 2 * pw - kw) // layer.stride + 1
    return ho, wo


def _check_conv_input(x: np.ndarray, layer: ConvLayer) -> None:
    x = as_tensor4(x)
    n, h, w, c = x.shape
    if c != layer.c_in:
        raise ShapeError(f"input has {c} channels, layer expects {layer.c_in}")
    if h == 0 or w == 0:
        raise ShapeError(f"zero-sized spatial dims {x.shape}")
    ho, wo = _output_hw(h, w, layer)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"kernel {layer.weights.shape[:2]} larger than input {(h, w)}")


def im2col(x: np.ndarray, layer: ConvLayer, out: np.ndarray | None = None) -> np.ndarray:
    """Gather receptive fields into a ``(n, ho, wo, kh*kw*c_in)`` buffer.

    The last axis is ordered ``(kh, kw, c_in)`` to match the kernel layout.
    ``out`` may supply a preallocated buffer of the right size.
    """
    n, h, w, c = x.shape
    kh, kw = layer.weights.shape[:2]
    ph, pw = _pad_amount(layer)
    ho, wo = _output_hw(h, w, layer)
    s = layer.stride
    if ph or pw:
        xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
        xp[:, ph : ph + h, pw : pw + w] = x
    else:
        xp = x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : s * ho : s, : s * wo : s]
    if out is None or out.size != n * ho * wo * kh * kw * c or out.dtype != x.dtype:
        out = np.empty(n * ho * wo * kh * kw * c, dtype=x.dtype)
    cols = out.reshape(n, ho, wo, kh, kw, c)
    np.copyto(cols, win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n, ho, wo, kh * kw * c)


def col2im(gcols: np.ndarray, input_shape, layer: ConvLayer) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add column gradients back to the input."""
    n, h, w, c = input_shape
    kh, kw = layer.weights.shape[:2]
    ph, pw = _pad_amount(layer)
    ho, wo = _output_hw(h, w, layer)
    s = layer.stride
    gcols = gcols.reshape(n, ho, wo, kh, kw, c)
    gxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=gcols.dtype)
    # one sample at a time keeps the accumulator in cache
    for b in range(n):
        gb, gx = gcols[b], gxp[b]
        for i in range(kh):
            for j in range(kw):
                gx[i : i + s * ho : s, j : j + s * wo : s] += gb[:, :, i, j, :]
    return gxp[:, ph : ph + h, pw : pw + w]


def conv2d_forward(x: np.ndarray, layer: ConvLayer, return_cols: bool = False, buffer=None):
    """Cross-correlate ``x`` with the layer kernel and add the bias.

    With ``return_cols=True`` the im2col buffer is returned alongside the
    output so the backward pass can reuse it.
    """
    _check_conv_input(x, layer)
    cols = im2col(x, layer, buffer)
    n, ho, wo, k = cols.shape
    out = cols.reshape(-1, k) @ layer.weights.reshape(k, layer.c_out)
    out += layer.bias
    out = out.reshape(n, ho, wo, layer.c_out)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(
    x: np.ndarray,
    layer: ConvLayer,
    grad_out: np.ndarray,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernel and bias.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false (first layer of a network).
    """
    _check_conv_input(x, layer)
    n, h, w, _ = x.shape
    ho, wo = _output_hw(h, w, layer)
    if grad_out.shape != (n, ho, wo, layer.c_out):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output {(n, ho, wo, layer.c_out)}"
        )
    if cols is None:
        cols = im2col(x, layer)
    k = cols.shape[-1]
    g2 = grad_out.reshape(-1, layer.c_out)
    grad_w = (cols.reshape(-1, k).T @ g2).reshape(layer.weights.shape)
    grad_b = g2.sum(axis=0)
    grad_x = None
    if need_input_grad:
        if layer.stride == 1 and layer.padding == "same":
            grad_x = _conv_input_grad_flipped(grad_out, layer)
        else:
            gcols = g2 @ layer.weights.reshape(k, layer.c_out).T
            grad_x = col2im(gcols, x.shape, layer)
    return grad_x, grad_w, grad_b


def _conv_input_grad_flipped(grad_out: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Input gradient of a stride-1 "same" convolution.

    Equals a "same" correlation of ``grad_out`` with the spatially flipped,
    channel-transposed kernel.  Done one sample at a time to bound memory.
    """
    flipped = np.ascontiguousarray(layer.weights[::-1, ::-1].transpose(0, 1, 3, 2))
    adj = ConvLayer(flipped, np.zeros(layer.c_in, flipped.dtype))
    wmat = flipped.reshape(-1, layer.c_in)
    n, h, w, _ = grad_out.shape
    grad_x = np.empty((n, h, w, layer.c_in), dtype=grad_out.dtype)
    buf = None
    for b in range(n):
        cols = im2col(grad_out[b : b + 1], adj, buf)
        buf = cols.reshape(-1)
        grad_x[b] = (cols.reshape(h * w, -1) @ wmat).reshape(h, w, layer.c_in)
    return grad_x


# ----------------------------------------------------------------------------
# transposed convolution, 2x2 kernel, stride 2


def _check_deconv(x: np.ndarray, layer: ConvLayer) -> None:
    x = as_tensor4(x)
    if layer.weights.shape[:2] != (2, 2):
        raise ShapeError(f"deconv kernel must be 2x2, got {layer.weights.shape[:2]}")
    if x.shape[3] != layer.c_in:
        raise ShapeError(f"input has {x.shape[3]} channels, layer expects {layer.c_in}")


def deconv2_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Transposed 2x2/stride-2 convolution, doubling height and width.

    ``out[n, 2i+a, 2j+b, o] = sum_c x[n, i, j, c] * W[a, b, c, o] + bias[o]``.
    It is the adjoint of a stride-2 2x2 "valid" convolution whose kernel is
    ``W`` with its channel axes swapped.
    """
    _check_deconv(x, layer)
    n, h, w, c = x.shape
    co = layer.c_out
    wmat = layer.weights.transpose(2, 0, 1, 3).reshape(c, 4 * co)
    out = (x.reshape(-1, c) @ wmat).reshape(n, h, w, 2, 2, co)
    out = out.transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * w, co)
    out += layer.bias
    return out


def deconv2_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray):
    """Gradients of :func:`deconv2_forward`; returns ``(grad_input, grad_weights, grad_bias)``."""
    _check_deconv(x, layer)
    n, h, w, c = x.shape
    co = layer.c_out
    if grad_out.shape != (n, 2 * h, 2 * w, co):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, 2 * h, 2 * w, co)}")
    # (n, h, a, w, b, co) -> (n*h*w, a*b*co)
    g = grad_out.reshape(n, h, 2, w, 2, co).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * co)
    wmat = layer.weights.transpose(2, 0, 1, 3).reshape(c, 4 * co)
    grad_x = (g @ wmat.T).reshape(n, h, w, c)
    grad_w = (x.reshape(-1, c).T @ g).reshape(c, 2, 2, co).transpose(1, 2, 0, 3)
    grad_b = grad_out.reshape(-1, co).sum(axis=0)
    return grad_x, np.ascontiguousarray(grad_w), grad_b


# ----------------------------------------------------------------------------
# max pooling, 2x2 window, stride 2


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling.

    Returns the pooled tensor and an index map holding, for every output
    element, the flat index into ``x`` of the chosen maximum.  Ties go to the
    lowest flat index.
    """
    x = as_tensor4(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even spatial dims, got {(h, w)}")
    ho, wo = h // 2, w // 2
    # window order (0,0), (0,1), (1,0), (1,1) is increasing flat index
    win = x.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    da, db = np.divmod(arg, 2)
    ni, ri, ci, chi = np.indices((n, ho, wo, c), sparse=True)
    indices = np.ravel_multi_index((ni, 2 * ri + da, 2 * ci + db, chi), x.shape)
    return out, indices


def maxpool2_backward(grad_out: np.ndarray, indices: np.ndarray, input_shape) -> np.ndarray:
    """Route each upstream gradient to the input position recorded in ``indices``."""
    n, h, w, c = input_shape
    if grad_out.shape != (n, h // 2, w // 2, c) or indices.shape != grad_out.shape:
        raise ShapeError(
            f"grad_out {grad_out.shape} / indices {indices.shape} do not match pooled dims "
            f"{(n, h // 2, w // 2, c)}"
        )
    nn_, rr, cc, ch = np.unravel_index(indices, input_shape)
    _, ri, ci, chi = np.indices(grad_out.shape, sparse=True)
    if np.any(rr // 2 != ri) or np.any(cc // 2 != ci) or np.any(ch != chi):
        raise RuntimeError("pool index map points outside its 2x2 window")
    grad_x = np.zeros(input_shape, dtype=grad_out.dtype)
    grad_x.reshape(-1)[indices.reshape(-1)] = grad_out.reshape(-1)
    return grad_x


# ----------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(x: np.ndarray, state: BatchNormState):
    """Per-channel batch normalization over (n, h, w).

    In train mode the batch statistics are used and the running statistics
    are updated in place.  Returns ``(output, cache)``.
    """
    x = as_tensor4(x)
    c = x.shape[3]
    if c != state.channels:
        raise ShapeError(f"input has {c} channels, batch norm has {state.channels}")
    if state.mode == "train":
        flat = x.reshape(-1, c)
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        state.running_var[...] = m * state.running_var + (1 - m) * var
    elif state.mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batch norm mode {state.mode!r}")
    inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)) * inv_std
    out = xhat * state.gamma.astype(x.dtype) + state.beta.astype(x.dtype)
    return out, BatchNormCache(xhat, inv_std, state.mode, state.gamma)


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    c = grad_out.shape[3]
    g = grad_out.reshape(-1, c)
    xhat = cache.normalized.reshape(-1, c)
    grad_beta = g.sum(axis=0)
    grad_gamma = (g * xhat).sum(axis=0)
    scale = (cache.gamma * cache.inv_std).astype(grad_out.dtype)
    if cache.mode == "eval":
        grad_x = g * scale
    else:
        m = g.shape[0]
        grad_x = scale * (g - grad_beta / m - xhat * (grad_gamma / m))
    return grad_x.reshape(grad_out.shape), grad_gamma, grad_beta


# ----------------------------------------------------------------------------
# activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of relu given its input ``x`` (or its output; the mask is the same)."""
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of sigmoid given its output ``y``."""
    return grad_out * y * (1 - y)


# ----------------------------------------------------------------------------
# initialization


def init_params(shape, rng_seed, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """He-normal kernel of shape ``(kh, kw, c_in, c_out)``.

    Variance is ``2 / (kh * kw * c_in)``; the same seed gives the same tensor.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or min(shape) <= 0:
        raise ValueError(f"kernel shape must be four positive dims, got {shape}")
    fan_in = shape[0] * shape[1] * shape[2]
    rng = np.random.default_rng(rng_seed)
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_bias(c_out: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(c_out, dtype)


def make_conv(kh, kw, c_in, c_out, seed, dtype=DEFAULT_DTYPE, stride=1, padding="same") -> ConvLayer:
    return ConvLayer(
        init_params((kh, kw, c_in, c_out), seed, dtype), init_bias(c_out, dtype), stride, padding
    )
