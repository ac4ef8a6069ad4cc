"""Forward and backward passes for the layer types LeNet-5 needs.

All functions are pure: they never modify their inputs and return fresh
arrays plus whatever cache the matching backward needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ShapeError


@dataclass
class ConvParams:
    weights: np.ndarray  # [out_ch, in_ch, kh, kw]
    bias: np.ndarray  # [out_ch]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be rank 4, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} kernels")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"bad stride/padding {self.stride}/{self.padding}")


@dataclass
class DenseParams:
    weights: np.ndarray  # [out_features, in_features]
    bias: np.ndarray  # [out_features]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bad dense params {self.weights.shape} / {self.bias.shape}")


class ConvCache(NamedTuple):
    cols: np.ndarray  # [C*kh*kw, N*H'*W']
    input_shape: tuple
    params: ConvParams
    out_hw: tuple


class PoolContext(NamedTuple):
    # winning position inside each 2x2 window, 0..3 in row-major order
    argmax_index: np.ndarray
    input_shape: tuple


class DenseCache(NamedTuple):
    input: np.ndarray
    params: DenseParams


class ActCache(NamedTuple):
    kind: str
    input: np.ndarray
    output: np.ndarray


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _check_conv_input(x: np.ndarray, params: ConvParams):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [N,C,H,W], got {x.shape}")
    if x.shape[1] != params.weights.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {params.weights.shape[1]}")
    _, _, kh, kw = params.weights.shape
    return conv_output_hw(x.shape[2], x.shape[3], kh, kw, params.stride, params.padding)


def zero_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.array(x, dtype=np.float64)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, params: ConvParams):
    """Direct convolution: slide each kernel tap over the padded input.

    Accumulates taps in (channel, row, col) ascending order, then adds the bias.
    Returns ``(output, cache)``; the cache is the same one the im2col path builds
    so either forward can feed :func:`conv2d_backward`.
    """
    ho, wo = _check_conv_input(x, params)
    s = params.stride
    w = params.weights
    n = x.shape[0]
    o, c_in, kh, kw = w.shape
    xp = zero_pad(x, params.padding)
    out = np.zeros((n, o, ho, wo))
    for c in range(c_in):
        for a in range(kh):
            for b in range(kw):
                win = xp[:, c, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s]
                out += win[:, None, :, :] * w[None, :, c, a, b, None, None]
    out += params.bias[None, :, None, None]
    return out, ConvCache(im2col(xp, kh, kw, s, ho, wo), x.shape, params, (ho, wo))


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Unfold an already padded batch into a ``[C*kh*kw, N*ho*wo]`` patch matrix."""
    n, c, _, _ = xp.shape
    s = stride
    cols = np.empty((c, kh, kw, n, ho, wo))
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, :, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols: np.ndarray, padded_shape: tuple, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns into a padded batch."""
    n, c, _, _ = padded_shape
    s = stride
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros(padded_shape)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s] += cols[:, a, b].transpose(1, 0, 2, 3)
    return out


def conv2d_forward_im2col(x: np.ndarray, params: ConvParams):
    ho, wo = _check_conv_input(x, params)
    o, _, kh, kw = params.weights.shape
    n = x.shape[0]
    cols = im2col(zero_pad(x, params.padding), kh, kw, params.stride, ho, wo)
    out = T.matmul(params.weights.reshape(o, -1), cols)
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out), ConvCache(cols, x.shape, params, (ho, wo))


def conv2d_backward(grad_out: np.ndarray, cache: ConvCache):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    params = cache.params
    n, c, h, w = cache.input_shape
    o, _, kh, kw = params.weights.shape
    ho, wo = cache.out_hw
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, o, ho, wo)}")
    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
    grad_bias = T.reduce_sum(g, axis=1)
    grad_weights = T.matmul(g, cache.cols.T).reshape(params.weights.shape)
    grad_cols = T.matmul(params.weights.reshape(o, -1).T, g)
    p = params.padding
    gxp = col2im(grad_cols, (n, c, h + 2 * p, w + 2 * p), kh, kw, params.stride, ho, wo)
    grad_input = gxp[:, :, p:p + h, p:p + w] if p else gxp
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def maxpool2_forward(x: np.ndarray):
    if x.ndim != 4:
        raise ShapeError(f"pool input must be [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. the lowest flat index on ties
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, PoolContext(idx.astype(np.int8), x.shape)


def maxpool2_backward(grad_out: np.ndarray, ctx: PoolContext) -> np.ndarray:
    n, c, h, w = ctx.input_shape
    if grad_out.shape != (n, c, h // 2, w // 2):
        raise ShapeError(f"grad_out shape {grad_out.shape} != pool output {(n, c, h // 2, w // 2)}")
    windows = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(windows, ctx.argmax_index[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    return windows.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def dense_forward(x: np.ndarray, params: DenseParams):
    if x.ndim != 2 or x.shape[1] != params.weights.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match in_features {params.weights.shape[1]}")
    out = T.matmul(x, params.weights.T) + params.bias[None, :]
    return out, DenseCache(x, params)


def dense_backward(grad_out: np.ndarray, cache: DenseCache):
    x, params = cache
    if grad_out.shape != (x.shape[0], params.weights.shape[0]):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match dense output")
    grad_input = T.matmul(grad_out, params.weights)
    grad_weights = T.matmul(grad_out.T, x)
    grad_bias = T.reduce_sum(grad_out, axis=0)
    return grad_input, grad_weights, grad_bias


ACTIVATIONS = ("relu", "tanh")


def activation_forward(x: np.ndarray, kind: str):
    if kind == "relu":
        out = np.where(x > 0, x, 0.0)
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out, ActCache(kind, x, out)


def activation_backward(grad_out: np.ndarray, cache: ActCache) -> np.ndarray:
    if grad_out.shape != cache.input.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != activation input {cache.input.shape}")
    if cache.kind == "relu":
        # derivative at exactly 0 is taken as 0
        return np.where(cache.input > 0, grad_out, 0.0)
    return grad_out * (1.0 - cache.output * cache.output)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / T.reduce_sum(e, axis=1)[:, None]
