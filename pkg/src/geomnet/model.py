"""LeNet-5 assembly, forward/backward over a layer tape, and checkpoints.

Layer plan on a 28x28 input (stride 1 everywhere, input zero-padded to 32x32):

    pad 32x32 -> C1 6@28x28 -> S2 6@14x14 -> C3 16@10x10 -> S4 16@5x5
    -> C5 120@1x1 -> flatten 120 -> F6 84 -> out num_classes

An activation follows C1, C3, C5 and F6.
"""

from __future__ import annotations

import itertools
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import ConfigError, ContractError, FormatError, ShapeError
from .tensor import make_rng, uniform


@dataclass(frozen=True)
class ModelConfig:
    activation: str = "relu"
    num_classes: int = 3
    seed: int = 1

    def __post_init__(self):
        if self.activation not in L.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {L.ACTIVATIONS}, got {self.activation!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")


class Pad:
    parametric = False

    def __init__(self, pad):
        self.pad = pad
        self.name = f"pad{pad}"

    def forward(self, x):
        return L.zero_pad(x, self.pad), x.shape

    def backward(self, g, shape):
        p = self.pad
        return g[:, :, p:p + shape[2], p:p + shape[3]], []

    def out_shape(self, s):
        return (s[0], s[1] + 2 * self.pad, s[2] + 2 * self.pad)


class Conv:
    parametric = True

    def __init__(self, name, in_ch, out_ch, k, stride=1, padding=0):
        self.name = name
        self.params = L.ConvParams(np.zeros((out_ch, in_ch, k, k)), np.zeros(out_ch), stride, padding)
        self.fan_in, self.fan_out = in_ch * k * k, out_ch * k * k

    @property
    def tensors(self):
        return [self.params.weights, self.params.bias]

    def forward(self, x):
        return L.conv2d_forward_im2col(x, self.params)

    def backward(self, g, cache):
        gx, gw, gb = L.conv2d_backward(g, cache)
        return gx, [gw, gb]

    def out_shape(self, s):
        w = self.params.weights
        ho, wo = L.conv_output_hw(s[1], s[2], w.shape[2], w.shape[3], self.params.stride, self.params.padding)
        return (w.shape[0], ho, wo)


class Dense:
    parametric = True

    def __init__(self, name, in_features, out_features):
        self.name = name
        self.params = L.DenseParams(np.zeros((out_features, in_features)), np.zeros(out_features))
        self.fan_in, self.fan_out = in_features, out_features

    @property
    def tensors(self):
        return [self.params.weights, self.params.bias]

    def forward(self, x):
        return L.dense_forward(x, self.params)

    def backward(self, g, cache):
        gx, gw, gb = L.dense_backward(g, cache)
        return gx, [gw, gb]

    def out_shape(self, s):
        return (self.params.weights.shape[0],)


class MaxPool:
    parametric = False
    name = "maxpool2"

    def forward(self, x):
        return L.maxpool2_forward(x)

    def backward(self, g, ctx):
        return L.maxpool2_backward(g, ctx), []

    def out_shape(self, s):
        if s[1] % 2 or s[2] % 2:
            raise ShapeError(f"cannot pool odd spatial dims {s}")
        return (s[0], s[1] // 2, s[2] // 2)


class Activation:
    parametric = False

    def __init__(self, kind):
        self.kind = kind
        self.name = kind

    def forward(self, x):
        return L.activation_forward(x, self.kind)

    def backward(self, g, cache):
        return L.activation_backward(g, cache), []

    def out_shape(self, s):
        return s


class Flatten:
    parametric = False
    name = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape):
        return g.reshape(shape), []

    def out_shape(self, s):
        return (math.prod(s),)


_model_ids = itertools.count()


@dataclass
class Tape:
    model_id: int
    version: int
    input_shape: tuple
    caches: list = field(default_factory=list)


class Model:
    """Ordered layer list plus per-parameter momentum velocities."""

    def __init__(self, config: ModelConfig, layers, input_hw=(28, 28), plan=None):
        self.config = config
        self.layers = layers
        self.input_hw = tuple(input_hw)
        self.velocities = [np.zeros_like(t) for t in self.parameters()]
        self.id = next(_model_ids)
        # bumped whenever parameters change, so stale tapes can be detected
        self.version = 0
        got = self.shape_chain()
        if plan is not None and got != plan:
            raise ShapeError(f"shape chain {got} does not match plan {plan}")

    def shape_chain(self):
        s = (1, *self.input_hw)
        chain = [s]
        for layer in self.layers:
            s = layer.out_shape(s)
            if not isinstance(layer, Activation):
                chain.append(s)
        return chain

    def parametric_layers(self):
        return [layer for layer in self.layers if layer.parametric]

    def parameters(self):
        return [t for layer in self.parametric_layers() for t in layer.tensors]

    def num_parameters(self):
        return sum(t.size for t in self.parameters())

    def mark_updated(self):
        self.version += 1


LENET_PLAN = [(1, 28, 28), (1, 32, 32), (6, 28, 28), (6, 14, 14), (16, 10, 10), (16, 5, 5),
              (120, 1, 1), (120,), (84,), (3,)]


def _init_glorot(model: Model, seed: int):
    rng = make_rng(seed, 0)
    for layer in model.parametric_layers():
        limit = math.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        w = layer.params.weights
        w[...] = uniform(w.shape, -limit, limit, rng)
        layer.params.bias[...] = 0.0


def _lenet_layers(config: ModelConfig):
    act = config.activation
    return [
        Pad(2),
        Conv("C1", 1, 6, 5), Activation(act), MaxPool(),
        Conv("C3", 6, 16, 5), Activation(act), MaxPool(),
        Conv("C5", 16, 120, 5), Activation(act),
        Flatten(),
        Dense("F6", 120, 84), Activation(act),
        Dense("OUT", 84, config.num_classes),
    ]


def build_model(config: ModelConfig = ModelConfig()) -> Model:
    """LeNet-5 with Glorot-uniform weights, zero biases and zero velocities."""
    plan = LENET_PLAN[:-1] + [(config.num_classes,)]
    model = Model(config, _lenet_layers(config), plan=plan)
    _init_glorot(model, config.seed)
    return model


def build_mini_model(config: ModelConfig = ModelConfig()) -> Model:
    """Downsized LeNet-5 on 8x8 inputs, same layer sequence, for gradient checks.

    pad 12x12 -> C1 2@8x8 -> S2 2@4x4 -> C3 3@2x2 -> S4 3@1x1 -> C5 4@1x1 -> F6 5 -> out.
    """
    act = config.activation
    layers = [
        Pad(2),
        Conv("C1", 1, 2, 5), Activation(act), MaxPool(),
        Conv("C3", 2, 3, 3), Activation(act), MaxPool(),
        Conv("C5", 3, 4, 1), Activation(act),
        Flatten(),
        Dense("F6", 4, 5), Activation(act),
        Dense("OUT", 5, config.num_classes),
    ]
    model = Model(config, layers, input_hw=(8, 8))
    _init_glorot(model, config.seed)
    return model


def forward(model: Model, batch: np.ndarray):
    """Returns ``(logits, tape)`` for a ``[N, 1, H, W]`` batch scaled to [0, 1]."""
    if batch.ndim != 4 or batch.shape[1:] != (1, *model.input_hw) or batch.shape[0] < 1:
        raise ShapeError(f"expected batch [N, 1, {model.input_hw[0]}, {model.input_hw[1]}], got {batch.shape}")
    tape = Tape(model.id, model.version, batch.shape)
    x = np.asarray(batch, dtype=np.float64)
    for layer in model.layers:
        x, cache = layer.forward(x)
        tape.caches.append(cache)
    return x, tape


def backward(model: Model, tape: Tape, grad_logits: np.ndarray):
    """Gradients for every parameter tensor, in :meth:`Model.parameters` order."""
    if tape.model_id != model.id or tape.version != model.version or len(tape.caches) != len(model.layers):
        raise ContractError("tape does not belong to the current state of this model")
    expected = (tape.input_shape[0], model.config.num_classes)
    if grad_logits.shape != expected:
        raise ShapeError(f"grad_logits shape {grad_logits.shape} != {expected}")
    g = grad_logits
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(tape.caches)):
        g, pgrads = layer.backward(g, cache)
        grads[:0] = pgrads
    return grads


def predict(model: Model, image: np.ndarray):
    """Class id and probability vector for one uint8 image."""
    x = np.asarray(image, dtype=np.float64).reshape(1, 1, *model.input_hw) / 255.0
    logits, _ = forward(model, x)
    probs = L.softmax(logits)[0]
    return int(np.argmax(logits[0])), probs


# -- checkpoints -----------------------------------------------------------

MAGIC = b"GEO1"
VERSION = 1
_ACT_TAGS = {"relu": 0, "tanh": 1}


def encode_checkpoint(model: Model) -> bytes:
    tensors = model.parameters()
    parts = [MAGIC, struct.pack("<BBHI", VERSION, _ACT_TAGS[model.config.activation],
                                model.config.num_classes, len(tensors))]
    for t in tensors:
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes, seed: int = 1) -> Model:
    if len(buf) < 16:
        raise FormatError("checkpoint truncated", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}", offset=0)
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch (truncated or corrupted)", offset=len(buf) - 4)
    version, act_tag, num_classes, count = struct.unpack_from("<BBHI", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    acts = {v: k for k, v in _ACT_TAGS.items()}
    if act_tag not in acts:
        raise FormatError(f"unknown activation tag {act_tag}", offset=5)
    try:
        config = ModelConfig(acts[act_tag], num_classes, seed)
    except ConfigError as e:
        raise FormatError(str(e), offset=6) from e
    model = build_model(config)
    targets = model.parameters()
    if count != len(targets):
        raise FormatError(f"expected {len(targets)} tensors, file has {count}", offset=8)
    pos = 12
    values = []
    for t in targets:
        if pos >= len(body):
            raise FormatError("shape table truncated", offset=pos)
        rank = body[pos]
        if pos + 1 + 4 * rank > len(body):
            raise FormatError("shape table truncated", offset=pos)
        dims = struct.unpack_from(f"<{rank}I", body, pos + 1)
        if dims != t.shape:
            raise FormatError(f"tensor shape {dims} does not match expected {t.shape}", offset=pos)
        pos += 1 + 4 * rank
        nbytes = 8 * t.size
        if pos + nbytes > len(body):
            raise FormatError("tensor payload truncated", offset=pos)
        values.append(np.frombuffer(body, dtype="<f8", count=t.size, offset=pos).reshape(t.shape))
        pos += nbytes
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} unexpected trailing bytes", offset=pos)
    # only mutate once the whole file has validated
    for t, v in zip(targets, values):
        t[...] = v
    return model


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())
