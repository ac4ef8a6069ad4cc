"""Central finite-difference checks for every hand-written backward pass."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import layers as L
from .model import ModelConfig, backward, build_mini_model, forward
from .optim import softmax_cross_entropy
from .tensor import make_rng

EPS = 1e-6
TOLERANCE = 1e-5
# denominators are floored so that entries that are zero up to round-off do
# not turn FD noise (~1e-9 absolute) into large relative errors; below the
# floor the comparison is effectively absolute at TOLERANCE * ABS_FLOOR
ABS_FLOOR = 1e-3
KINK = 1e-4


class CheckResult(NamedTuple):
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)


def _diff(fp, fm, cotangent, eps):
    if cotangent is None:
        return (fp - fm) / (2 * eps)
    # contract the output difference rather than differencing two large sums
    return float(np.sum(cotangent * (fp - fm))) / (2 * eps)


def numeric_grad(f: Callable, x: np.ndarray, eps: float = EPS, valid=None, cotangent=None):
    """Central differences of ``f`` w.r.t. every element of ``x`` (mutated and restored).

    ``f`` returns a scalar, or an array contracted with ``cotangent``.
    ``valid``, if given, is called after each perturbation; coordinates where it
    returns False (a kink was crossed) come back as NaN.
    """
    grad = np.empty(x.shape)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp, ok_p = f(), valid is None or valid()
        flat[i] = orig - eps
        fm, ok_m = f(), valid is None or valid()
        flat[i] = orig
        gflat[i] = _diff(fp, fm, cotangent, eps) if ok_p and ok_m else np.nan
    return grad


def directional(f: Callable, x: np.ndarray, v: np.ndarray, eps: float = EPS, cotangent=None) -> float:
    orig = x.copy()
    x[...] = orig + eps * v
    fp = f()
    x[...] = orig - eps * v
    fm = f()
    x[...] = orig
    return _diff(fp, fm, cotangent, eps)


def _compare(name, pairs, directions=()):
    errs, checked, skipped = [0.0], 0, 0
    for analytic, numeric in pairs:
        ok = ~np.isnan(numeric)
        skipped += int((~ok).sum())
        checked += int(ok.sum())
        if ok.any():
            errs.append(float(rel_error(analytic[ok], numeric[ok]).max()))
    for analytic, numeric in directions:
        checked += 1
        errs.append(float(rel_error(analytic, numeric)))
    return CheckResult(name, max(errs), checked, skipped)


def _check_linear_op(name, run, arrays, rng):
    """Check ``run(*arrays) -> (out, grads)`` against FD of ``sum(u * out)``."""
    out, _ = run(*arrays)
    u = rng.standard_normal(out.shape)
    f = lambda: run(*arrays)[0]
    _, grads = run(*arrays, cotangent=u)
    pairs = [(g, numeric_grad(f, a, cotangent=u)) for g, a in zip(grads, arrays)]
    dirs = []
    for g, a in zip(grads, arrays):
        v = rng.standard_normal(a.shape)
        dirs.append((float(np.sum(g * v)), directional(f, a, v, cotangent=u)))
    return _compare(name, pairs, dirs)


def check_conv(rng) -> CheckResult:
    results = []
    for stride, pad in ((1, 0), (1, 1), (2, 2)):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)

        def run(x, w, b, cotangent=None):
            out, cache = L.conv2d_forward_im2col(x, L.ConvParams(w, b, stride, pad))
            if cotangent is None:
                return out, None
            return out, L.conv2d_backward(cotangent, cache)

        results.append(_check_linear_op("conv2d", run, [x, w, b], rng))
    return _worst("conv2d", results)


def check_dense(rng) -> CheckResult:
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)

    def run(x, w, b, cotangent=None):
        out, cache = L.dense_forward(x, L.DenseParams(w, b))
        return out, None if cotangent is None else L.dense_backward(cotangent, cache)

    return _check_linear_op("dense", run, [x, w, b], rng)


def check_maxpool(rng) -> CheckResult:
    x = rng.standard_normal((2, 2, 4, 6))
    _, ctx0 = L.maxpool2_forward(x)

    def run(x, cotangent=None):
        out, ctx = L.maxpool2_forward(x)
        return out, None if cotangent is None else (L.maxpool2_backward(cotangent, ctx),)

    out, _ = run(x)
    u = rng.standard_normal(out.shape)
    f = lambda: run(x)[0]
    same = lambda: np.array_equal(L.maxpool2_forward(x)[1].argmax_index, ctx0.argmax_index)
    (g,) = run(x, cotangent=u)[1]
    return _compare("maxpool2", [(g, numeric_grad(f, x, valid=same, cotangent=u))])


def check_activation(kind, rng) -> CheckResult:
    x = rng.standard_normal((3, 5))
    if kind == "relu":
        # keep every sample clear of the kink
        x = np.where(np.abs(x) < KINK, np.sign(x + 0.5) * 0.5, x)

    def run(x, cotangent=None):
        out, cache = L.activation_forward(x, kind)
        return out, None if cotangent is None else (L.activation_backward(cotangent, cache),)

    return _check_linear_op(kind, run, [x], rng)


def check_softmax_ce(rng) -> CheckResult:
    z = rng.standard_normal((4, 3)) * 2
    labels = rng.integers(0, 3, size=4)
    g = softmax_cross_entropy(z, labels).grad_logits
    f = lambda: softmax_cross_entropy(z, labels).mean_loss
    v = rng.standard_normal(z.shape)
    return _compare("softmax_cross_entropy", [(g, numeric_grad(f, z))],
                    [(float(np.sum(g * v)), directional(f, z, v))])


def _pattern(tape):
    parts = []
    for cache in tape.caches:
        if isinstance(cache, L.ActCache) and cache.kind == "relu":
            parts.append(cache.input > 0)
        elif isinstance(cache, L.PoolContext):
            parts.append(cache.argmax_index)
    return parts


def _mini_problem(seed: int, activation: str):
    # resample until every parametric layer carries gradient signal; with
    # relu a dead unit pattern can otherwise zero out whole layers
    for attempt in range(50):
        rng = make_rng(seed, 7, attempt)
        model = build_mini_model(ModelConfig(activation=activation, seed=seed))
        for p in model.parameters():
            p[...] = rng.standard_normal(p.shape) * 0.5
        x = rng.random((4, 1, 8, 8))
        labels = rng.integers(0, model.config.num_classes, size=4)
        logits, tape = forward(model, x)
        grads = backward(model, tape, softmax_cross_entropy(logits, labels).grad_logits)
        weight_grads = grads[0::2]
        if all(np.abs(g).max() > 1e-3 for g in weight_grads):
            return model, x, labels, tape, grads, rng
    raise RuntimeError("could not find a gradcheck problem with live gradients")


def check_model(seed: int, activation: str = "relu") -> list[CheckResult]:
    """Per-parametric-layer check of the downsized LeNet under mean cross-entropy."""
    model, x, labels, tape, grads, rng = _mini_problem(seed, activation)
    base = _pattern(tape)

    def loss():
        return softmax_cross_entropy(forward(model, x)[0], labels).mean_loss

    def same_pattern():
        return all(np.array_equal(a, b) for a, b in zip(_pattern(forward(model, x)[1]), base))

    results = []
    params = model.parameters()
    offset = 0
    for layer in model.parametric_layers():
        n = len(layer.tensors)
        pairs, dirs = [], []
        for p, g in zip(params[offset:offset + n], grads[offset:offset + n]):
            pairs.append((g, numeric_grad(loss, p, valid=same_pattern)))
            v = rng.standard_normal(p.shape)
            dirs.append((float(np.sum(g * v)), directional(loss, p, v)))
        offset += n
        results.append(_compare(f"model:{layer.name}", pairs, dirs))
    return results


def _worst(name, results):
    return CheckResult(name, max(r.max_rel_error for r in results),
                       sum(r.checked for r in results), sum(r.skipped for r in results))


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed, 3)
    return [
        check_conv(rng),
        check_maxpool(rng),
        check_dense(rng),
        check_activation("relu", rng),
        check_activation("tanh", rng),
        check_softmax_ce(rng),
        *check_model(seed),
    ]
