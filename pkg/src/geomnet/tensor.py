"""Dense float64 tensors and the primitives the rest of the engine builds on.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
Random streams come from numpy's ``Generator`` over PCG64, seeded through
``SeedSequence``; both are specified bit-for-bit by numpy and reproduce
across platforms.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

Rng = np.random.Generator

MAX_RANK = 4

# Upper bound on the temporary product block used by matmul's reduce path.
_BLOCK_ELEMS = 1 << 20


def make_rng(seed: int, *keys: int) -> Rng:
    """Return a generator deterministically derived from ``seed`` and ``keys``.

    Distinct key tuples give statistically independent streams, so callers
    can hand each image, epoch or layer its own generator.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be between 1 and {MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {dims}")
    return dims


def filled(shape: Sequence[int], value: float) -> np.ndarray:
    return np.full(check_shape(shape), float(value), dtype=np.float64)


def uniform(shape: Sequence[int], lo: float, hi: float, rng: Rng) -> np.ndarray:
    """Uniform samples in ``[lo, hi)``, drawn in row-major element order."""
    if not lo < hi:
        raise DomainError(f"invalid range: lo={lo} must be < hi={hi}")
    out = rng.uniform(lo, hi, size=check_shape(shape))
    # lo + (hi - lo) * u can round up to hi
    return np.minimum(out, np.nextafter(hi, lo))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Every output element is accumulated as ``((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...``
    with the inner index ascending, matching a naive triple loop bit for bit.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"inner dims disagree: {a.shape} x {b.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((m, n), dtype=np.float64)
    if m * n >= 4096 or k <= 8:
        # wide output: one vectorized rank-1 update per inner index
        for t in range(k):
            out += a[:, t, None] * b[None, t, :]
        return out
    # narrow output, long inner dim: reduce stacked products along axis 0,
    # which numpy accumulates sequentially from the first slice
    chunk = max(1, _BLOCK_ELEMS // (m * n))
    at = a.T
    for s in range(0, k, chunk):
        prods = at[s:s + chunk, :, None] * b[s:s + chunk, None, :]
        out = np.add.reduce(np.concatenate([out[None], prods]), axis=0)
    return out


_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def map_binary(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    if op not in _BINARY:
        raise ValueError(f"unknown binary op {op!r}")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _BINARY[op](a, b, dtype=np.float64)


def map_unary(a: np.ndarray, op: str, c: float = 1.0) -> np.ndarray:
    """Elementwise ``scale`` (by ``c``), ``exp``, ``ln`` or ``neg``."""
    a = np.asarray(a, dtype=np.float64)
    if op == "scale":
        return a * c
    if op == "exp":
        return np.exp(a)
    if op == "ln":
        if np.any(a <= 0):
            raise DomainError("ln of non-positive element")
        return np.log(a)
    if op == "neg":
        return -a
    raise ValueError(f"unknown unary op {op!r}")


def reduce_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Sum along ``axis`` accumulating strictly in ascending index order."""
    moved = np.ascontiguousarray(np.moveaxis(np.asarray(x, dtype=np.float64), axis, 0))
    return np.add.reduce(moved, axis=0)
