import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomnet import layers as L
from geomnet.errors import ShapeError


def brute_conv(x, w, b, stride, pad):
    """Scalar-loop reference, independent of both library paths."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i0, o0, i, j in itertools.product(range(n), range(o), range(ho), range(wo)):
        acc = 0.0
        for c0, a, bb in itertools.product(range(c), range(kh), range(kw)):
            acc += xp[i0, c0, i * stride + a, j * stride + bb] * w[o0, c0, a, bb]
        out[i0, o0, i, j] = acc + b[o0]
    return out


def random_config(rng):
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 6))
    stride, pad = int(rng.choice([1, 2])), int(rng.choice([0, 1, 2]))
    h = int(rng.integers(max(1, k - 2 * pad), 11))
    w = int(rng.integers(max(1, k - 2 * pad), 11))
    x = rng.standard_normal((n, c, h, w))
    params = L.ConvParams(rng.standard_normal((o, c, k, k)), rng.standard_normal(o), stride, pad)
    return x, params


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    p = L.ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
    out, cache = L.conv2d_forward(x, p)
    np.testing.assert_array_equal(out, x)
    gx, gw, gb = L.conv2d_backward(x * 2, cache)
    np.testing.assert_array_equal(gx, x * 2)


def test_conv_window_sum():
    out, _ = L.conv2d_forward(np.ones((1, 1, 3, 3)), L.ConvParams(np.ones((1, 1, 2, 2)), np.zeros(1)))
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 4.0))


def test_conv_c1_shape(rng):
    p = L.ConvParams(rng.standard_normal((6, 1, 5, 5)), np.zeros(6))
    out, _ = L.conv2d_forward(rng.random((1, 1, 32, 32)), p)
    assert out.shape == (1, 6, 28, 28)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.ones((1, 1, 3, 3)), L.ConvParams(np.ones((1, 1, 5, 5)), np.zeros(1)))
    with pytest.raises(ShapeError):
        L.conv2d_forward_im2col(np.ones((1, 1, 3, 3)), L.ConvParams(np.ones((1, 1, 5, 5)), np.zeros(1)))


def test_conv_paths_match_brute_force(rng):
    for _ in range(25):
        x, p = random_config(rng)
        ref = brute_conv(x, p.weights, p.bias, p.stride, p.padding)
        np.testing.assert_allclose(L.conv2d_forward(x, p)[0], ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(L.conv2d_forward_im2col(x, p)[0], ref, rtol=0, atol=1e-12)


def test_conv_output_shape_formula(rng):
    for _ in range(100):
        x, p = random_config(rng)
        out, _ = L.conv2d_forward_im2col(x, p)
        k = p.weights.shape[2]
        h = (x.shape[2] + 2 * p.padding - k) // p.stride + 1
        w = (x.shape[3] + 2 * p.padding - k) // p.stride + 1
        assert out.shape == (x.shape[0], p.weights.shape[0], h, w)


def test_conv_backward_zero_grad(rng):
    x, p = random_config(rng)
    out, cache = L.conv2d_forward(x, p)
    for g in L.conv2d_backward(np.zeros_like(out), cache):
        assert not np.any(g)


def test_conv_backward_bias_is_sum(rng):
    x, p = random_config(rng)
    out, cache = L.conv2d_forward_im2col(x, p)
    g = rng.standard_normal(out.shape)
    np.testing.assert_allclose(L.conv2d_backward(g, cache)[2], g.sum(axis=(0, 2, 3)), atol=1e-12)


def test_conv_backward_shape_error(rng):
    x, p = random_config(rng)
    out, cache = L.conv2d_forward(x, p)
    with pytest.raises(ShapeError):
        L.conv2d_backward(np.zeros(out.shape[:-1] + (out.shape[-1] + 1,)), cache)


def test_conv_adjoint_identity(rng):
    # <u, J v> == <J^T u, v> for the input map
    for _ in range(10):
        x, p = random_config(rng)
        zero_b = L.ConvParams(p.weights, np.zeros_like(p.bias), p.stride, p.padding)
        v = rng.standard_normal(x.shape)
        jv, cache = L.conv2d_forward_im2col(v, zero_b)
        u = rng.standard_normal(jv.shape)
        jtu = L.conv2d_backward(u, cache)[0]
        assert np.sum(u * jv) == pytest.approx(np.sum(jtu * v), rel=1e-10, abs=1e-10)


def test_maxpool_examples():
    out, _ = L.maxpool2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(out, [[[[4.0]]]])
    out, _ = L.maxpool2_forward(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(out, [[[[5.0, 7.0], [13.0, 15.0]]]])
    out, _ = L.maxpool2_forward(np.full((2, 3, 6, 4), 2.5))
    np.testing.assert_array_equal(out, np.full((2, 3, 3, 2), 2.5))


def test_maxpool_brute_force(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    out, _ = L.maxpool2_forward(x)
    for n, c, i, j in itertools.product(range(2), range(3), range(3), range(4)):
        assert out[n, c, i, j] == max(x[n, c, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))


def test_maxpool_odd_dims():
    with pytest.raises(ShapeError):
        L.maxpool2_forward(np.zeros((1, 1, 3, 4)))


def test_maxpool_backward_routing():
    x = np.array([[[[1.0, 9.0], [3.0, 4.0]]]])
    out, ctx = L.maxpool2_forward(x)
    g = L.maxpool2_backward(np.array([[[[2.5]]]]), ctx)
    np.testing.assert_array_equal(g, [[[[0.0, 2.5], [0.0, 0.0]]]])
    assert not np.any(L.maxpool2_backward(np.zeros_like(out), ctx))


def test_maxpool_tie_lowest_index():
    x = np.array([[[[7.0, 7.0], [7.0, 7.0]]]])
    out, ctx = L.maxpool2_forward(x)
    g = L.maxpool2_backward(np.ones_like(out), ctx)
    np.testing.assert_array_equal(g, [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_maxpool_context_addresses_window(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    out, ctx = L.maxpool2_forward(x)
    for c, i, j in itertools.product(range(2), range(2), range(2)):
        k = int(ctx.argmax_index[0, c, i, j])
        assert x[0, c, 2 * i + k // 2, 2 * j + k % 2] == out[0, c, i, j]


def test_maxpool_gradient_conservation(rng):
    for _ in range(20):
        x = rng.standard_normal((2, 3, 8, 6))  # continuous draws: unique maxima
        out, ctx = L.maxpool2_forward(x)
        g = rng.standard_normal(out.shape)
        assert L.maxpool2_backward(g, ctx).sum() == pytest.approx(g.sum(), abs=1e-12)


def test_maxpool_backward_shape_error():
    _, ctx = L.maxpool2_forward(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        L.maxpool2_backward(np.zeros((1, 1, 3, 2)), ctx)


def test_dense_examples():
    out, _ = L.dense_forward(np.array([[1.0, 2.0]]), L.DenseParams(np.eye(2), np.zeros(2)))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])
    p = L.DenseParams(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
    out, _ = L.dense_forward(np.array([[1.0, 2.0]]), p)
    np.testing.assert_array_equal(out, [[1.0, 2.0, 4.0]])
    with pytest.raises(ShapeError):
        L.dense_forward(np.zeros((1, 3)), p)


def test_activations():
    out, cache = L.activation_forward(np.array([-1.0, 0.0, 2.0]), "relu")
    np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(L.activation_backward(np.ones(3), cache), [0.0, 0.0, 1.0])
    out, cache = L.activation_forward(np.array([0.0]), "tanh")
    assert out[0] == 0.0
    assert L.activation_backward(np.ones(1), cache)[0] == 1.0


def test_softmax_examples():
    np.testing.assert_allclose(L.softmax(np.zeros((1, 3))), [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_allclose(L.softmax(np.array([[1.0, 2.0, 3.0]])),
                               [[0.09003057, 0.24472847, 0.66524096]], atol=5e-9)
    # large logits must not overflow
    p = L.softmax(np.array([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


logit_rows = st.lists(st.lists(st.floats(-50, 50), min_size=2, max_size=6), min_size=1, max_size=5).filter(
    lambda rows: len({len(r) for r in rows}) == 1)


@settings(max_examples=100, deadline=None)
@given(logit_rows, st.floats(-100, 100))
def test_softmax_properties(rows, shift):
    z = np.array(rows)
    p = L.softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(L.softmax(z + shift), p, rtol=0, atol=1e-12)
    # argmax preserved wherever the maximum is resolvable in float64
    for zr, pr in zip(z, p):
        top2 = np.sort(zr)[-2:]
        if top2[1] - top2[0] > 1e-9:
            assert np.argmax(pr) == np.argmax(zr)
