#!/usr/bin/env python3
"""
Numeric kernel tests against brute-force loops.
"""

import sys
sys.path.insert(0, 'src')

import numpy as np
import pytest

from ringformer.errors import ConfigError, DimensionError, NumericError
from ringformer.numeric import (ParamSpec, as_tensor, conv1d, conv2d_column, conv_transpose1d, glu, init_params,
                                layer_norm, leaky_relu, linear, matmul, snake, softmax_rows, swish)


def _direct_conv1d(x, w, b, stride, padding, dilation, groups):
    c_in, length = x.shape
    c_out, cpg, k = w.shape
    padded = np.pad(x, ((0, 0), (padding, padding)))
    l_out = (length + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((c_out, l_out))
    per_group_out = c_out // groups
    for o in range(c_out):
        g = o // per_group_out
        for t in range(l_out):
            acc = b[o] if b is not None else 0.0
            for c in range(cpg):
                for j in range(k):
                    acc += w[o, c, j] * padded[g * cpg + c, t * stride + j * dilation]
            out[o, t] = acc
    return out


def test_matmul_triple_loop():
    """matmul equals the triple loop."""
    print("Testing matmul...")
    rng = np.random.default_rng(0)
    for m, k, n in [(1, 1, 1), (3, 5, 2), (8, 4, 9)]:
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        expected = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for p in range(k):
                    expected[i, j] += a[i, p] * b[p, j]
        assert np.allclose(matmul(a, b), expected, atol=1e-12)
    with pytest.raises(DimensionError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    print("✓ matmul matches\n")


def test_softmax_rows():
    """Rows sum to 1, huge logits stay finite, shift invariance."""
    print("Testing softmax_rows...")
    x = np.array([[1000.0, 1001.0, 1002.0], [0.0, 0.0, 0.0]])
    out = softmax_rows(x)
    assert np.all(np.isfinite(out))
    assert np.allclose(out.sum(axis=1), 1.0)
    assert np.allclose(out[1], 1.0 / 3.0)
    assert np.allclose(out[0], softmax_rows(x[:1] - 1000.0)[0])
    with pytest.raises(NumericError):
        softmax_rows(np.array([[np.nan, 1.0]]))
    print("✓ softmax stable\n")


def test_conv1d_direct_summation():
    """conv1d matches direct summation over stride/padding/dilation/groups."""
    print("Testing conv1d...")
    rng = np.random.default_rng(1)
    cases = [
        (4, 6, 3, 1, 1, 1, 1),
        (4, 6, 5, 2, 2, 1, 1),
        (4, 8, 3, 1, 2, 2, 1),
        (4, 4, 3, 1, 1, 1, 4),   # depthwise
        (6, 4, 3, 3, 0, 1, 2),
    ]
    for c_in, c_out, k, stride, padding, dilation, groups in cases:
        x = rng.standard_normal((c_in, 17))
        w = rng.standard_normal((c_out, c_in // groups, k))
        b = rng.standard_normal(c_out)
        got = conv1d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups)
        expected = _direct_conv1d(x, w, b, stride, padding, dilation, groups)
        assert got.shape == expected.shape, (got.shape, expected.shape)
        assert np.allclose(got, expected, atol=1e-10)
        print(f"  ✓ C_in={c_in} C_out={c_out} K={k} s={stride} p={padding} d={dilation} g={groups}")
    print("✓ conv1d matches\n")


def test_randomized_shapes():
    """matmul, conv1d and conv_transpose1d agree with brute force on 100 random shapes each."""
    print("Testing randomized shapes...")
    rng = np.random.default_rng(4)
    for _ in range(100):
        m, k, n = (int(d) for d in rng.integers(1, 9, size=3))
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        expected = np.array([[sum(a[i, p] * b[p, j] for p in range(k)) for j in range(n)] for i in range(m)])
        assert np.allclose(matmul(a, b), expected, rtol=1e-6, atol=1e-12), (m, k, n)
    for _ in range(100):
        groups = int(rng.choice([1, 2, 3]))
        c_in = groups * int(rng.integers(1, 3))
        c_out = groups * int(rng.integers(1, 3))
        k = int(rng.integers(1, 6))
        stride, dilation = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        padding = int(rng.integers(0, 4))
        length = int(rng.integers(max(1, dilation * (k - 1) + 1 - 2 * padding), 25))
        x = rng.standard_normal((c_in, length))
        w = rng.standard_normal((c_out, c_in // groups, k))
        bias = rng.standard_normal(c_out)
        got = conv1d(x, w, bias, stride=stride, padding=padding, dilation=dilation, groups=groups)
        expected = _direct_conv1d(x, w, bias, stride, padding, dilation, groups)
        assert got.shape == expected.shape and np.allclose(got, expected, rtol=1e-6, atol=1e-10), \
            (c_in, c_out, k, stride, padding, dilation, groups, length)
    for _ in range(100):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        length, k, stride = int(rng.integers(1, 10)), int(rng.integers(2, 9)), int(rng.integers(1, 5))
        padding = int(rng.integers(0, (k - 1) // 2 + 1))
        x, w = rng.standard_normal((c_in, length)), rng.standard_normal((c_in, c_out, k))
        full = np.zeros((c_out, (length - 1) * stride + k))
        for c in range(c_in):
            for t in range(length):
                full[:, t * stride:t * stride + k] += x[c, t] * w[c]
        l_out = (length - 1) * stride - 2 * padding + k
        got = conv_transpose1d(x, w, stride=stride, padding=padding)
        assert np.allclose(got, full[:, padding:padding + l_out], rtol=1e-6, atol=1e-10), \
            (c_in, c_out, length, k, stride, padding)
    print("✓ 300 random shapes\n")


def test_softmax_extreme_logits():
    """Logits of magnitude 1e4 give finite rows that match the shifted computation."""
    print("Testing softmax at 1e4...")
    rng = np.random.default_rng(5)
    for dtype in (np.float32, np.float64):
        x = (rng.uniform(-1.0, 1.0, size=(16, 32)) * 1e4).astype(dtype)
        x[0] = 1e4
        x[1] = -1e4
        out = softmax_rows(x)
        assert out.dtype == dtype and np.all(np.isfinite(out))
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-5)
        assert np.allclose(out[0], 1.0 / 32) and np.allclose(out[1], 1.0 / 32)
        assert np.array_equal(out.argmax(axis=1), x.argmax(axis=1))
    print("✓ softmax at 1e4\n")


def test_conv1d_length_and_errors():
    """Same-padding keeps length; bad groups and short inputs are rejected."""
    print("Testing conv1d edge cases...")
    x = np.ones((2, 10), dtype=np.float32)
    assert conv1d(x, np.ones((3, 2, 7), dtype=np.float32), padding=3).shape == (3, 10)
    assert conv1d(x, np.ones((3, 2, 7), dtype=np.float32), padding=3).dtype == np.float32
    with pytest.raises(ConfigError):
        conv1d(np.ones((3, 10)), np.ones((3, 1, 3)), groups=2)
    with pytest.raises(DimensionError):
        conv1d(np.ones((2, 2)), np.ones((1, 2, 5)))
    with pytest.raises(DimensionError):
        conv1d(np.ones((2, 10)), np.ones((1, 3, 3)))
    print("✓ conv1d edge cases\n")


def test_conv_transpose1d_scatter():
    """Transposed conv equals scatter-add then crop; K=8, u=4, pad 2 grows length ×4."""
    print("Testing conv_transpose1d...")
    rng = np.random.default_rng(2)
    for c_in, c_out, length, k, stride, padding in [(3, 2, 5, 8, 4, 2), (2, 3, 7, 3, 1, 1), (1, 1, 1, 4, 2, 1)]:
        x = rng.standard_normal((c_in, length))
        w = rng.standard_normal((c_in, c_out, k))
        b = rng.standard_normal(c_out)
        full = np.zeros((c_out, (length - 1) * stride + k))
        for c in range(c_in):
            for t in range(length):
                full[:, t * stride:t * stride + k] += x[c, t] * w[c]
        l_out = (length - 1) * stride - 2 * padding + k
        expected = full[:, padding:padding + l_out] + b[:, None]
        got = conv_transpose1d(x, w, b, stride=stride, padding=padding)
        assert got.shape == (c_out, l_out)
        assert np.allclose(got, expected, atol=1e-10)
    out = conv_transpose1d(np.ones((2, 11)), np.ones((2, 2, 8)), stride=4, padding=2)
    assert out.shape[1] == 44
    with pytest.raises(ConfigError):
        conv_transpose1d(np.ones((1, 1)), np.ones((1, 1, 2)), stride=1, padding=1)
    print("✓ conv_transpose1d matches\n")


def test_conv2d_column():
    """(K×1) 2-D conv treats columns independently."""
    print("Testing conv2d_column...")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 13, 3))
    w = rng.standard_normal((4, 2, 5, 1))
    b = rng.standard_normal(4)
    got = conv2d_column(x, w, b, stride=3, padding=2)
    for col in range(3):
        expected = _direct_conv1d(x[:, :, col], w[..., 0], b, 3, 2, 1, 1)
        assert np.allclose(got[:, :, col], expected, atol=1e-10)
    assert got.shape == (4, (13 + 4 - 5) // 3 + 1, 3)
    print("✓ conv2d_column matches\n")


def test_activations_and_norm():
    """snake, swish, glu, leaky_relu and layer_norm on hand-checked values."""
    print("Testing activations...")
    x = np.array([[0.0, 1.0, -2.0]])
    assert np.allclose(snake(x, 1.0), x + np.sin(x) ** 2)
    assert np.allclose(snake(np.zeros((2, 3)), np.array([0.5, 2.0])), 0.0)
    with pytest.raises(ConfigError):
        snake(x, 0.0)
    assert np.allclose(swish(np.array([0.0])), 0.0)
    assert np.allclose(glu(np.array([2.0, 0.0])), 1.0)
    assert np.allclose(leaky_relu(np.array([-1.0, 2.0]), 0.1), [-0.1, 2.0])
    normed = layer_norm(np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert abs(normed.mean()) < 1e-12 and abs(normed.var() - 1.0) < 1e-4
    assert np.allclose(linear(np.ones((2, 3)), np.ones((3, 4)), np.arange(4.0)), 3.0 + np.arange(4.0))
    print("✓ activations correct\n")


def test_tensor_helpers_and_init():
    """as_tensor keeps/casts precision; init_params is seeded and bounded."""
    print("Testing tensor helpers...")
    assert as_tensor([1, 2]).dtype == np.float32
    assert as_tensor(np.ones(2)).dtype == np.float64
    assert as_tensor(np.ones(2), "float32").dtype == np.float32
    with pytest.raises(DimensionError):
        as_tensor(np.ones((1, 1, 1, 1)))
    with pytest.raises(ConfigError):
        as_tensor([1.0], "float16")
    specs = [ParamSpec("w", (4, 25), fan_in=25), ParamSpec("g", (4,), "ones"), ParamSpec("b", (4,), "zeros")]
    a = init_params(specs, np.random.default_rng(42))
    b = init_params(specs, np.random.default_rng(42))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.all(np.abs(a["w"]) <= 0.2)
    assert np.all(a["g"] == 1) and np.all(a["b"] == 0)
    print("✓ tensor helpers\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("Numeric Kernel Tests")
    print("=" * 60 + "\n")

    try:
        test_matmul_triple_loop()
        test_softmax_rows()
        test_softmax_extreme_logits()
        test_conv1d_direct_summation()
        test_randomized_shapes()
        test_conv1d_length_and_errors()
        test_conv_transpose1d_scatter()
        test_conv2d_column()
        test_activations_and_norm()
        test_tensor_helpers_and_init()

        print("=" * 60)
        print("ALL TESTS PASSED ✓")
        print("=" * 60)
        return 0
    except Exception as e:
        print("\n" + "=" * 60)
        print("TEST FAILED ✗")
        print("=" * 60)
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
