import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwclfa import _kernels_py, kernels

from oracles import naive_conv


def naive_stamp(shape, xs, ys, radii, colors):
    canvas = np.zeros(shape)
    h, w, _ = shape
    for x, y, r, col in zip(xs, ys, radii, colors):
        for row in range(h):
            for c in range(w):
                if (c - x) ** 2 + (row - y) ** 2 <= r * r:
                    canvas[row, c] = np.maximum(canvas[row, c], col)
    return canvas


def test_conv_matches_naive_loop(backend):
    rng = np.random.default_rng(0)
    for _ in range(200):
        n, t = rng.integers(1, 65), rng.integers(1, 33)
        k = int(rng.choice([1, 3, 5, 7]))
        x, w = rng.standard_normal((n, t)), rng.standard_normal((t, k))
        assert np.max(np.abs(kernels.dwconv1d_forward(x, w) - naive_conv(x, w))) <= 1e-12


def test_conv_backward_is_adjoint(backend):
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, t, k = rng.integers(2, 20), rng.integers(1, 8), int(rng.choice([1, 3, 5]))
        x, w, g = rng.standard_normal((n, t)), rng.standard_normal((t, k)), rng.standard_normal((n, t))
        dx, dw = kernels.dwconv1d_backward(x, w, g)
        # <g, conv(x, w)> is linear in x and in w
        ex = np.zeros_like(x)
        for i in range(n):
            for c in range(t):
                ex[i, c] = 1.0
                assert dx[i, c] == pytest.approx(np.sum(g * naive_conv(ex, w)), abs=1e-12)
                ex[i, c] = 0.0
        ew = np.zeros_like(w)
        for c in range(t):
            for j in range(k):
                ew[c, j] = 1.0
                assert dw[c, j] == pytest.approx(np.sum(g * naive_conv(x, ew)), abs=1e-11)
                ew[c, j] = 0.0


def test_stamp_matches_naive(backend):
    rng = np.random.default_rng(2)
    shape = (20, 24, 3)
    xs, ys = rng.uniform(-2, 26, 30), rng.uniform(-2, 22, 30)
    radii, colors = rng.uniform(0.5, 3.5, 30), rng.uniform(0, 1, (30, 3))
    canvas = np.zeros(shape)
    kernels.stamp_discs(canvas, xs, ys, radii, colors)
    np.testing.assert_array_equal(canvas, naive_stamp(shape, xs, ys, radii, colors))


def test_stamp_empty_input_leaves_canvas(backend):
    canvas = np.zeros((5, 5, 3))
    kernels.stamp_discs(canvas, np.array([]), np.array([]), np.array([]), np.zeros((0, 3)))
    assert not canvas.any()


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 16), st.sampled_from([1, 3, 5]), st.integers(0, 2**31))
def test_backends_agree(n, t, k, seed):
    from hwclfa import _kernels

    rng = np.random.default_rng(seed)
    x, w, g = rng.standard_normal((n, t)), rng.standard_normal((t, k)), rng.standard_normal((n, t))
    np.testing.assert_allclose(_kernels.dwconv1d_forward(x, w), _kernels_py.dwconv1d_forward(x, w),
                               rtol=0, atol=1e-12)
    for a, b in zip(_kernels.dwconv1d_backward(x, w, g), _kernels_py.dwconv1d_backward(x, w, g)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    xs, ys = rng.uniform(0, 30, 10), rng.uniform(0, 30, 10)
    radii, colors = rng.uniform(0.5, 3, 10), rng.uniform(0, 1, (10, 3))
    c1, c2 = np.zeros((30, 30, 3)), np.zeros((30, 30, 3))
    _kernels.stamp_discs(c1, xs, ys, radii, colors)
    _kernels_py.stamp_discs(c2, xs, ys, radii, colors)
    np.testing.assert_array_equal(c1, c2)
