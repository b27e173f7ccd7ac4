import numpy as np
import pytest

from pfalign import conv
from pfalign.errors import DimensionError


def toeplitz(kernel, in_shape, stride, padding):
    """Dense matrix T with conv2d(x) == (T @ x.ravel()) for one sample."""
    c, h, w = in_shape
    o, _, kh, kw = kernel.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    T = np.zeros((o * oh * ow, c * h * w))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                row = (oc * oh + i) * ow + j
                for ic in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            y = i * stride + di - padding
                            xx = j * stride + dj - padding
                            if 0 <= y < h and 0 <= xx < w:
                                T[row, (ic * h + y) * w + xx] += kernel[oc, ic, di, dj]
    return T, (o, oh, ow)


GEOMETRIES = [
    # (C, H, W, O, kh, kw, stride, padding)
    (1, 5, 5, 1, 3, 3, 1, 0),
    (2, 6, 7, 3, 3, 3, 2, 1),
    (3, 8, 8, 2, 2, 2, 2, 0),
    (2, 7, 5, 4, 1, 1, 1, 0),
    (1, 8, 8, 2, 3, 2, 3, 2),
    (2, 4, 4, 2, 4, 4, 1, 1),
]


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_conv2d_matches_toeplitz(geom, rng):
    c, h, w, o, kh, kw, s, p = geom
    x = rng.standard_normal((3, c, h, w))
    k = rng.standard_normal((o, c, kh, kw))
    T, out_shape = toeplitz(k, (c, h, w), s, p)
    expected = (x.reshape(3, -1) @ T.T).reshape((3,) + out_shape)
    np.testing.assert_allclose(conv.conv2d(x, k, s, p), expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_transpose_is_toeplitz_adjoint(geom, rng):
    c, h, w, o, kh, kw, s, p = geom
    k = rng.standard_normal((o, c, kh, kw))
    T, out_shape = toeplitz(k, (c, h, w), s, p)
    e = rng.standard_normal((2,) + out_shape)
    got = conv.conv_transpose2d(e, k, s, p, (h, w))
    expected = (e.reshape(2, -1) @ T).reshape(2, c, h, w)
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_weight_grad_matches_outer_products(geom, rng):
    c, h, w, o, kh, kw, s, p = geom
    x = rng.standard_normal((2, c, h, w))
    k = rng.standard_normal((o, c, kh, kw))
    out = conv.conv2d(x, k, s, p)
    e = rng.standard_normal(out.shape)
    grad = conv.conv_weight_grad(x, e, (kh, kw), s, p)
    # d/dk <e, conv(x, k)> is linear in k: probe one basis kernel at a time
    expected = np.zeros_like(k)
    for idx in np.ndindex(*k.shape):
        basis = np.zeros_like(k)
        basis[idx] = 1.0
        expected[idx] = np.sum(e * conv.conv2d(x, basis, s, p))
    np.testing.assert_allclose(grad, expected, rtol=1e-11, atol=1e-11)


def test_identity_kernel_is_identity(rng):
    x = rng.standard_normal((2, 1, 4, 5))
    np.testing.assert_array_equal(conv.conv2d(x, np.ones((1, 1, 1, 1))), x)


def test_all_ones_kernel_sums():
    out = conv.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_pointwise_is_channel_matmul(rng):
    e = rng.standard_normal((2, 3, 4, 4))
    m = rng.standard_normal((5, 3))
    got = conv.pointwise(e, m)
    np.testing.assert_allclose(got, conv.conv2d(e, m[:, :, None, None]), rtol=1e-12)


def test_output_size():
    assert conv.conv_output_size(32, 3, 2, 1) == 16
    assert conv.conv_output_size(5, 3, 1, 0) == 3
    with pytest.raises(DimensionError):
        conv.conv_output_size(2, 5, 1, 0)
