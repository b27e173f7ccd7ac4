"""2-D convolution primitives on NCHW float64 arrays.

The forward op is a cross-correlation.  Its adjoint with respect to the
input is written out literally as a transposed convolution: the error map is
dilated by the stride, padded by ``k - 1 - padding`` and correlated with the
kernel rotated by 180 degrees, input and output channels swapped.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError


def conv_output_size(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if stride < 1 or padding < 0 or span < 0:
        raise DimensionError(
            f"kernel {kernel} with padding {padding} does not fit input {size}"
        )
    return span // stride + 1


def _windows(x, kh, kw, stride, padding, out_h, out_w):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    # (N, C, out_h, out_w, kh, kw)
    return win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]


def conv2d(x, kernel, stride=1, padding=0):
    """Cross-correlate ``x`` (N, C, H, W) with ``kernel`` (O, C, kh, kw)."""
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"kernel expects {kc} input channels, got {c}")
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)
    win = _windows(x, kh, kw, stride, padding, out_h, out_w)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _pad_or_crop(z, top, bottom, left, right):
    pads = [(0, 0), (0, 0), (max(top, 0), max(bottom, 0)), (max(left, 0), max(right, 0))]
    if any(p for pair in pads for p in pair):
        z = np.pad(z, pads)
    h, w = z.shape[2], z.shape[3]
    return z[:, :, max(-top, 0) : h - max(-bottom, 0), max(-left, 0) : w - max(-right, 0)]


def conv_transpose2d(e, kernel, stride, padding, input_hw):
    """Map an output-space error back to input space through ``kernel``.

    ``kernel`` uses the forward layout (O, C, kh, kw); ``e`` is (N, O, Ho, Wo)
    and the result is (N, C, H, W) with ``(H, W) = input_hw``.  This is the
    exact adjoint of :func:`conv2d` with the same stride and padding.
    """
    n, o, out_h, out_w = e.shape
    ko, c, kh, kw = kernel.shape
    if ko != o:
        raise DimensionError(f"kernel has {ko} output channels, error has {o}")
    h, w = input_hw
    if conv_output_size(h, kh, stride, padding) != out_h or conv_output_size(
        w, kw, stride, padding
    ) != out_w:
        raise DimensionError(f"error map {out_h}x{out_w} does not match input {h}x{w}")
    if stride > 1:
        z = np.zeros((n, o, (out_h - 1) * stride + 1, (out_w - 1) * stride + 1))
        z[:, :, ::stride, ::stride] = e
    else:
        z = e
    # rows/cols of the input never touched by any window
    extra_h = h - ((out_h - 1) * stride + kh - 2 * padding)
    extra_w = w - ((out_w - 1) * stride + kw - 2 * padding)
    z = _pad_or_crop(
        z,
        kh - 1 - padding,
        kh - 1 - padding + extra_h,
        kw - 1 - padding,
        kw - 1 - padding + extra_w,
    )
    flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d(z, np.ascontiguousarray(flipped), stride=1, padding=0)


def conv_weight_grad(x, e, kernel_hw, stride, padding):
    """Sum over the batch of ``e * x`` correlations, shaped (O, C, kh, kw)."""
    kh, kw = kernel_hw
    out_h, out_w = e.shape[2], e.shape[3]
    win = _windows(x, kh, kw, stride, padding, out_h, out_w)
    return np.tensordot(e, win, axes=([0, 2, 3], [0, 2, 3]))


def pointwise(e, matrix):
    """Apply a channel-mixing matrix (1x1, stride 1 convolution).

    ``matrix`` is (K, C) and ``e`` is (N, C, H, W); the result is (N, K, H, W).
    """
    return np.einsum("kc,nchw->nkhw", matrix, e, optimize=True)
