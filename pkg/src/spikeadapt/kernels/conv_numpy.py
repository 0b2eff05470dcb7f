"""Pure-NumPy convolution kernels (im2col + BLAS matmul).

Same call signatures as the compiled extension.  All functions expect
C-contiguous float64 arrays; shape validation lives one level up in the
autodiff op, not here.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_hw(h, w, kh, kw, stride, padding):
    """Spatial output size of a cross-correlation."""
    return ((h + 2 * padding - kh) // stride + 1,
            (w + 2 * padding - kw) // stride + 1)


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _cols(x, kh, kw, stride, padding):
    """Patch matrix of shape [N, Ho, Wo, C, kh, kw]."""
    xp = _pad(x, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]          # N, C, Ho, Wo, kh, kw
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def conv2d_forward(x, w, stride, padding):
    """Cross-correlate x[N,C,H,W] with w[F,C,kh,kw] -> y[N,F,Ho,Wo]."""
    n, _, h, wdt = x.shape
    f, c, kh, kw = w.shape
    ho, wo = out_hw(h, wdt, kh, kw, stride, padding)
    cols = _cols(x, kh, kw, stride, padding).reshape(n * ho * wo, c * kh * kw)
    y = cols @ w.reshape(f, c * kh * kw).T
    return np.ascontiguousarray(y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))


def conv2d_grad_input(gy, w, stride, padding, h, wdt):
    """Gradient of conv2d_forward wrt its input, given output grad gy."""
    n, f, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gxp = np.zeros((n, c, h + 2 * padding, wdt + 2 * padding))
    gyf = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    for i in range(kh):
        for j in range(kw):
            contrib = (gyf @ w[:, :, i, j]).reshape(n, ho, wo, c)
            gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                contrib.transpose(0, 3, 1, 2)
    if padding:
        gxp = gxp[:, :, padding:padding + h, padding:padding + wdt]
    return np.ascontiguousarray(gxp)


def conv2d_grad_weight(gy, x, stride, padding, kh, kw):
    """Gradient of conv2d_forward wrt its weight, given output grad gy."""
    n, f, ho, wo = gy.shape
    c = x.shape[1]
    xp = _pad(x, padding)
    gyf = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    gw = np.empty((f, c, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride]
            patch = patch.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
            gw[:, :, i, j] = gyf.T @ patch
    return gw
