"""Pure-numpy implementations of the hot kernels.

Convolutions are expressed as nine shifted matrix products so the heavy
lifting goes through BLAS; pooling uses reshape + argmax tricks. These are
the fallback path selected by FINEMOTION_BACKEND=numpy and the reference
the numba kernels are benchmarked against.
"""

import numpy as np


def conv2d_forward(x, w, b):
    """3x3 same-padded convolution, stride 1.

    x: (B, H, W, Cin), w: (3, 3, Cin, Cout), b: (Cout,).
    Returns pre-activation output (B, H, W, Cout).
    """
    B, H, W, Cin = x.shape
    Cout = w.shape[3]
    xp = np.zeros((B, H + 2, W + 2, Cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    out = np.empty((B, H, W, Cout), dtype=x.dtype)
    out[...] = b
    flat = out.reshape(-1, Cout)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy:dy + H, dx:dx + W, :].reshape(-1, Cin)
            flat += patch @ w[dy, dx]
    return out


def conv2d_backward(x, w, gout):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    B, H, W, Cin = x.shape
    Cout = w.shape[3]
    xp = np.zeros((B, H + 2, W + 2, Cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    gflat = np.ascontiguousarray(gout).reshape(-1, Cout)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy:dy + H, dx:dx + W, :].reshape(-1, Cin)
            gw[dy, dx] = patch.T @ gflat
            gxp[:, dy:dy + H, dx:dx + W, :] += (gflat @ w[dy, dx].T).reshape(B, H, W, Cin)
    gb = gflat.sum(axis=0)
    gx = gxp[:, 1:-1, 1:-1, :]
    return gx, gw, gb


def maxpool_forward(x, win):
    """Valid max pooling with stride == window.

    Returns (out, argmax) where argmax holds the flat within-window index of
    the first maximum, as needed for gradient routing.
    """
    B, H, W, C = x.shape
    Ho, Wo = (H - win) // win + 1, (W - win) // win + 1
    xc = x[:, :Ho * win, :Wo * win, :]
    windows = xc.reshape(B, Ho, win, Wo, win, C).transpose(0, 1, 3, 2, 4, 5)
    windows = windows.reshape(B, Ho, Wo, win * win, C)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, arg


def maxpool_backward(x_shape, arg, gout, win):
    """Routes each window's gradient to its argmax position."""
    B, H, W, C = x_shape
    Ho, Wo = arg.shape[1], arg.shape[2]
    gwin = np.zeros((B, Ho, Wo, win * win, C), dtype=gout.dtype)
    np.put_along_axis(gwin, arg[:, :, :, None, :], gout[:, :, :, None, :], axis=3)
    gx = np.zeros(x_shape, dtype=gout.dtype)
    gc = gwin.reshape(B, Ho, Wo, win, win, C).transpose(0, 1, 3, 2, 4, 5)
    gx[:, :Ho * win, :Wo * win, :] = gc.reshape(B, Ho * win, Wo * win, C)
    return gx
