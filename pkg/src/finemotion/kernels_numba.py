"""Numba-jitted variants of the hot kernels.

Same contracts as kernels_numpy. Loops are written per output element so
results are independent of scheduling; no fastmath, so both backends agree
to floating-point rounding of the accumulation order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b):
    B, H, W, Cin = x.shape
    Cout = w.shape[3]
    out = np.empty((B, H, W, Cout), dtype=x.dtype)
    for n in range(B):
        for y in range(H):
            for xx in range(W):
                for co in range(Cout):
                    acc = b[co]
                    for dy in range(3):
                        iy = y + dy - 1
                        if iy < 0 or iy >= H:
                            continue
                        for dx in range(3):
                            ix = xx + dx - 1
                            if ix < 0 or ix >= W:
                                continue
                            for ci in range(Cin):
                                acc += x[n, iy, ix, ci] * w[dy, dx, ci, co]
                    out[n, y, xx, co] = acc
    return out


@njit(cache=True)
def conv2d_backward(x, w, gout):
    B, H, W, Cin = x.shape
    Cout = w.shape[3]
    gx = np.zeros(x.shape, dtype=x.dtype)
    gw = np.zeros(w.shape, dtype=w.dtype)
    gb = np.zeros(Cout, dtype=x.dtype)
    for n in range(B):
        for y in range(H):
            for xx in range(W):
                for co in range(Cout):
                    g = gout[n, y, xx, co]
                    gb[co] += g
                    for dy in range(3):
                        iy = y + dy - 1
                        if iy < 0 or iy >= H:
                            continue
                        for dx in range(3):
                            ix = xx + dx - 1
                            if ix < 0 or ix >= W:
                                continue
                            for ci in range(Cin):
                                gw[dy, dx, ci, co] += x[n, iy, ix, ci] * g
                                gx[n, iy, ix, ci] += w[dy, dx, ci, co] * g
    return gx, gw, gb


@njit(cache=True)
def maxpool_forward(x, win):
    B, H, W, C = x.shape
    Ho = (H - win) // win + 1
    Wo = (W - win) // win + 1
    out = np.empty((B, Ho, Wo, C), dtype=x.dtype)
    arg = np.zeros((B, Ho, Wo, C), dtype=np.int64)
    for n in range(B):
        for oy in range(Ho):
            for ox in range(Wo):
                for c in range(C):
                    best = x[n, oy * win, ox * win, c]
                    besti = 0
                    for wy in range(win):
                        for wx in range(win):
                            v = x[n, oy * win + wy, ox * win + wx, c]
                            if v > best:
                                best = v
                                besti = wy * win + wx
                    out[n, oy, ox, c] = best
                    arg[n, oy, ox, c] = besti
    return out, arg


@njit(cache=True)
def maxpool_backward_impl(B, H, W, C, arg, gout, win):
    Ho = arg.shape[1]
    Wo = arg.shape[2]
    gx = np.zeros((B, H, W, C), dtype=gout.dtype)
    for n in range(B):
        for oy in range(Ho):
            for ox in range(Wo):
                for c in range(C):
                    i = arg[n, oy, ox, c]
                    gx[n, oy * win + i // win, ox * win + i % win, c] = gout[n, oy, ox, c]
    return gx


def maxpool_backward(x_shape, arg, gout, win):
    B, H, W, C = x_shape
    return maxpool_backward_impl(B, H, W, C, arg, gout, win)
