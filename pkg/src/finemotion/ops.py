"""Differentiable operators: conv, pooling, dense, dropout and GRU.

Each layer owns its parameter arrays, caches what the backward pass needs,
and exposes forward/backward plus an exact parameter count. Everything is
numpy; the convolution/pooling inner loops dispatch through
finemotion.backend. Layers accept a batch as the leading axis; the
module-level functions mirror the single-sample operator contracts.
"""

import numpy as np

from . import backend

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear", "none")


def _act(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-a))
    if kind == "tanh":
        return np.tanh(a)
    return a


def _act_grad(out, kind):
    """Derivative expressed through the activation output."""
    if kind == "relu":
        return (out > 0).astype(out.dtype)
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(out)


def _check_activation(kind):
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")


class Layer:
    """Base: parameter dict, gradient dict, forward/backward."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def init(self, rng, dtype=np.float64):
        pass

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def param_count(self):
        return sum(v.size for v in self.params.values())

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, gout):
        raise NotImplementedError


class Conv2D(Layer):
    """3x3 same-padded convolution, stride 1, optional fused activation."""

    def __init__(self, c_in, c_out, activation="relu"):
        super().__init__()
        _check_activation(activation)
        self.c_in, self.c_out, self.activation = c_in, c_out, activation

    def init(self, rng, dtype=np.float64):
        # He-style bound for relu layers keeps activation variance stable
        # through the deep stack; plain 1/sqrt(fan_in) otherwise.
        fan_in = 9 * self.c_in
        bound = np.sqrt(6.0 / fan_in) if self.activation == "relu" \
            else 1.0 / np.sqrt(fan_in)
        self.params = {
            "w": rng.uniform(-bound, bound, (3, 3, self.c_in, self.c_out)).astype(dtype),
            "b": np.zeros(self.c_out, dtype=dtype),
        }

    def param_count(self):
        return 9 * self.c_in * self.c_out + self.c_out

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ValueError(f"conv2d expects (B,H,W,C) input, got shape {x.shape}")
        if x.shape[3] != self.c_in:
            raise ValueError(
                f"conv2d channel mismatch: input has {x.shape[3]} channels "
                f"(shape {x.shape}), weights expect {self.c_in} "
                f"(shape {self.params['w'].shape})")
        pre = backend.conv2d_forward(x, self.params["w"], self.params["b"])
        out = _act(pre, self.activation)
        self._x, self._out = x, out
        return out

    def backward(self, gout):
        g = gout * _act_grad(self._out, self.activation)
        gx, gw, gb = backend.conv2d_backward(self._x, self.params["w"], g)
        self.grads = {"w": gw, "b": gb}
        return gx


class MaxPool2D(Layer):
    """Valid max pooling, stride == window."""

    def __init__(self, window):
        super().__init__()
        if window < 1:
            raise ValueError(f"pool window must be >= 1, got {window}")
        self.window = window

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ValueError(f"maxpool2d expects (B,H,W,C) input, got shape {x.shape}")
        if x.shape[1] < self.window or x.shape[2] < self.window:
            raise ValueError(
                f"pool window {self.window} larger than input extent {x.shape[1:3]}")
        out, arg = backend.maxpool_forward(x, self.window)
        self._shape, self._arg = x.shape, arg
        return out

    def backward(self, gout):
        return backend.maxpool_backward(self._shape, self._arg, gout, self.window)


class Dense(Layer):
    def __init__(self, d_in, d_out, activation="none"):
        super().__init__()
        _check_activation(activation)
        self.d_in, self.d_out, self.activation = d_in, d_out, activation

    def init(self, rng, dtype=np.float64):
        bound = np.sqrt(6.0 / self.d_in) if self.activation == "relu" \
            else 1.0 / np.sqrt(self.d_in)
        self.params = {
            "w": rng.uniform(-bound, bound, (self.d_in, self.d_out)).astype(dtype),
            "b": np.zeros(self.d_out, dtype=dtype),
        }

    def param_count(self):
        return self.d_in * self.d_out + self.d_out

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.d_in:
            raise ValueError(
                f"dense shape mismatch: input width {x.shape[-1]} (shape {x.shape}), "
                f"weights expect {self.d_in}")
        out = _act(x @ self.params["w"] + self.params["b"], self.activation)
        self._x, self._out = x, out
        return out

    def backward(self, gout):
        g = gout * _act_grad(self._out, self.activation)
        g2 = g.reshape(-1, self.d_out)
        x2 = self._x.reshape(-1, self.d_in)
        self.grads = {"w": x2.T @ g2, "b": g2.sum(axis=0)}
        return (g2 @ self.params["w"].T).reshape(self._x.shape)


class FeatureNorm(Layer):
    """Parameter-free RMS normalization over the last axis.

    y = x / rms(x); keeps the feature scale handed to the recurrent or
    dense head fixed at unit RMS regardless of how large the unbounded
    relu convolution stack grows during training, which would otherwise
    saturate the downstream nonlinearities."""

    EPS = 1e-12

    def forward(self, x, train=False, rng=None):
        if x.ndim < 2:
            raise ValueError(f"featnorm expects batched input, got shape {x.shape}")
        r = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + self.EPS)
        y = x / r
        self._y, self._r = y, r
        return y

    def backward(self, gout):
        y, r = self._y, self._r
        proj = np.mean(gout * y, axis=-1, keepdims=True)
        return (gout - y * proj) / r


class WindowNorm(Layer):
    """Parameter-free per-window standardization of a (B, k, d) sequence.

    Each feature is centered against its own mean over the k steps of the
    window, then the whole window is rescaled to unit RMS. Removes the
    large static offsets (e.g. resting joint postures) that otherwise
    dwarf the within-window motion the downstream recurrence must read,
    using only the window's own statistics."""

    EPS = 1e-12

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3:
            raise ValueError(f"winnorm expects (B,k,d) input, got shape {x.shape}")
        c = x - x.mean(axis=1, keepdims=True)
        r = np.sqrt(np.mean(np.square(c), axis=(1, 2), keepdims=True) + self.EPS)
        y = c / r
        self._y, self._r = y, r
        return y

    def backward(self, gout):
        y, r = self._y, self._r
        proj = np.mean(gout * y, axis=(1, 2), keepdims=True)
        gc = (gout - y * proj) / r
        return gc - gc.mean(axis=1, keepdims=True)


class Dropout(Layer):
    """Inverted dropout: identity at inference."""

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, gout):
        return gout if self._mask is None else gout * self._mask


class GRU(Layer):
    """GRU over a full sequence, double-bias (reset-after) convention.

    Input (B, k, d_in) -> full hidden sequence (B, k, h), zero initial
    state. Gates are sigmoid; the candidate activation is configurable.
    Parameters: wi (d_in, 3h), wh (h, 3h), bi (3h), bh (3h) in r|z|n order,
    i.e. 3*((d_in + h) * h + 2h) scalars.
    """

    def __init__(self, d_in, hidden, candidate_activation="tanh"):
        super().__init__()
        if candidate_activation not in ("tanh", "relu", "linear"):
            raise ValueError(f"unsupported candidate activation {candidate_activation!r}")
        self.d_in, self.h, self.cand = d_in, hidden, candidate_activation

    def init(self, rng, dtype=np.float64):
        bi = 1.0 / np.sqrt(self.d_in)
        bh = 1.0 / np.sqrt(self.h)
        self.params = {
            "wi": rng.uniform(-bi, bi, (self.d_in, 3 * self.h)).astype(dtype),
            "wh": rng.uniform(-bh, bh, (self.h, 3 * self.h)).astype(dtype),
            "bi": np.zeros(3 * self.h, dtype=dtype),
            "bh": np.zeros(3 * self.h, dtype=dtype),
        }

    def param_count(self):
        return 3 * ((self.d_in + self.h) * self.h + 2 * self.h)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3:
            raise ValueError(f"gru expects (B,k,d) input, got shape {x.shape}")
        if x.shape[1] == 0:
            raise ValueError("gru sequence length must be >= 1")
        if x.shape[2] != self.d_in:
            raise ValueError(
                f"gru shape mismatch: input width {x.shape[2]}, expected {self.d_in}")
        if not np.all(np.isfinite(x)):
            raise ValueError("gru input contains non-finite values")
        B, k, _ = x.shape
        h = self.h
        p = self.params
        xproj = x @ p["wi"] + p["bi"]          # (B, k, 3h)
        hs = np.zeros((B, k, h), dtype=x.dtype)
        cache = []
        h_prev = np.zeros((B, h), dtype=x.dtype)
        for t in range(k):
            hp = h_prev @ p["wh"] + p["bh"]    # (B, 3h)
            ar = xproj[:, t, :h] + hp[:, :h]
            az = xproj[:, t, h:2 * h] + hp[:, h:2 * h]
            r = 1.0 / (1.0 + np.exp(-ar))
            z = 1.0 / (1.0 + np.exp(-az))
            hn = hp[:, 2 * h:]
            pre_n = xproj[:, t, 2 * h:] + r * hn
            n = _act(pre_n, self.cand if self.cand != "linear" else "none")
            h_t = z * h_prev + (1.0 - z) * n
            cache.append((h_prev, r, z, hn, n))
            hs[:, t, :] = h_t
            h_prev = h_t
        self._x, self._cache = x, cache
        return hs

    def backward(self, gout):
        x, cache = self._x, self._cache
        B, k, _ = x.shape
        h = self.h
        p = self.params
        gwi = np.zeros_like(p["wi"])
        gwh = np.zeros_like(p["wh"])
        gbi = np.zeros_like(p["bi"])
        gbh = np.zeros_like(p["bh"])
        gx = np.zeros_like(x)
        carry = np.zeros((B, h), dtype=x.dtype)
        for t in range(k - 1, -1, -1):
            h_prev, r, z, hn, n = cache[t]
            dh = gout[:, t, :] + carry
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dn = dh * (1.0 - z)
            dpre = dn * _act_grad(n, self.cand if self.cand != "linear" else "none")
            dr = dpre * hn
            dar = dr * r * (1.0 - r)
            ga = np.concatenate([dar, dz, dpre], axis=1)          # input-side
            gh = np.concatenate([dar, dz, dpre * r], axis=1)      # recurrent-side
            gwi += x[:, t, :].T @ ga
            gbi += ga.sum(axis=0)
            gwh += h_prev.T @ gh
            gbh += gh.sum(axis=0)
            gx[:, t, :] = ga @ p["wi"].T
            carry = dh * z + gh @ p["wh"].T
        self.grads = {"wi": gwi, "wh": gwh, "bi": gbi, "bh": gbh}
        return gx


# Single-sample functional forms of the operator contracts.

def conv2d(x, weights, bias, activation="none"):
    """x: (H, W, Cin); weights: (3, 3, Cin, Cout); bias: (Cout,)."""
    layer = Conv2D(weights.shape[2], weights.shape[3], activation)
    layer.params = {"w": weights, "b": bias}
    return layer.forward(x[None])[0]


def maxpool2d(x, window):
    return MaxPool2D(window).forward(x[None])[0]


def dense(x, weights, bias, activation="none"):
    layer = Dense(weights.shape[0], weights.shape[1], activation)
    layer.params = {"w": weights, "b": bias}
    return layer.forward(x[None])[0]


def dropout(x, rate, mode="infer", rng=None):
    if mode not in ("train", "infer"):
        raise ValueError(f"dropout mode must be train/infer, got {mode!r}")
    return Dropout(rate).forward(x, train=(mode == "train"), rng=rng)


def gru_layer(sequence, weights, hidden, candidate_activation="tanh"):
    """sequence: (k, d_in); weights: dict with wi/wh/bi/bh."""
    layer = GRU(sequence.shape[1], hidden, candidate_activation)
    layer.params = weights
    return layer.forward(sequence[None])[0]
