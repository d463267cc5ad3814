"""Executable models: binds a ModelSpec to tensor operators.

The CNN weights are shared across the k frames of a window by batching the
frames through a single set of layers. CBMF exposes the intermediate
configuration sequence and the residual features feeding the decoder merge.
"""

import numpy as np

from . import ops
from .optim import ParamStore


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def standardize_frames(x):
    """Per-frame whitening of (..., H, W, 1) pixel tensors.

    Fixed preprocessing applied before the first convolution: each frame
    is shifted to zero mean and unit variance over its own pixels, which
    keeps the network insensitive to global brightness/contrast and feeds
    well-scaled activations to the relu stack. Uses only the frame's own
    statistics, so no quantity estimated on training data leaks into
    test-time inputs."""
    axes = tuple(range(x.ndim - 3, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, keepdims=True)
    return (x - mean) / (std + 1e-6)


def _make_layer(ls):
    if ls.kind == "conv2d":
        return ops.Conv2D(ls.c_in, ls.c_out, ls.activation)
    if ls.kind == "maxpool2d":
        return ops.MaxPool2D(ls.window)
    if ls.kind == "dropout":
        return ops.Dropout(ls.rate)
    if ls.kind == "featnorm":
        return ops.FeatureNorm()
    if ls.kind == "winnorm":
        return ops.WindowNorm()
    if ls.kind == "dense":
        return ops.Dense(ls.d_in, ls.d_out, ls.activation)
    if ls.kind == "gru":
        cand = {"relu": "relu", "linear": "linear"}.get(ls.activation, "tanh")
        return ops.GRU(ls.d_in, ls.hidden, cand)
    if ls.kind in ("flatten", "concat_time", "merge"):
        return None
    raise ValueError(f"unknown layer kind {ls.kind!r}")


class Model:
    def __init__(self, spec, dtype=np.float64):
        self.spec = spec
        self.dtype = dtype
        self.enc_specs = list(spec.encoder)
        self.dec_specs = list(spec.decoder)
        self.layers = {}
        for ls in self.enc_specs + self.dec_specs:
            layer = _make_layer(ls)
            if layer is not None:
                self.layers[ls.name] = layer

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        for ls in self.enc_specs + self.dec_specs:
            layer = self.layers.get(ls.name)
            if layer is not None:
                layer.init(rng, dtype=self.dtype)
        return self.param_store()

    def param_store(self):
        params = {}
        for name, layer in self.layers.items():
            for p, v in layer.params.items():
                params[f"{name}.{p}"] = v
        return ParamStore(params)

    def set_params(self, values):
        """Installs parameter arrays (e.g. from a loaded checkpoint)."""
        for name, layer in self.layers.items():
            for p in list(layer.params):
                layer.params[p] = values[f"{name}.{p}"]

    def grads(self):
        out = {}
        for name, layer in self.layers.items():
            for p, g in layer.grads.items():
                out[f"{name}.{p}"] = g
        return out

    def _check_input(self, images):
        side = self.spec.image_side
        if self.spec.kind == "SF":
            if images.ndim != 3 or images.shape[1:] != (side, side):
                raise ValueError(
                    f"SF expects (B, {side}, {side}) images, got {images.shape}")
        else:
            if images.ndim != 4 or images.shape[2:] != (side, side):
                raise ValueError(
                    f"{self.spec.kind} expects (B, k, {side}, {side}) images, "
                    f"got {images.shape}")
            if images.shape[1] != self.spec.k:
                raise ValueError(
                    f"window length {images.shape[1]} does not match spec k={self.spec.k}")

    def _run_range(self, specs, x, train, rng):
        for ls in specs:
            layer = self.layers.get(ls.name)
            if ls.kind == "flatten":
                self._flat_shape = x.shape
                x = x.reshape(x.shape[0], -1)
            elif ls.kind == "concat_time":
                x = x.reshape(self._bk[0], self._bk[1], -1)
            elif ls.kind == "merge":
                pass  # handled explicitly in forward
            else:
                x = layer.forward(x, train=train, rng=rng)
        return x

    def forward(self, images, train=False, rng=None, internals=False):
        """Returns a dict: probs (and configs / residual for CBMF)."""
        images = np.asarray(images, dtype=self.dtype)
        self._check_input(images)
        kind = self.spec.kind
        if kind == "SF":
            x = standardize_frames(images[..., None])
            probs = self._run_range(self.enc_specs, x, train, rng)
            return {"probs": probs}

        B, k = images.shape[:2]
        self._bk = (B, k)
        x = standardize_frames(images.reshape(B * k, *images.shape[2:])[..., None])
        if kind == "MF":
            out = self._run_range(self.enc_specs, x, train, rng)
            probs = _sigmoid(out)
            self._probs = probs
            return {"probs": probs}

        # CBMF: encoder up to the residual layer, then configs, then decoder.
        res_name = self.spec.residual_layer
        idx = next(i for i, ls in enumerate(self.enc_specs) if ls.name == res_name)
        residual = self._run_range(self.enc_specs[:idx + 1], x, train, rng)
        configs = self._run_range(self.enc_specs[idx + 1:], residual, train, rng)
        merged = np.concatenate([configs, residual], axis=2)
        out = self._run_range(self.dec_specs, merged, train, rng)
        probs = _sigmoid(out)
        self._probs = probs
        self._residual_width = residual.shape[2]
        result = {"probs": probs, "configs": configs}
        if internals:
            result["residual"] = residual
            result["merge_input"] = merged
        return result

    def forward_encoder(self, images, train=False, rng=None):
        """CBMF encoder alone: the predicted configuration sequence."""
        images = np.asarray(images, dtype=self.dtype)
        self._check_input(images)
        B, k = images.shape[:2]
        self._bk = (B, k)
        x = standardize_frames(images.reshape(B * k, *images.shape[2:])[..., None])
        return self._run_range(self.enc_specs, x, train, rng)

    def _backward_range(self, specs, g):
        for ls in reversed(specs):
            layer = self.layers.get(ls.name)
            if ls.kind == "flatten":
                g = g.reshape(self._flat_shape)
            elif ls.kind == "concat_time":
                g = g.reshape(self._bk[0] * self._bk[1], -1)
            elif ls.kind == "merge":
                pass
            else:
                g = layer.backward(g)
        return g

    def backward(self, gprobs=None, gconfigs=None):
        """Backpropagates loss gradients; returns nothing, grads() collects."""
        kind = self.spec.kind
        if kind == "SF":
            self._backward_range(self.enc_specs, gprobs)
            return
        if kind == "MF":
            g = gprobs * self._probs * (1.0 - self._probs)
            self._backward_range(self.enc_specs, g)
            return
        # CBMF
        res_name = self.spec.residual_layer
        idx = next(i for i, ls in enumerate(self.enc_specs) if ls.name == res_name)
        gconf_total = np.zeros_like(self._probs[..., :1].repeat(17, axis=2)) \
            if gconfigs is None else np.array(gconfigs, dtype=self.dtype)
        gres = None
        if gprobs is not None:
            g = gprobs * self._probs * (1.0 - self._probs)
            gmerge = self._backward_range(self.dec_specs, g)
            gconf_total = gconf_total + gmerge[:, :, :17]
            gres = gmerge[:, :, 17:]
        g2 = self._backward_range(self.enc_specs[idx + 1:], gconf_total)
        if gres is not None:
            g2 = g2 + gres
        self._backward_range(self.enc_specs[:idx + 1], g2)

    def backward_encoder(self, gconfigs):
        """Encoder-only backprop (phase-1 training)."""
        self._backward_range(self.enc_specs, np.asarray(gconfigs, dtype=self.dtype))
