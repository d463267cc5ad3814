"""Minibatch Adam training loops for the three model kinds."""

import os
from dataclasses import dataclass, field, asdict
import numpy as np

from . import losses, netspec
from .model import Model
from .optim import adam_step


@dataclass
class TrainConfig:
    model: str = "MF"                  # SF | MF | CBMF
    k: int = 8
    image_side: int = 64
    width: float = 1.0
    batch_size: int = 32
    epochs: int = 20
    phase1_epochs: int = 10            # CBMF only; 0 = single-phase joint
    lr: float = 0.001
    lam: float = 4.0
    seed: int = 0
    fold: int = 0
    dataset: str = ""
    dtype: str = "float64"             # float32 recommended for desk-scale runs

    def validate(self):
        if self.model not in ("SF", "MF", "CBMF"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if self.model == "CBMF" and not 0 <= self.phase1_epochs <= self.epochs:
            raise ValueError("phase1_epochs must lie in [0, epochs]")

    def build_spec(self):
        if self.model == "SF":
            return netspec.build_sf(self.image_side, self.width)
        build = netspec.build_mf if self.model == "MF" else netspec.build_cbmf
        return build(self.k, self.image_side, self.width)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class TrainResult:
    config: TrainConfig
    params: dict                       # name -> array (final values)
    curves: list = field(default_factory=list)  # one row dict per epoch
    checksums: dict = field(default_factory=dict)

    def to_summary(self):
        cfg = asdict(self.config)
        # Keep artifacts independent of where inputs happened to live so a
        # rerun into a different directory is byte-identical.
        cfg["dataset"] = os.path.basename(cfg["dataset"])
        return {"config": cfg, "curves": self.curves,
                "checksums": self.checksums}


def _batch(samples, kind, dtype):
    """(images, press, configs) arrays for one minibatch.

    SF consumes the individual frames of each window, so its batch axis is
    B*k; MF/CBMF keep the (B, k, ...) window layout."""
    imgs = np.stack([s.images for s in samples]).astype(dtype)
    press = np.stack([s.press for s in samples]).astype(np.float64)
    cfgs = np.stack([s.configs for s in samples])
    if kind == "SF":
        B, k = imgs.shape[:2]
        imgs = imgs.reshape(B * k, *imgs.shape[2:])
        press = press.reshape(B * k, 5)
        cfgs = cfgs.reshape(B * k, 17)
    return imgs, press, cfgs


def _batches(order, samples, size):
    for i in range(0, len(order), size):
        yield [samples[j] for j in order[i:i + size]]


def eval_losses(model, samples, batch_size, dtype):
    """Test-mode BCE (and MSE when the model predicts configurations)."""
    kind = model.spec.kind
    n, bce, mse = 0, 0.0, 0.0
    for chunk in _batches(np.arange(len(samples)), samples, batch_size):
        imgs, press, cfgs = _batch(chunk, kind, dtype)
        out = model.forward(imgs, train=False)
        w = len(chunk)
        bce += w * losses.loss_bce(out["probs"], press)
        if "configs" in out:
            mse += w * losses.loss_mse(out["configs"], cfgs)
        n += w
    row = {"test_bce": bce / n}
    if kind == "CBMF":
        row["test_mse"] = mse / n
    return row


def train_mf(config, train_windows, test_windows=None):
    """BCE training for SF and MF (seeded per-epoch shuffles)."""
    config.validate()
    if config.model not in ("SF", "MF"):
        raise ValueError("train_mf handles SF and MF; use train_cbmf_two_phase")
    if not train_windows:
        raise ValueError("empty training set")
    dtype = config.np_dtype()
    model = Model(config.build_spec(), dtype=dtype)
    store = model.init_params(config.seed)
    rng = np.random.default_rng(config.seed + 1)
    curves = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_windows))
        total, n = 0.0, 0
        for chunk in _batches(order, train_windows, config.batch_size):
            imgs, press, _ = _batch(chunk, config.model, dtype)
            out = model.forward(imgs, train=True, rng=rng)
            total += len(chunk) * losses.loss_bce(out["probs"], press)
            n += len(chunk)
            g = losses.loss_bce_grad(out["probs"], press).astype(dtype)
            model.backward(gprobs=g)
            adam_step(store, model.grads(), lr=config.lr)
        row = {"epoch": epoch, "phase": "joint", "train_bce": total / n}
        if test_windows:
            row.update(eval_losses(model, test_windows, config.batch_size, dtype))
        curves.append(row)
    return TrainResult(config, dict(store.params), curves,
                       {"final": store.checksum()})


def train_cbmf_two_phase(config, train_windows, test_windows=None):
    """Phase 1: encoder-only MSE on configurations. Phase 2: joint
    lam*MSE + BCE with a freshly initialized decoder and the warm encoder."""
    config.validate()
    if config.model != "CBMF":
        raise ValueError("train_cbmf_two_phase requires a CBMF configuration")
    if not train_windows:
        raise ValueError("empty training set")
    dtype = config.np_dtype()
    model = Model(config.build_spec(), dtype=dtype)
    store = model.init_params(config.seed)
    rng = np.random.default_rng(config.seed + 1)
    enc_names = {ls.name for ls in model.enc_specs}
    curves, checks = [], {}

    for epoch in range(config.phase1_epochs):
        order = rng.permutation(len(train_windows))
        total, n = 0.0, 0
        for chunk in _batches(order, train_windows, config.batch_size):
            imgs, _, cfgs = _batch(chunk, "CBMF", dtype)
            pred = model.forward_encoder(imgs, train=True, rng=rng)
            total += len(chunk) * losses.loss_mse(pred, cfgs)
            n += len(chunk)
            model.backward_encoder(losses.loss_mse_grad(pred, cfgs).astype(dtype))
            grads = {k: v for k, v in model.grads().items()
                     if k.split(".")[0] in enc_names}
            adam_step(store, grads, lr=config.lr)
        row = {"epoch": epoch, "phase": "encoder", "train_mse": total / n}
        if test_windows:
            row.update(eval_losses(model, test_windows, config.batch_size, dtype))
        curves.append(row)
    checks["encoder_after_phase1"] = _subset_checksum(store, enc_names)

    # fresh decoder, warm encoder; fresh optimizer state for the new phase
    dec_rng = np.random.default_rng(config.seed + 2)
    for ls in model.dec_specs:
        layer = model.layers.get(ls.name)
        if layer is not None:
            layer.init(dec_rng, dtype=dtype)
    store = model.param_store()
    checks["encoder_at_phase2_start"] = _subset_checksum(store, enc_names)

    for epoch in range(config.phase1_epochs, config.epochs):
        order = rng.permutation(len(train_windows))
        tb, tm, n = 0.0, 0.0, 0
        for chunk in _batches(order, train_windows, config.batch_size):
            imgs, press, cfgs = _batch(chunk, "CBMF", dtype)
            out = model.forward(imgs, train=True, rng=rng)
            tb += len(chunk) * losses.loss_bce(out["probs"], press)
            tm += len(chunk) * losses.loss_mse(out["configs"], cfgs)
            n += len(chunk)
            gp = losses.loss_bce_grad(out["probs"], press).astype(dtype)
            gc = None
            if config.lam > 0:
                gc = (config.lam
                      * losses.loss_mse_grad(out["configs"], cfgs)).astype(dtype)
            model.backward(gprobs=gp, gconfigs=gc)
            adam_step(store, model.grads(), lr=config.lr)
        row = {"epoch": epoch, "phase": "joint",
               "train_bce": tb / n, "train_mse": tm / n}
        if test_windows:
            row.update(eval_losses(model, test_windows, config.batch_size, dtype))
        curves.append(row)
    checks["final"] = store.checksum()
    return TrainResult(config, dict(store.params), curves, checks)


def _subset_checksum(store, names):
    import hashlib
    h = hashlib.sha256()
    for k in sorted(store.params):
        if k.split(".")[0] in names:
            h.update(k.encode())
            h.update(np.ascontiguousarray(store.params[k]).tobytes())
    return h.hexdigest()


def train(config, train_windows, test_windows=None):
    if config.model == "CBMF":
        return train_cbmf_two_phase(config, train_windows, test_windows)
    return train_mf(config, train_windows, test_windows)
