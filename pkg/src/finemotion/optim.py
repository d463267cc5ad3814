"""Adam optimizer over a named parameter store."""

import numpy as np


class ParamStore:
    """Named parameter tensors plus per-parameter Adam moment accumulators."""

    def __init__(self, params):
        self.params = dict(params)
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def checksum(self):
        """Order-stable digest of the parameter values, for audits."""
        import hashlib
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()


def adam_step(store, grads, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """One in-place Adam update with bias-corrected moments."""
    for name, g in grads.items():
        if name not in store.params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {store.params[name].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
    return store
