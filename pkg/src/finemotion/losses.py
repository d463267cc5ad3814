"""Press-probability and configuration losses with their gradients."""

import numpy as np

EPSILON = 1e-7


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def loss_bce(probs, labels):
    """Mean binary cross-entropy over every entry; probabilities are clamped
    to [EPSILON, 1-EPSILON] before the logs."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _check_shapes(probs, labels, "loss_bce")
    p = np.clip(probs, EPSILON, 1.0 - EPSILON)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))


def loss_bce_grad(probs, labels):
    """d(loss_bce)/d(probs); zero where the clamp is active."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _check_shapes(probs, labels, "loss_bce_grad")
    p = np.clip(probs, EPSILON, 1.0 - EPSILON)
    g = (p - labels) / (p * (1.0 - p)) / probs.size
    inside = (probs > EPSILON) & (probs < 1.0 - EPSILON)
    return np.where(inside, g, 0.0)


def loss_mse(pred, target):
    """Mean over samples of the squared Euclidean norm of the 17-dim residual
    (i.e. sum over coordinates, mean over the leading axes)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target, "loss_mse")
    n_samples = int(np.prod(pred.shape[:-1]))
    return float(np.sum((pred - target) ** 2) / n_samples)


def loss_mse_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target, "loss_mse_grad")
    n_samples = int(np.prod(pred.shape[:-1]))
    return 2.0 * (pred - target) / n_samples


def combined_loss(lam, mse, bce):
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return lam * mse + bce
