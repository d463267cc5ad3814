"""Central finite-difference verification of analytic gradients."""

import numpy as np


def finite_diff_check(fn, point, analytic, step=1e-3, coords=None, rng=None,
                      kink_filter=False):
    """Max relative error between `analytic` and central differences of `fn`.

    fn: maps a flat copy of `point` to a scalar.
    point: array at which the gradient was taken (not modified).
    analytic: gradient array, same shape as point.
    coords: optionally a number of coordinates to sample (for large points);
            default checks every coordinate.
    kink_filter: when True, each coordinate is also differenced at step/2 and
        skipped if the two estimates disagree, which flags a non-smooth point
        (a relu kink inside the step) where central differences verify
        nothing. At most half the sampled coordinates may be skipped.
    Relative error per coordinate is |a - d| / max(1, |a|).
    """
    flat = np.array(point, dtype=np.float64).ravel()
    a = np.asarray(analytic, dtype=np.float64).ravel()
    if a.shape != flat.shape:
        raise ValueError(f"analytic shape {a.shape} != point shape {flat.shape}")
    if coords is None:
        idx = range(flat.size)
    else:
        r = rng if rng is not None else np.random.default_rng(0)
        idx = r.choice(flat.size, size=min(coords, flat.size), replace=False)

    def central(i, h):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(flat.reshape(np.shape(point)))
        flat[i] = orig - h
        fm = fn(flat.reshape(np.shape(point)))
        flat[i] = orig
        return (fp - fm) / (2.0 * h)

    worst = 0.0
    checked = skipped = 0
    for i in idx:
        d = central(i, step)
        if kink_filter:
            d2 = central(i, step / 2.0)
            if abs(d - d2) > 1e-5 * max(1.0, abs(d), abs(d2)):
                skipped += 1
                continue
            d = d2
        checked += 1
        err = abs(a[i] - d) / max(1.0, abs(a[i]))
        if err > worst:
            worst = err
    if kink_filter and skipped > checked:
        raise ValueError(f"kink filter rejected {skipped} of {skipped + checked} "
                         "coordinates; point is too non-smooth to verify")
    return worst


def check_layer_gradients(layer, x, step=1e-3, loss_weights=None, coords=None, rng=None):
    """Finite-difference check of a layer's input and parameter gradients.

    Uses a fixed random linear functional of the output as the scalar loss
    so every output element participates. Returns the max relative error
    over the input and all parameters.
    """
    r = rng if rng is not None else np.random.default_rng(0)
    out = layer.forward(x)
    w = loss_weights if loss_weights is not None else r.standard_normal(out.shape)

    def run(inp, params):
        saved = layer.params
        layer.params = params
        try:
            return float(np.sum(layer.forward(inp) * w))
        finally:
            layer.params = saved

    gin = layer.backward(w)
    worst = finite_diff_check(
        lambda p: run(p, layer.params), x, gin, step=step, coords=coords, rng=r)
    for name in layer.params:
        def f(p, name=name):
            params = dict(layer.params)
            params[name] = p
            return run(x, params)
        err = finite_diff_check(f, layer.params[name], layer.grads[name],
                                step=step, coords=coords, rng=r)
        worst = max(worst, err)
    return worst
