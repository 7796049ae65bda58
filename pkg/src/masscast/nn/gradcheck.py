"""Central finite-difference verification of every backward pass.

All checks run in float64 with h=1e-5.  Max/ReLU kinks are excluded by a
margin filter: pool windows whose top two values are closer than the margin
and ReLU inputs within the margin of zero are not compared.
"""

import numpy as np

from .layers import (
    BatchNorm,
    Conv3x3,
    Linear,
    MaxPool2,
    ReLU,
    concat_backward,
    concat_forward,
    mse_loss,
)

H_STEP = 1e-5
TIE_MARGIN = 1e-3
LAYER_TOL = 1e-4
MSE_TOL = 1e-6
MODEL_TOL = 1e-3


def max_rel_error(analytic, numeric, mask=None, floor=1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    rel = np.abs(analytic - numeric) / denom
    if mask is not None:
        rel = rel[mask]
    return float(rel.max()) if rel.size else 0.0


def numeric_grad(f, arr, h=H_STEP, mask=None):
    """Per-element central differences of scalar f with respect to arr.

    arr is perturbed in place and restored, so f may simply re-read it.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat_mask = None if mask is None else np.asarray(mask).ravel()
    for idx in range(arr.size):
        if flat_mask is not None and not flat_mask[idx]:
            continue
        orig = arr.flat[idx]
        arr.flat[idx] = orig + h
        fp = f()
        arr.flat[idx] = orig - h
        fm = f()
        arr.flat[idx] = orig
        grad.flat[idx] = (fp - fm) / (2.0 * h)
    return grad


def _check_layer(layer, x, seed, input_mask=None):
    """Compare analytic input/param grads against finite differences."""
    rng = np.random.default_rng(seed + 1000)
    out = layer.forward(x, train=True)
    u = rng.standard_normal(out.shape)
    dx_analytic = layer.backward(u)  # also populates layer.grads

    def loss():
        return float((layer.forward(x, train=True) * u).sum())

    errs = [max_rel_error(dx_analytic, numeric_grad(loss, x, mask=input_mask),
                          mask=input_mask)]
    for key, value in layer.params.items():
        analytic = layer.grads[key]
        errs.append(max_rel_error(analytic, numeric_grad(loss, value)))
    return max(errs)


def check_conv(seed) -> float:
    rng = np.random.default_rng(seed)
    layer = Conv3x3(3, 4, rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 5, 5))
    return _check_layer(layer, x, seed)


def check_pool(seed) -> float:
    rng = np.random.default_rng(seed)
    layer = MaxPool2(dtype=np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    windows = (
        x.reshape(2, 3, 3, 2, 3, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 3, 3, 4)
    )
    top2 = np.sort(windows, axis=-1)[..., -2:]
    tied = (top2[..., 1] - top2[..., 0]) < TIE_MARGIN
    keep = np.repeat(np.repeat(~tied, 2, axis=2), 2, axis=3)
    return _check_layer(layer, x, seed, input_mask=keep)


def check_batchnorm(seed, spatial) -> float:
    rng = np.random.default_rng(seed)
    if spatial:
        layer = BatchNorm(3, spatial=True, dtype=np.float64)
        x = rng.standard_normal((4, 3, 5, 5))
    else:
        layer = BatchNorm(6, spatial=False, dtype=np.float64)
        x = rng.standard_normal((8, 6))
    return _check_layer(layer, x, seed)


def check_linear(seed) -> float:
    rng = np.random.default_rng(seed)
    layer = Linear(7, 4, rng, dtype=np.float64)
    x = rng.standard_normal((5, 7))
    return _check_layer(layer, x, seed)


def check_relu(seed) -> float:
    rng = np.random.default_rng(seed)
    layer = ReLU(dtype=np.float64)
    x = rng.standard_normal((4, 9))
    return _check_layer(layer, x, seed, input_mask=np.abs(x) > TIE_MARGIN)


def check_concat(seed) -> float:
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((3, 6))
    extra = rng.standard_normal((3, 3))
    u = rng.standard_normal((3, 9))
    da, db = concat_backward(u, feats.shape[1])

    def loss():
        return float((concat_forward(feats, extra) * u).sum())

    err_a = max_rel_error(da, numeric_grad(loss, feats))
    err_b = max_rel_error(db, numeric_grad(loss, extra))
    return max(err_a, err_b)


def check_mse(seed) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.standard_normal((6, 1))
    target = rng.standard_normal((6, 1))
    _, dpred = mse_loss(pred, target)

    def loss():
        return mse_loss(pred, target)[0]

    return max_rel_error(dpred, numeric_grad(loss, pred))


LAYER_CHECKS = {
    "conv3x3": check_conv,
    "maxpool2": check_pool,
    "batchnorm_spatial": lambda s: check_batchnorm(s, True),
    "batchnorm_flat": lambda s: check_batchnorm(s, False),
    "linear": check_linear,
    "relu": check_relu,
    "concat": check_concat,
    "mse": check_mse,
}


def run_layer_suite(n_seeds=10, seed0=0) -> dict[str, float]:
    """Max relative error per layer kind across n_seeds random instances."""
    return {
        name: max(fn(seed0 + s) for s in range(n_seeds))
        for name, fn in LAYER_CHECKS.items()
    }


def _coord_probe(loss_fn, value, i, h):
    """(f(x+h), f(x-h)) with the coordinate restored afterwards."""
    orig = value.flat[i]
    value.flat[i] = orig + h
    fp = loss_fn()
    value.flat[i] = orig - h
    fm = loss_fn()
    value.flat[i] = orig
    return fp, fm


def _direction_probe(loss_fn, refs, direction, h):
    for (_, v, _, _), d in zip(refs, direction):
        v += h * d
    fp = loss_fn()
    for (_, v, _, _), d in zip(refs, direction):
        v -= 2.0 * h * d
    fm = loss_fn()
    for (_, v, _, _), d in zip(refs, direction):
        v += h * d
    return fp, fm


def _straddles_kink(fp, fm, f0, h, analytic, numeric):
    """One-sided secants bracketing two different slopes mark a kink.

    At a smooth point forward and backward differences agree to O(h·f''),
    far below any discrepancy worth reporting; with a ReLU/pool switch
    inside the probe interval their spread bounds the contamination of the
    central secant.  A probe is discarded only when that spread is large
    enough to explain the analytic/numeric mismatch, so a wrong analytic
    gradient can never hide behind the test.
    """
    fwd = (fp - f0) / h
    bwd = (f0 - fm) / h
    return abs(fwd - bwd) > 0.5 * abs(analytic - numeric)


def check_model(model, loss_fn, coords_per_tensor=4, n_directions=4, seed=0,
                zero_tol=1e-6, redraws=4) -> float:
    """Finite-difference check of a composed model's full gradient.

    ``loss_fn()`` must evaluate the scalar training loss at the model's
    current parameters, and the model's ``grads`` must already hold the
    analytic gradient at the starting point.  A random subset of individual
    coordinates is probed per tensor, plus whole-parameter directional
    derivatives.

    The loss is only piecewise smooth (ReLU, max pooling), so two guards
    keep the comparison meaningful: probes where analytic and numeric
    derivatives are both below ``zero_tol`` count as agreement, and a
    suspicious probe whose one-sided differences disagree straddles a kink
    and is redrawn — a genuine gradient bug leaves them consistent and
    still fails.
    """
    rng = np.random.default_rng(seed + 7)
    refs = list(model.parameters())
    f0 = loss_fn()
    worst = 0.0
    for name, value, grad, _ in refs:
        take = min(coords_per_tensor + redraws, value.size)
        drawn = rng.choice(value.size, size=take, replace=False)
        checked = 0
        for i in drawn:
            if checked >= coords_per_tensor:
                break
            fp, fm = _coord_probe(loss_fn, value, i, H_STEP)
            numeric = (fp - fm) / (2.0 * H_STEP)
            analytic = grad.flat[i]
            if max(abs(analytic), abs(numeric)) < zero_tol:
                checked += 1
                continue
            err = max_rel_error(analytic, numeric)
            if err > LAYER_TOL and _straddles_kink(
                    fp, fm, f0, H_STEP, analytic, numeric):
                continue
            worst = max(worst, err)
            checked += 1
    for _ in range(n_directions):
        direction = [rng.standard_normal(v.shape) for _, v, _, _ in refs]
        norm = np.sqrt(sum((d * d).sum() for d in direction))
        direction = [d / norm for d in direction]
        analytic = sum((g * d).sum() for (_, _, g, _), d in zip(refs, direction))
        fp, fm = _direction_probe(loss_fn, refs, direction, H_STEP)
        numeric = (fp - fm) / (2.0 * H_STEP)
        err = max_rel_error(analytic, numeric)
        if err > LAYER_TOL and _straddles_kink(
                fp, fm, f0, H_STEP, analytic, numeric):
            continue
        worst = max(worst, err)
    return worst
