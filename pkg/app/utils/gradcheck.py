# app/utils/gradcheck.py
"""Central finite-difference checks for the autodiff engine"""
import numpy as np

from app.models.tensor import Parameter, backward


def numerical_grad(loss_fn, param, indices, eps=1e-6):
    """Central differences of ``loss_fn()`` w.r.t. selected flat entries of ``param``.

    Args:
        loss_fn: callable rebuilding the forward pass and returning a scalar Tensor
        param: the Parameter to perturb
        indices: flat positions to perturb
        eps: step size

    Returns:
        numpy array of the same length as ``indices``
    """
    original = np.array(param.data)
    grads = np.zeros(len(indices), dtype=np.float64)
    for n, flat in enumerate(indices):
        bumped = original.copy().reshape(-1)
        bumped[flat] += eps
        param.assign(bumped.reshape(original.shape))
        plus = loss_fn().item()
        bumped[flat] -= 2 * eps
        param.assign(bumped.reshape(original.shape))
        minus = loss_fn().item()
        grads[n] = (plus - minus) / (2 * eps)
    param.assign(original)
    return grads


def relative_error(analytic, numeric, atol=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return np.abs(analytic - numeric) / scale


def check_gradients(loss_fn, params, fraction=1.0, rng=None, eps=1e-6, atol=1e-6):
    """Compare backward against finite differences on a sample of entries.

    ``params`` is a list of Parameters (or a dict name -> Parameter). With
    ``fraction < 1`` a random subset of entries is checked, at least one per
    parameter. Returns the maximum relative error seen.
    """
    if isinstance(params, dict):
        params = list(params.values())
    params = [p for p in params if isinstance(p, Parameter) and p.trainable]
    rng = rng or np.random.default_rng(0)

    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = {id(p): np.array(p.grad).reshape(-1) for p in params}

    worst = 0.0
    for p in params:
        if fraction >= 1.0:
            indices = np.arange(p.size)
        else:
            count = max(1, int(round(p.size * fraction)))
            indices = rng.choice(p.size, size=count, replace=False)
        numeric = numerical_grad(loss_fn, p, indices, eps=eps)
        err = relative_error(analytic[id(p)][indices], numeric, atol=atol)
        worst = max(worst, float(err.max()))
    return worst
