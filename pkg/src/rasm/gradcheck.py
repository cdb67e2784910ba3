"""Finite-difference gradient verification.

Central differences against the autodiff backward pass. The relative error
for a parameter is max over elements of |a - n| / max(1, |a|, |n|); float64
checks must land under 1e-6 and float32 under 1e-3.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def fd_gradient(f, x, h=None):
    """Central-difference gradient of scalar ``f`` w.r.t. ndarray ``x``."""
    x = np.asarray(x)
    if h is None:
        h = 1e-6 if x.dtype == np.float64 else 1e-3
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|), elementwise then reduced."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def check(build_loss, params, h=None, tol=None):
    """Compare autodiff grads of ``build_loss(params)`` with finite differences.

    ``params`` is a dict name -> Tensor(requires_grad=True). ``build_loss``
    must rebuild the scalar loss from the current tensor contents on every
    call (it is invoked 2 * total_elements + 1 times). Returns a dict
    name -> relative error and raises AssertionError if any exceeds ``tol``.
    """
    dtype = next(iter(params.values())).dtype
    if tol is None:
        tol = 1e-6 if dtype == np.float64 else 1e-3

    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {name: p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for name, p in params.items()}

    errs = {}
    for name, p in params.items():
        def f(_x, _p=p):
            return build_loss().item()
        numeric = fd_gradient(f, p.data, h=h)
        errs[name] = rel_error(analytic[name], numeric)
    bad = {k: v for k, v in errs.items() if v > tol}
    if bad:
        raise AssertionError(f"gradient check failed (tol={tol}): {bad}")
    return errs


def check_sampled(build_loss, params, n_coords=25, rng=None, h=None, tol=None):
    """Like ``check`` but differencing only ``n_coords`` random elements per
    parameter. For expensive graphs where the full sweep is impractical; the
    comparison at each probed coordinate is exact central differencing.
    """
    rng = rng or np.random.default_rng(0)
    dtype = next(iter(params.values())).dtype
    if tol is None:
        tol = 1e-6 if dtype == np.float64 else 1e-3
    if h is None:
        h = 1e-6 if dtype == np.float64 else 1e-3

    for p in params.values():
        p.zero_grad()
    build_loss().backward()
    errs = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = build_loss().item()
            flat[i] = orig - h
            fm = build_loss().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, rel_error(aflat[i], num))
        errs[name] = worst
    bad = {k: v for k, v in errs.items() if v > tol}
    if bad:
        raise AssertionError(f"sampled gradient check failed (tol={tol}): {bad}")
    return errs


def as_params(**arrays):
    """Wrap named ndarrays as grad-enabled tensors."""
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
