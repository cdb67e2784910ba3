"""Hot inner loops: im2col/col2im and the regional attention core.

Two interchangeable backends. A compiled extension (``rasm._native``) is used
when it was built and the inputs are float32/float64; otherwise vectorized
numpy fallbacks run. Select explicitly with the ``RASM_BACKEND`` environment
variable (``auto``, ``native``, ``numpy``) or ``set_backend()``.

Both backends implement identical contracts and are compared directly in the
test suite; everything here is plain-ndarray in, plain-ndarray out. The
brute-force attention oracle lives elsewhere and never routes through this
module, so checking the fast path against it stays meaningful.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    from . import _native
except ImportError:
    _native = None

_BACKEND = None


def _resolve(name):
    if name not in ("auto", "native", "numpy"):
        raise ConfigError(f"unknown backend {name!r}, expected auto/native/numpy")
    if name == "native" and _native is None:
        raise ConfigError("native backend requested but the compiled extension is unavailable")
    if name == "auto":
        return "native" if _native is not None else "numpy"
    return name


def set_backend(name):
    """Force a backend (overrides RASM_BACKEND). Returns the effective name."""
    global _BACKEND
    _BACKEND = _resolve(name)
    return _BACKEND


def backend():
    """Effective backend name, resolving RASM_BACKEND on first use."""
    global _BACKEND
    if _BACKEND is None:
        _BACKEND = _resolve(os.environ.get("RASM_BACKEND", "auto"))
    return _BACKEND


def _native_ok(*arrays):
    if backend() != "native":
        return False
    dt = arrays[0].dtype
    return dt in (np.float32, np.float64) and all(a.dtype == dt for a in arrays)


# -- im2col / col2im ----------------------------------------------------


def im2col(x, kh, kw, stride, pad, ho, wo):
    """Unfold (C,H,W) into a (C*kh*kw, ho*wo) patch matrix, zero-padded."""
    x = np.ascontiguousarray(x)
    if _native_ok(x):
        return _native.im2col(x, kh, kw, stride, pad, ho, wo)
    c, h, w = x.shape
    if pad:
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, kh, kw, ho, wo), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, ky, kx] = xp[:, ky:ky + ho * stride:stride,
                                 kx:kx + wo * stride:stride]
    return cols.reshape(c * kh * kw, ho * wo)


def col2im(cols, c, h, w, kh, kw, stride, pad, ho, wo):
    """Scatter-add a patch matrix back into a (c,h,w) image (im2col adjoint)."""
    cols = np.ascontiguousarray(cols)
    if _native_ok(cols):
        return _native.col2im(cols, c, h, w, kh, kw, stride, pad, ho, wo)
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cr = cols.reshape(c, kh, kw, ho, wo)
    for ky in range(kh):
        for kx in range(kw):
            xp[:, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += cr[:, ky, kx]
    if pad:
        return np.ascontiguousarray(xp[:, pad:pad + h, pad:pad + w])
    return xp


# -- regional attention core ---------------------------------------------
#
# q, k, v: (heads, n, dh). idx: (n, m) int64 source positions per query.
# bias: (heads, n, m), already gathered from the offset table. scale is
# applied to (q.k + bias) before the softmax. Forward returns the attention
# output and the softmax probabilities; backward consumes those
# probabilities so the forward pass is never recomputed.


def regional_forward(q, k, v, bias, idx, scale):
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k)
    v = np.ascontiguousarray(v)
    bias = np.ascontiguousarray(bias)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if _native_ok(q, k, v, bias):
        return _native.regional_forward(q, k, v, bias, idx, float(scale))
    kr = k[:, idx]                                   # (heads, n, m, dh)
    logits = (np.einsum("hnd,hnmd->hnm", q, kr) + bias) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=-1, keepdims=True)
    out = np.einsum("hnm,hnmd->hnd", p, v[:, idx])
    return out, p


def regional_backward(q, k, v, idx, scale, probs, gout):
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k)
    v = np.ascontiguousarray(v)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    probs = np.ascontiguousarray(probs)
    gout = np.ascontiguousarray(gout)
    if _native_ok(q, k, v, probs, gout):
        return _native.regional_backward(q, k, v, idx, float(scale), probs, gout)
    heads = q.shape[0]
    kr = k[:, idx]
    vr = v[:, idx]
    gp = np.einsum("hnd,hnmd->hnm", gout, vr)
    gl = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True))
    gl *= scale
    gbias = gl
    gq = np.einsum("hnm,hnmd->hnd", gl, kr)
    gk = np.zeros_like(k)
    gv = np.zeros_like(v)
    hsel = np.arange(heads)[:, None, None]
    np.add.at(gk, (hsel, idx[None]), gl[..., None] * q[:, :, None, :])
    np.add.at(gv, (hsel, idx[None]), probs[..., None] * gout[:, :, None, :])
    return gq, gk, gv, gbias
