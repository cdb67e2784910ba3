"""Dense multi-axis arrays with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array plus gradient bookkeeping. Every
differentiable operation records its inputs and a backward closure on the
output tensor; ``backward()`` on a scalar loss replays those closures in
reverse execution order and accumulates ``.grad`` buffers on every tensor
that ``requires_grad``.

Training runs in float32; gradient-check and oracle suites construct float64
tensors for the tighter tolerances they assert.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ContractError, GatherIndexError, ShapeError

LN_EPS = 1e-5  # layer-norm variance guard

_seq = itertools.count()
_grad_enabled = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / metric passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev", "_seq",
                 "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()
        self._seq = next(_seq)

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- autograd ------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Run reverse-mode differentiation from this scalar.

        The graph is released afterwards (each op's closure and parent links
        are dropped), so intermediates free by refcount as soon as the caller
        lets go of them; another pass needs the graph rebuilt. Closures
        capture their output tensor, which makes every op node a reference
        cycle until this unlinking happens.

        Returns the ComputationRecord that was replayed (mainly for tests).
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ContractError("backward on a tensor that does not require grad")
        record = ComputationRecord.trace(self)
        self.grad = np.ones_like(self.data)
        for t in record.reverse_order():
            if t._backward is not None and t.grad is not None:
                t._backward()
        for t in record.ops:
            t._backward = None
            t._prev = ()
        return record

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)


class ComputationRecord:
    """Executed differentiable ops, in execution order.

    Each entry is an output tensor holding references to its input tensors
    (``_prev``) and the closure that propagates gradients to them. Replaying
    the closures in reverse execution order is a reverse-topological walk,
    since an op's inputs always precede it.
    """

    def __init__(self, ops):
        self.ops = ops

    @classmethod
    def trace(cls, root):
        seen = {id(root)}
        stack = [root]
        nodes = [root]
        while stack:
            t = stack.pop()
            for p in t._prev:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append(p)
                    nodes.append(p)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def reverse_order(self):
        return reversed(self.ops)

    def __len__(self):
        return len(self.ops)


# -- op plumbing -------------------------------------------------------


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward(out)
    return out


def make_op(data, parents, backward):
    """Wrap a precomputed result as a differentiable op.

    Extension point for ops whose forward/backward live outside this module
    (the regional attention core). ``backward(out)`` must return a closure
    that reads ``out.grad`` and accumulates into the parents.
    """
    return _make(data, parents, backward)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        return run

    return _make(a.data + b.data, (a, b), bwd)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))
        return run

    return _make(a.data * b.data, (a, b), bwd)


def square(x):
    return mul(x, x)


def sqrt(x):
    y = np.sqrt(x.data)

    def bwd(out):
        def run():
            x._accumulate(out.grad * (0.5 / y))
        return run

    return _make(y, (x,), bwd)


def absolute(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad * np.sign(x.data))
        return run

    return _make(np.abs(x.data), (x,), bwd)


def tsum(x):
    def bwd(out):
        def run():
            x._accumulate(np.full_like(x.data, out.grad))
        return run

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bwd)


def mean(x):
    n = x.size

    def bwd(out):
        def run():
            x._accumulate(np.full_like(x.data, out.grad / n))
        return run

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bwd)


# -- activations -------------------------------------------------------


def gelu(x):
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bwd(out):
        def run():
            pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
            x._accumulate(out.grad * (cdf + xd * pdf))
        return run

    return _make(xd * cdf, (x,), bwd)


def relu(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad * (x.data > 0))
        return run

    return _make(np.maximum(x.data, 0), (x,), bwd)


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(out):
        def run():
            x._accumulate(out.grad * s * (1.0 - s))
        return run

    return _make(s, (x,), bwd)


def softmax(x, axis=-1):
    """Numerically stabilized softmax; slices along ``axis`` sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def run():
            g = out.grad
            dot = (g * p).sum(axis=axis, keepdims=True)
            x._accumulate(p * (g - dot))
        return run

    return _make(p, (x,), bwd)


def layer_norm(x, gamma, beta, axis=-1, eps=LN_EPS):
    """Zero-mean/unit-variance along ``axis``, then affine by gamma/beta."""
    ax = axis if axis >= 0 else x.ndim + axis
    n = x.shape[ax]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({n},), got "
            f"{gamma.shape} and {beta.shape}")
    bshape = [1] * x.ndim
    bshape[ax] = n
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate(
                    (g * xhat).sum(axis=tuple(i for i in range(x.ndim) if i != ax)))
            if beta.requires_grad:
                beta._accumulate(
                    g.sum(axis=tuple(i for i in range(x.ndim) if i != ax)))
            if x.requires_grad:
                gg = g * gam
                m1 = gg.mean(axis=ax, keepdims=True)
                m2 = (gg * xhat).mean(axis=ax, keepdims=True)
                x._accumulate((gg - m1 - xhat * m2) * inv)
        return run

    return _make(xhat * gam + bet, (x, gamma, beta), bwd)


# -- shape manipulation ------------------------------------------------


def reshape(x, shape):
    def bwd(out):
        def run():
            x._accumulate(out.grad.reshape(x.shape))
        return run

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(out):
        def run():
            x._accumulate(out.grad.transpose(inv))
        return run

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bwd)


def concat(tensors, axis=0):
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def run():
            g = out.grad
            sl = [slice(None)] * g.ndim
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(sl)])
        return run

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def pad_zero(x, pad_width):
    """Zero-pad; ``pad_width`` as in ``np.pad``."""
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))

    def bwd(out):
        def run():
            x._accumulate(out.grad[sl])
        return run

    return _make(np.pad(x.data, pad_width), (x,), bwd)


def narrow(x, axis, start, length):
    """Slice ``length`` entries from ``start`` along one axis."""
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[sl] = out.grad
            x._accumulate(g)
        return run

    return _make(np.ascontiguousarray(x.data[sl]), (x,), bwd)


def roll(x, shift, axis):
    def bwd(out):
        def run():
            x._accumulate(np.roll(out.grad, -shift, axis=axis))
        return run

    return _make(np.roll(x.data, shift, axis=axis), (x,), bwd)


def gather(x, indices, axis=0):
    """Take ``indices`` along ``axis``; backward scatter-adds into the source."""
    idx = np.asarray(indices)
    n = x.shape[axis]
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        where = np.argwhere(bad)[0]
        raise GatherIndexError(
            f"gather index {idx[tuple(where)]} at position {tuple(where)} out of "
            f"range for axis {axis} with length {n}")

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            np.add.at(g, _gather_slices(idx, axis, x.ndim), out.grad)
            x._accumulate(g)
        return run

    return _make(np.take(x.data, idx, axis=axis), (x,), bwd)


def _gather_slices(idx, axis, ndim):
    sl = [slice(None)] * ndim
    sl[axis] = idx
    return tuple(sl)


# -- linear algebra ----------------------------------------------------


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        return run

    return _make(a.data @ b.data, (a, b), bwd)


def bmm(a, b):
    """Batched matmul: (B,m,k) @ (B,k,n) -> (B,m,n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shapes incompatible: {a.shape} x {b.shape}")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b.data.transpose(0, 2, 1))
            if b.requires_grad:
                b._accumulate(a.data.transpose(0, 2, 1) @ g)
        return run

    return _make(a.data @ b.data, (a, b), bwd)


def linear(x, w, b=None):
    """x @ w (+ b). x: (n, din), w: (din, dout), b: (dout,)."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def mlp(x, w1, b1, w2, b2):
    """Two-layer perceptron with a GELU between the layers."""
    return linear(gelu(linear(x, w1, b1)), w2, b2)


# -- convolution and pooling -------------------------------------------


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation. x: (Cin,H,W), w: (Cout,Cin,kh,kw)."""
    cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d output would be empty for input {x.shape}, kernel {w.shape}, "
            f"stride {stride}, padding {padding}")
    cols = kernels.im2col(x.data, kh, kw, stride, padding, ho, wo)
    wm = w.data.reshape(cout, cin * kh * kw)
    y = (wm @ cols).reshape(cout, ho, wo)

    def bwd(out):
        def run():
            g = out.grad.reshape(cout, ho * wo)
            if w.requires_grad:
                cols2 = kernels.im2col(x.data, kh, kw, stride, padding, ho, wo)
                w._accumulate((g @ cols2.T).reshape(w.shape))
            if x.requires_grad:
                gcols = wm.T @ g
                x._accumulate(
                    kernels.col2im(gcols, cin, h, wd, kh, kw, stride, padding, ho, wo))
        return run

    return _make(y, (x, w), bwd)


def conv_transpose2d(x, w, stride=1):
    """Transposed 2-D convolution. x: (Cin,H,W), w: (Cin,Cout,kh,kw)."""
    cin, h, wd = x.shape
    cin2, cout, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw
    wm = w.data.reshape(cin, cout * kh * kw)
    xm = x.data.reshape(cin, h * wd)
    cols = wm.T @ xm
    y = kernels.col2im(cols, cout, ho, wo, kh, kw, stride, 0, h, wd)

    def bwd(out):
        def run():
            gcols = kernels.im2col(out.grad, kh, kw, stride, 0, h, wd)
            if x.requires_grad:
                x._accumulate((wm @ gcols).reshape(x.shape))
            if w.requires_grad:
                w._accumulate((xm @ gcols.T).reshape(w.shape))
        return run

    return _make(y, (x, w), bwd)


def avg_pool2d(x, k):
    """Non-overlapping k x k average pooling on (C,H,W)."""
    c, h, wd = x.shape
    if h % k or wd % k:
        raise ShapeError(f"avg_pool2d: spatial dims {h}x{wd} not divisible by {k}")
    y = x.data.reshape(c, h // k, k, wd // k, k).mean(axis=(2, 4))

    def bwd(out):
        def run():
            g = out.grad / (k * k)
            x._accumulate(np.repeat(np.repeat(g, k, axis=1), k, axis=2))
        return run

    return _make(y, (x,), bwd)


def global_avg_pool(x):
    """(C,H,W) -> (C,1,1) spatial mean."""
    c, h, wd = x.shape
    y = x.data.mean(axis=(1, 2), keepdims=True)

    def bwd(out):
        def run():
            x._accumulate(np.broadcast_to(out.grad / (h * wd), x.shape).copy())
        return run

    return _make(y, (x,), bwd)
