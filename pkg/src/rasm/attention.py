"""Dilated regional attention, a window-attention baseline, and a masked
global-attention oracle.

Each query on an H x W feature grid attends to an r x r lattice of sources
spaced ``dilation`` pixels apart, centered on the query and translated just
enough to stay in-bounds, so every query sees exactly r*r sources. Logits are
query.key dot products plus a learned relative-position bias, scaled by
1/sqrt(head_dim) after the bias is added.

The oracle computes the same quantity as full n x n attention with disallowed
pairs forced to -inf. It is deliberately written in plain numpy with no reuse
of the fast kernels so the two routes stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, GatherIndexError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int
    num_heads: int
    region_size: int = 11
    dilation: int = 2

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_heads < 1:
            raise ConfigError(
                f"embed_dim and num_heads must be positive, got "
                f"{self.embed_dim} and {self.num_heads}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"num_heads {self.num_heads} must divide embed_dim {self.embed_dim}")
        if self.region_size < 1 or self.region_size % 2 == 0:
            raise ConfigError(
                f"region_size must be an odd positive integer, got {self.region_size}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be positive, got {self.dilation}")

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def span(self):
        """Extent of the region lattice: dilation*(r-1)+1 pixels per axis."""
        return self.dilation * (self.region_size - 1) + 1

    def check_fit(self, h, w):
        if self.span > min(h, w):
            raise ConfigError(
                f"region footprint {self.span} (r={self.region_size}, "
                f"dilation={self.dilation}) does not fit a {h}x{w} feature map")


def _axis_base(n, coord, cfg):
    # start of the dilated lattice on one axis, clamped in-bounds
    reach = cfg.dilation * (cfg.region_size - 1)
    lo = coord - cfg.dilation * ((cfg.region_size - 1) // 2)
    return np.clip(lo, 0, n - 1 - reach)


def region_indices(query, h, w, cfg):
    """Source coordinates for one query: (r*r, 2) array, row-major order."""
    cfg.check_fit(h, w)
    y, x = query
    if not (0 <= y < h and 0 <= x < w):
        raise GatherIndexError(f"query {query} outside {h}x{w} grid")
    steps = cfg.dilation * np.arange(cfg.region_size)
    ys = _axis_base(h, y, cfg) + steps
    xs = _axis_base(w, x, cfg) + steps
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def region_index_map(h, w, cfg):
    """Flat source indices for every query: (h*w, r*r) int64."""
    cfg.check_fit(h, w)
    r = cfg.region_size
    steps = cfg.dilation * np.arange(r, dtype=np.int64)
    by = _axis_base(h, np.arange(h, dtype=np.int64), cfg)      # (h,)
    bx = _axis_base(w, np.arange(w, dtype=np.int64), cfg)      # (w,)
    ys = by[:, None] + steps[None, :]                           # (h, r)
    xs = bx[:, None] + steps[None, :]                           # (w, r)
    # flat index (y*w + x) for every (query_y, query_x, ry, rx)
    flat = ys[:, None, :, None] * w + xs[None, :, None, :]
    return np.ascontiguousarray(flat.reshape(h * w, r * r))


def _offset_to_step(delta, dilation):
    # nearest lattice step to delta/dilation; exact when delta is a multiple.
    # Clamped border regions can emit offsets that are not multiples of the
    # dilation, so the lookup rounds (half away from zero toward +inf) to
    # stay total over everything the region generator produces.
    return (2 * delta + dilation) // (2 * dilation)


def bias_index_map(h, w, cfg):
    """Flattened (2r-1)^2 bias-table index for every (query, region element)."""
    r = cfg.region_size
    idx = region_index_map(h, w, cfg)
    qy = (np.arange(h * w, dtype=np.int64) // w)[:, None]
    qx = (np.arange(h * w, dtype=np.int64) % w)[:, None]
    dy = idx // w - qy
    dx = idx % w - qx
    iy = _offset_to_step(dy, cfg.dilation) + (r - 1)
    ix = _offset_to_step(dx, cfg.dilation) + (r - 1)
    side = 2 * r - 1
    if (iy < 0).any() or (iy >= side).any() or (ix < 0).any() or (ix >= side).any():
        raise GatherIndexError("relative offset outside the bias table")
    return np.ascontiguousarray(iy * side + ix)


def _trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    # resample anything beyond 2 sigma
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(dtype)


def _regional_core(q3, k3, v3, table, idx, bmap, scale):
    """Differentiable regional attention on split-head tensors.

    q3/k3/v3: (heads, n, head_dim); table: (heads, 2r-1, 2r-1);
    idx/bmap: (n, r*r) int64. Returns (heads, n, head_dim).
    """
    heads = q3.shape[0]
    tflat = table.data.reshape(heads, -1)
    bias_g = np.ascontiguousarray(tflat[:, bmap])
    out, probs = kernels.regional_forward(q3.data, k3.data, v3.data,
                                          bias_g, idx, scale)

    def bwd(o):
        def run():
            gq, gk, gv, gbias = kernels.regional_backward(
                q3.data, k3.data, v3.data, idx, scale, probs, o.grad)
            if q3.requires_grad:
                q3._accumulate(gq)
            if k3.requires_grad:
                k3._accumulate(gk)
            if v3.requires_grad:
                v3._accumulate(gv)
            if table.requires_grad:
                gt = np.zeros_like(tflat)
                hsel = np.arange(heads)[:, None, None]
                np.add.at(gt, (hsel, bmap[None]), gbias)
                table._accumulate(gt.reshape(table.shape))
        return run

    return T.make_op(out, (q3, k3, v3, table), bwd)


def _split_heads(x, heads):
    n, d = x.shape
    return T.transpose(T.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def _merge_heads(x):
    heads, n, dh = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (n, heads * dh))


class RegionalAttention:
    """Multi-head dilated regional attention layer on (n, d) sequences."""

    def __init__(self, cfg: AttentionConfig, rng=None, dtype=np.float32):
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        d = cfg.embed_dim
        side = 2 * cfg.region_size - 1
        self.wq = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wk = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wv = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wo = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.bias_table = Tensor(
            _trunc_normal(rng, (cfg.num_heads, side, side), dtype=dtype),
            requires_grad=True)
        self._maps = {}

    def parameters(self):
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
                "bias_table": self.bias_table}

    def _index_maps(self, h, w):
        key = (h, w)
        if key not in self._maps:
            self._maps[key] = (region_index_map(h, w, self.cfg),
                               bias_index_map(h, w, self.cfg))
        return self._maps[key]

    def __call__(self, x: Tensor, h, w):
        cfg = self.cfg
        if x.ndim != 2 or x.shape[0] != h * w or x.shape[1] != cfg.embed_dim:
            raise ShapeError(
                f"expected ({h * w}, {cfg.embed_dim}) input for a {h}x{w} grid, "
                f"got {x.shape}")
        idx, bmap = self._index_maps(h, w)
        q = _split_heads(T.matmul(x, self.wq), cfg.num_heads)
        k = _split_heads(T.matmul(x, self.wk), cfg.num_heads)
        v = _split_heads(T.matmul(x, self.wv), cfg.num_heads)
        scale = 1.0 / np.sqrt(cfg.head_dim)
        out = _regional_core(q, k, v, self.bias_table, idx, bmap, scale)
        return T.matmul(_merge_heads(out), self.wo)

    def probabilities(self, x: Tensor, h, w):
        """Post-softmax weights, (heads, n, r*r). Inference-only helper."""
        cfg = self.cfg
        idx, bmap = self._index_maps(h, w)
        with T.no_grad():
            q = _split_heads(T.matmul(x, self.wq), cfg.num_heads)
            k = _split_heads(T.matmul(x, self.wk), cfg.num_heads)
            v = _split_heads(T.matmul(x, self.wv), cfg.num_heads)
        tflat = self.bias_table.data.reshape(cfg.num_heads, -1)
        _, probs = kernels.regional_forward(
            q.data, k.data, v.data, np.ascontiguousarray(tflat[:, bmap]),
            idx, 1.0 / np.sqrt(cfg.head_dim))
        return probs, idx


# -- verification oracle -------------------------------------------------


def global_attention_oracle(x, wq, wk, wv, wo, num_heads, allowed, bias=None):
    """Full n x n multi-head attention with masking. Plain numpy, slow path.

    x: (n, d); projections: (d, d); allowed: bool (n, n), True where key s may
    serve query i; bias: (heads, n, n) added to logits before scaling, or None.
    """
    n, d = x.shape
    dh = d // num_heads
    q = (x @ wq).reshape(n, num_heads, dh).transpose(1, 0, 2)
    k = (x @ wk).reshape(n, num_heads, dh).transpose(1, 0, 2)
    v = (x @ wv).reshape(n, num_heads, dh).transpose(1, 0, 2)
    logits = q @ k.transpose(0, 2, 1)
    if bias is not None:
        logits = logits + bias
    logits = logits / np.sqrt(dh)
    logits = np.where(allowed[None], logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=-1, keepdims=True)
    out = (p @ v).transpose(1, 0, 2).reshape(n, d)
    return out @ wo


def regional_oracle(layer: RegionalAttention, x, h, w):
    """Run the masked-global oracle with this layer's weights and region maps."""
    cfg = layer.cfg
    idx = region_index_map(h, w, cfg)
    bmap = bias_index_map(h, w, cfg)
    n = h * w
    allowed = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), idx.shape[1])
    allowed[rows, idx.ravel()] = True
    tflat = layer.bias_table.data.reshape(cfg.num_heads, -1)
    bias = np.zeros((cfg.num_heads, n, n), dtype=np.float64)
    for hd in range(cfg.num_heads):
        bias[hd, rows, idx.ravel()] = tflat[hd][bmap].ravel()
    return global_attention_oracle(
        np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
        layer.wq.data.astype(np.float64), layer.wk.data.astype(np.float64),
        layer.wv.data.astype(np.float64), layer.wo.data.astype(np.float64),
        cfg.num_heads, allowed, bias)


# -- attention-map dump ---------------------------------------------------


def attention_map_dump(x, layer: RegionalAttention, h, w, query):
    """Head-averaged post-softmax weights for one query position.

    Returns (offsets, coords, weights): relative (dy, dx) per region element,
    absolute coordinates, and weights summing to 1.
    """
    y, qx = query
    if not (0 <= y < h and 0 <= qx < w):
        raise GatherIndexError(f"query {query} outside {h}x{w} grid")
    probs, idx = layer.probabilities(x, h, w)
    i = y * w + qx
    weights = probs[:, i, :].mean(axis=0)
    coords = np.stack([idx[i] // w, idx[i] % w], axis=1)
    offsets = coords - np.array([y, qx])
    return offsets, coords, weights


def serialize_attention_map(offsets, weights):
    """One line per region element: "dy dx weight", 9 significant digits."""
    lines = [f"{int(dy)} {int(dx)} {w:.9g}"
             for (dy, dx), w in zip(offsets, weights)]
    return "\n".join(lines) + "\n"


# -- window-attention baseline --------------------------------------------


class WindowAttention:
    """Non-overlapping window self-attention with optional cyclic shift.

    Ablation baseline only. The map is zero-padded up to a multiple of the
    window; padded keys are masked out of every softmax. A cyclic shift rolls
    the map by -shift before partitioning and back after (no extra
    cross-boundary masking).
    """

    def __init__(self, embed_dim, num_heads, window_size, shift=0,
                 rng=None, dtype=np.float32):
        if window_size < 1:
            raise ConfigError(f"window_size must be positive, got {window_size}")
        if not 0 <= shift < window_size:
            raise ConfigError(f"shift {shift} must lie in [0, {window_size})")
        if embed_dim % num_heads:
            raise ConfigError(
                f"num_heads {num_heads} must divide embed_dim {embed_dim}")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.shift = shift
        rng = rng or np.random.default_rng(0)
        d = embed_dim
        side = 2 * window_size - 1
        self.wq = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wk = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wv = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.wo = Tensor(_trunc_normal(rng, (d, d), dtype=dtype), requires_grad=True)
        self.bias_table = Tensor(
            _trunc_normal(rng, (num_heads, side * side), dtype=dtype),
            requires_grad=True)

    def parameters(self):
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
                "bias_table": self.bias_table}

    def _rel_index(self):
        ws = self.window_size
        side = 2 * ws - 1
        pos = np.arange(ws * ws)
        py, px = pos // ws, pos % ws
        dy = py[:, None] - py[None, :] + ws - 1
        dx = px[:, None] - px[None, :] + ws - 1
        return (dy * side + dx).ravel()

    def __call__(self, x: Tensor, h, w):
        ws, heads, d = self.window_size, self.num_heads, self.embed_dim
        if x.ndim != 2 or x.shape[0] != h * w or x.shape[1] != d:
            raise ShapeError(
                f"expected ({h * w}, {d}) input for a {h}x{w} grid, got {x.shape}")
        dh = d // heads
        xm = T.reshape(x, (h, w, d))
        if self.shift:
            xm = T.roll(T.roll(xm, -self.shift, 0), -self.shift, 1)
        ph = (-h) % ws
        pw = (-w) % ws
        hp, wp = h + ph, w + pw
        if ph or pw:
            xm = T.pad_zero(xm, ((0, ph), (0, pw), (0, 0)))
        nh, nw = hp // ws, wp // ws
        nwin = nh * nw
        t = ws * ws
        xw = T.reshape(T.transpose(T.reshape(xm, (nh, ws, nw, ws, d)),
                                   (0, 2, 1, 3, 4)), (nwin * t, d))

        q = T.matmul(xw, self.wq)
        k = T.matmul(xw, self.wk)
        v = T.matmul(xw, self.wv)

        def heads_first(z):
            return T.reshape(T.transpose(T.reshape(z, (nwin, t, heads, dh)),
                                         (0, 2, 1, 3)), (nwin * heads, t, dh))

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        logits = T.bmm(q, T.transpose(k, (0, 2, 1)))

        bias = T.reshape(T.gather(self.bias_table, self._rel_index(), axis=1),
                         (1, heads, t, t))
        logits = T.reshape(logits, (nwin, heads, t, t)) + bias
        logits = logits * (1.0 / np.sqrt(dh))

        # mask padded keys out of every row; a -1e9 logit survives the later
        # softmax shift where -inf would poison padded-query rows
        valid = np.ones((hp, wp), dtype=x.dtype)
        valid[h:, :] = 0
        valid[:, w:] = 0
        vwin = valid.reshape(nh, ws, nw, ws).transpose(0, 2, 1, 3).reshape(nwin, t)
        mask = Tensor((vwin - 1.0)[:, None, None, :] * 1e9)
        logits = logits + mask

        p = T.softmax(T.reshape(logits, (nwin * heads, t, t)), axis=-1)
        out = T.bmm(p, v)
        out = T.reshape(T.transpose(T.reshape(out, (nwin, heads, t, dh)),
                                    (0, 2, 1, 3)), (nwin, t, d))
        xm = T.reshape(T.transpose(T.reshape(out, (nh, nw, ws, ws, d)),
                                   (0, 2, 1, 3, 4)), (hp, wp, d))
        if ph:
            xm = T.narrow(xm, 0, 0, h)
        if pw:
            xm = T.narrow(xm, 1, 0, w)
        if self.shift:
            xm = T.roll(T.roll(xm, self.shift, 0), self.shift, 1)
        return T.matmul(T.reshape(xm, (h * w, d)), self.wo)
