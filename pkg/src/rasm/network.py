"""Encoder-decoder shadow-removal network.

Pipeline: 1x1 projection of the (image, mask) stack -> L encoder stages of
channel-attention blocks with stride-2 downsampling -> regional-attention
blocks at the bottleneck -> mirrored decoder with skip concatenation and 1x1
fusion -> 1x1 projection to a 3-channel residual added onto the input image.

Also hosts the analyzer: ``count_params``/``count_flops`` enumerate costs
from the config alone (never from a built model), so tests can cross-check
them against the real parameter store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, RegionalAttention, _trunc_normal
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3
    base_channels: int = 32
    multipliers: tuple = (1, 2, 4)
    ca_blocks: int = 2
    ram_blocks: int = 4
    mlp_ratio: int = 4
    ca_reduction: int = 4
    num_heads: int = 8
    region_size: int = 11
    dilation: int = 2
    zero_head: bool = True  # zero-init the output projection (identity start)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if len(self.multipliers) != self.depth:
            raise ConfigError(
                f"need {self.depth} stage multipliers, got {len(self.multipliers)}")
        if any(b <= a for a, b in zip(self.multipliers, self.multipliers[1:])) \
                and list(self.multipliers) != sorted(self.multipliers):
            raise ConfigError(f"multipliers must be nondecreasing: {self.multipliers}")
        for w in self.stage_widths + [self.bottleneck_width]:
            if w % self.ca_reduction:
                raise ConfigError(
                    f"channel width {w} not divisible by ca_reduction {self.ca_reduction}")
        if self.bottleneck_width % self.num_heads:
            raise ConfigError(
                f"num_heads {self.num_heads} must divide bottleneck width "
                f"{self.bottleneck_width}")
        self.attention  # validates region_size/dilation at construction time

    @property
    def stage_widths(self):
        return [self.base_channels * m for m in self.multipliers]

    @property
    def bottleneck_width(self):
        return 2 * self.base_channels * self.multipliers[-1]

    @property
    def attention(self):
        return AttentionConfig(embed_dim=self.bottleneck_width,
                               num_heads=self.num_heads,
                               region_size=self.region_size,
                               dilation=self.dilation)


# -- layers --------------------------------------------------------------


class Conv2d:
    def __init__(self, cin, cout, k, stride=1, padding=0, rng=None,
                 dtype=np.float32, zero_init=False):
        rng = rng or np.random.default_rng(0)
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = _trunc_normal(rng, (cout, cin, k, k), dtype=dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride, self.padding = stride, padding

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x):
        y = T.conv2d(x, self.weight, self.stride, self.padding)
        return y + T.reshape(self.bias, (self.bias.shape[0], 1, 1))


class ConvTranspose2d:
    def __init__(self, cin, cout, k, stride, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(_trunc_normal(rng, (cin, cout, k, k), dtype=dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x):
        y = T.conv_transpose2d(x, self.weight, self.stride)
        return y + T.reshape(self.bias, (self.bias.shape[0], 1, 1))


class LayerNormChannels:
    """Layer norm over the channel axis at every spatial position."""

    def __init__(self, c, dtype=np.float32):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def seq(self, x):
        # (n, c) sequences normalize along the feature axis directly
        return T.layer_norm(x, self.gamma, self.beta, axis=-1)

    def __call__(self, x):
        c, h, w = x.shape
        s = T.transpose(T.reshape(x, (c, h * w)), (1, 0))
        s = T.layer_norm(s, self.gamma, self.beta, axis=-1)
        return T.reshape(T.transpose(s, (1, 0)), (c, h, w))


class ChannelAttention:
    """Squeeze-excitation gate: pooled descriptor -> bottleneck -> sigmoid."""

    def __init__(self, c, reduction, rng=None, dtype=np.float32):
        if c % reduction:
            raise ConfigError(f"channels {c} not divisible by reduction {reduction}")
        rng = rng or np.random.default_rng(0)
        cr = c // reduction
        self.w1 = Tensor(_trunc_normal(rng, (c, cr), dtype=dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(cr, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(_trunc_normal(rng, (cr, c), dtype=dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, x):
        c = x.shape[0]
        s = T.reshape(T.global_avg_pool(x), (1, c))
        g = T.sigmoid(T.linear(T.gelu(T.linear(s, self.w1, self.b1)),
                               self.w2, self.b2))
        return x * T.reshape(g, (c, 1, 1))


class Mlp:
    def __init__(self, c, ratio, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        ch = c * ratio
        self.w1 = Tensor(_trunc_normal(rng, (c, ch), dtype=dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(_trunc_normal(rng, (ch, c), dtype=dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, x):
        return T.mlp(x, self.w1, self.b1, self.w2, self.b2)


def _to_seq(x):
    c, h, w = x.shape
    return T.transpose(T.reshape(x, (c, h * w)), (1, 0))


def _to_map(x, h, w):
    n, c = x.shape
    return T.reshape(T.transpose(x, (1, 0)), (c, h, w))


class CABlock:
    """Two-residual block: channel-attention branch, then a GELU(MLP) branch."""

    def __init__(self, c, mlp_ratio, reduction, rng=None, dtype=np.float32):
        self.ln1 = LayerNormChannels(c, dtype)
        self.ca = ChannelAttention(c, reduction, rng, dtype)
        self.ln2 = LayerNormChannels(c, dtype)
        self.mlp = Mlp(c, mlp_ratio, rng, dtype)

    def parameters(self):
        out = {}
        for name, mod in (("ln1", self.ln1), ("ca", self.ca),
                          ("ln2", self.ln2), ("mlp", self.mlp)):
            for k, v in mod.parameters().items():
                out[f"{name}.{k}"] = v
        return out

    def __call__(self, x):
        c, h, w = x.shape
        t = self.ca(self.ln1(x)) + x
        m = T.gelu(self.mlp(self.ln2.seq(_to_seq(t))))
        return _to_map(m, h, w) + t


class RAMBlock:
    """Regional-attention block: CA(attention(LN(x))) + x, then the MLP branch."""

    def __init__(self, c, attn_cfg, mlp_ratio, reduction, rng=None, dtype=np.float32):
        self.ln1 = LayerNormChannels(c, dtype)
        self.attn = RegionalAttention(attn_cfg, rng, dtype)
        self.ca = ChannelAttention(c, reduction, rng, dtype)
        self.ln2 = LayerNormChannels(c, dtype)
        self.mlp = Mlp(c, mlp_ratio, rng, dtype)

    def parameters(self):
        out = {}
        for name, mod in (("ln1", self.ln1), ("attn", self.attn), ("ca", self.ca),
                          ("ln2", self.ln2), ("mlp", self.mlp)):
            for k, v in mod.parameters().items():
                out[f"{name}.{k}"] = v
        return out

    def __call__(self, x):
        c, h, w = x.shape
        a = self.attn(self.ln1.seq(_to_seq(x)), h, w)
        t = self.ca(_to_map(a, h, w)) + x
        m = T.gelu(self.mlp(self.ln2.seq(_to_seq(t))))
        return _to_map(m, h, w) + t


class RASM:
    """The full shadow-removal model. Output = input image + learned residual."""

    def __init__(self, config: ModelConfig = None, seed=0, dtype=np.float32):
        self.config = config or ModelConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        widths = cfg.stage_widths
        bw = cfg.bottleneck_width

        self.proj_in = Conv2d(4, widths[0], 1, rng=rng, dtype=dtype)
        self.enc = []
        self.down = []
        for l in range(cfg.depth):
            self.enc.append([CABlock(widths[l], cfg.mlp_ratio, cfg.ca_reduction,
                                     rng, dtype) for _ in range(cfg.ca_blocks)])
            nxt = widths[l + 1] if l + 1 < cfg.depth else bw
            self.down.append(Conv2d(widths[l], nxt, 4, stride=2, padding=1,
                                    rng=rng, dtype=dtype))
        self.ram = [RAMBlock(bw, cfg.attention, cfg.mlp_ratio, cfg.ca_reduction,
                             rng, dtype) for _ in range(cfg.ram_blocks)]
        self.up = []
        self.fuse = []
        self.dec = []
        for l in reversed(range(cfg.depth)):
            src = widths[l + 1] if l + 1 < cfg.depth else bw
            self.up.append(ConvTranspose2d(src, widths[l], 2, 2, rng, dtype))
            self.fuse.append(Conv2d(2 * widths[l], widths[l], 1, rng=rng, dtype=dtype))
            self.dec.append([CABlock(widths[l], cfg.mlp_ratio, cfg.ca_reduction,
                                     rng, dtype) for _ in range(cfg.ca_blocks)])
        self.proj_out = Conv2d(widths[0], 3, 1, rng=rng, dtype=dtype,
                               zero_init=cfg.zero_head)

    def parameters(self):
        """Unique hierarchical path -> Tensor, in construction order."""
        out = {}

        def take(prefix, mod):
            for k, v in mod.parameters().items():
                out[f"{prefix}.{k}"] = v

        take("proj_in", self.proj_in)
        for l, blocks in enumerate(self.enc):
            for b, blk in enumerate(blocks):
                take(f"enc{l}.block{b}", blk)
            take(f"down{l}", self.down[l])
        for b, blk in enumerate(self.ram):
            take(f"ram{b}", blk)
        for i, l in enumerate(reversed(range(self.config.depth))):
            take(f"up{l}", self.up[i])
            take(f"fuse{l}", self.fuse[i])
            for b, blk in enumerate(self.dec[i]):
                take(f"dec{l}.block{b}", blk)
        take("proj_out", self.proj_out)
        return out

    def _check_size(self, i_s, i_m):
        if i_s.ndim != 3 or i_s.shape[0] != 3:
            raise ShapeError(f"image must be (3, H, W), got {i_s.shape}")
        if i_m.ndim != 3 or i_m.shape[0] != 1 or i_m.shape[1:] != i_s.shape[1:]:
            raise ShapeError(
                f"mask must be (1, {i_s.shape[1]}, {i_s.shape[2]}), got {i_m.shape}")
        f = 2 ** self.config.depth
        h, w = i_s.shape[1:]
        if h % f or w % f:
            raise ConfigError(
                f"spatial size {h}x{w} must be divisible by {f} (depth "
                f"{self.config.depth})")

    def __call__(self, i_s, i_m, training=True):
        i_s = i_s if isinstance(i_s, Tensor) else Tensor(i_s)
        i_m = i_m if isinstance(i_m, Tensor) else Tensor(i_m)
        self._check_size(i_s, i_m)
        x = self.proj_in(T.concat([i_s, i_m], axis=0))
        skips = []
        for l in range(self.config.depth):
            for blk in self.enc[l]:
                x = blk(x)
            skips.append(x)
            x = self.down[l](x)
        for blk in self.ram:
            x = blk(x)
        for i in range(self.config.depth):
            x = self.up[i](x)
            x = self.fuse[i](T.concat([x, skips.pop()], axis=0))
            for blk in self.dec[i]:
                x = blk(x)
        out = i_s + self.proj_out(x)
        if not training:
            out = Tensor(np.clip(out.data, 0.0, 1.0))
        return out

    def attention_map(self, i_s, i_m, query, block=0):
        """(offsets, coords, weights) of one bottleneck query's attention row."""
        from .attention import attention_map_dump
        i_s = i_s if isinstance(i_s, Tensor) else Tensor(i_s)
        i_m = i_m if isinstance(i_m, Tensor) else Tensor(i_m)
        self._check_size(i_s, i_m)
        if not 0 <= block < len(self.ram):
            raise ConfigError(f"block {block} out of range ({len(self.ram)} blocks)")
        with T.no_grad():
            x = self.proj_in(T.concat([i_s, i_m], axis=0))
            for l in range(self.config.depth):
                for blk in self.enc[l]:
                    x = blk(x)
                x = self.down[l](x)
            for blk in self.ram[:block]:
                x = blk(x)
            target = self.ram[block]
            c, h, w = x.shape
            seq = target.ln1.seq(_to_seq(x))
        return attention_map_dump(seq, target.attn, h, w, query)


# -- analyzer ------------------------------------------------------------
#
# Exact enumeration from the config, mirroring the construction above but
# never touching a built model. Convolutions and linear maps count
# out*in*k*k*positions MACs; attention counts n*r^2*head_dim*heads for the
# logits and the same for the value aggregation; norms, activations, biases
# and elementwise work are excluded, matching conventional meters.


def _ca_block_costs(c, h, w, mlp_ratio, reduction):
    n = h * w
    cr = c // reduction
    params = (4 * c                                   # two layer norms
              + c * cr + cr + cr * c + c              # channel-attention gate
              + c * (c * mlp_ratio) + c * mlp_ratio
              + (c * mlp_ratio) * c + c)              # mlp
    macs = c * cr + cr * c + 2 * n * c * c * mlp_ratio
    return params, macs


def _ram_block_costs(c, h, w, cfg: ModelConfig):
    n = h * w
    r = cfg.region_size
    p_ca, m_ca = _ca_block_costs(c, h, w, cfg.mlp_ratio, cfg.ca_reduction)
    params = p_ca + 4 * c * c + cfg.num_heads * (2 * r - 1) ** 2
    macs = m_ca + 4 * n * c * c + 2 * n * r * r * c
    return params, macs


def layer_costs(config: ModelConfig, h, w):
    """Per-layer (path, params, MACs) rows for an h x w input."""
    f = 2 ** config.depth
    if h % f or w % f:
        raise ConfigError(f"spatial size {h}x{w} must be divisible by {f}")
    widths = config.stage_widths
    bw = config.bottleneck_width
    rows = []
    rows.append(("proj_in", 4 * widths[0] + widths[0], h * w * 4 * widths[0]))
    sh, sw = h, w
    for l in range(config.depth):
        c = widths[l]
        for b in range(config.ca_blocks):
            p, m = _ca_block_costs(c, sh, sw, config.mlp_ratio, config.ca_reduction)
            rows.append((f"enc{l}.block{b}", p, m))
        nxt = widths[l + 1] if l + 1 < config.depth else bw
        sh, sw = sh // 2, sw // 2
        rows.append((f"down{l}", nxt * c * 16 + nxt, nxt * c * 16 * sh * sw))
    for b in range(config.ram_blocks):
        p, m = _ram_block_costs(bw, sh, sw, config)
        rows.append((f"ram{b}", p, m))
    for l in reversed(range(config.depth)):
        c = widths[l]
        src = widths[l + 1] if l + 1 < config.depth else bw
        rows.append((f"up{l}", src * c * 4 + c, src * c * 4 * sh * sw))
        sh, sw = sh * 2, sw * 2
        rows.append((f"fuse{l}", 2 * c * c + c, 2 * c * c * sh * sw))
        for b in range(config.ca_blocks):
            p, m = _ca_block_costs(c, sh, sw, config.mlp_ratio, config.ca_reduction)
            rows.append((f"dec{l}.block{b}", p, m))
    rows.append(("proj_out", widths[0] * 3 + 3, h * w * widths[0] * 3))
    return rows


def count_params(config: ModelConfig):
    # spatial size is irrelevant to the parameter count; any valid one works
    f = 2 ** config.depth
    return sum(p for _, p, _ in layer_costs(config, f, f))


def count_flops(config: ModelConfig, h, w):
    """Total FLOPs (= 2 x multiply-accumulates) for one forward pass."""
    return 2 * sum(m for _, _, m in layer_costs(config, h, w))


def profile_table(config: ModelConfig, h, w):
    """Plain-text per-layer breakdown: path, params, MACs."""
    rows = layer_costs(config, h, w)
    width = max(len(r[0]) for r in rows) + 2
    lines = [f"{'layer':<{width}}{'params':>12}{'MACs':>16}"]
    for path, p, m in rows:
        lines.append(f"{path:<{width}}{p:>12,}{m:>16,}")
    lines.append(f"{'total':<{width}}{count_params(config):>12,}"
                 f"{sum(m for _, _, m in rows):>16,}")
    lines.append(f"input {h}x{w}: {count_flops(config, h, w) / 1e9:.3f} GFLOPs, "
                 f"{count_params(config) / 1e6:.3f}M params")
    return "\n".join(lines)
