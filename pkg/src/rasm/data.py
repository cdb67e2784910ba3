"""Synthetic shadow triples, image file I/O, and augmentation.

A sample is (shadow image, binary mask, shadow-free ground truth). Synthetic
samples darken a procedural texture under a soft polygon matte:

    shadow = gt * (gain + (1 - gain) * (1 - matte)) - ambient * matte

so matte=0 pixels keep the texture and matte=1 pixels get the full
per-channel gain plus an ambient dip. Everything is a pure function of
(seed, index).

Directory layout for materialized datasets: root/{shadow,mask,gt}/NAME.png.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ImageFormatError, ShapeError


@dataclass
class ShadowSample:
    shadow: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray    # (1, H, W) in {0, 1}
    gt: np.ndarray      # (3, H, W) in [0, 1]
    name: str = ""

    def validate(self):
        if self.shadow.ndim != 3 or self.shadow.shape[0] != 3:
            raise ShapeError(f"shadow must be (3, H, W), got {self.shadow.shape}")
        if self.gt.shape != self.shadow.shape:
            raise ShapeError(
                f"gt shape {self.gt.shape} != shadow shape {self.shadow.shape}")
        if self.mask.shape != (1,) + self.shadow.shape[1:]:
            raise ShapeError(f"mask must be (1, H, W), got {self.mask.shape}")
        for arr, label in ((self.shadow, "shadow"), (self.gt, "gt")):
            if arr.min() < 0 or arr.max() > 1:
                raise ShapeError(f"{label} values outside [0, 1]")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ShapeError("mask must be strictly binary")
        return self


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    size: int = 64
    textures: tuple = ("gradient", "checker", "noise")
    vertices: tuple = (3, 8)
    gain: tuple = (0.2, 0.7)      # per-channel darkening factor range
    ambient: tuple = (0.0, 0.05)  # additive dip range
    penumbra: tuple = (0.5, 3.0)  # matte blur sigma range, pixels

    def __post_init__(self):
        if self.size < 8:
            raise ConfigError(f"size must be >= 8, got {self.size}")
        if not self.textures or any(t not in ("gradient", "checker", "noise")
                                    for t in self.textures):
            raise ConfigError(f"unknown texture family in {self.textures}")
        if not 3 <= self.vertices[0] <= self.vertices[1]:
            raise ConfigError(f"bad vertex range {self.vertices}")
        if not 0 < self.gain[0] <= self.gain[1] <= 1:
            raise ConfigError(f"gain range {self.gain} must lie in (0, 1]")
        if not 0 <= self.ambient[0] <= self.ambient[1]:
            raise ConfigError(f"bad ambient range {self.ambient}")
        if not 0 <= self.penumbra[0] <= self.penumbra[1]:
            raise ConfigError(f"penumbra range {self.penumbra} must be >= 0")


# -- procedural textures --------------------------------------------------
#
# Kept luminance-stationary (bounded swing around a mid base) so darkened
# regions stay measurably darker than unshadowed ones for any polygon
# placement.


def _tex_gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((3, size, size))
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    for c in range(3):
        base = rng.uniform(0.45, 0.75)
        amp = rng.uniform(0.05, 0.18)
        img[c] = base + amp * (ramp - 0.5) * 2
    return img


def _tex_checker(rng, size):
    cell = int(rng.integers(4, max(5, size // 4)))
    oy, ox = rng.integers(0, cell, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    tile = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    c0 = rng.uniform(0.35, 0.6, size=3)
    c1 = rng.uniform(0.6, 0.85, size=3)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * tile


def _tex_noise(rng, size):
    # value noise: coarse random grid, bilinear upsample, two-color mix
    coarse = int(rng.integers(3, 7))
    grid = rng.random((coarse, coarse))
    pos = np.linspace(0, coarse - 1, size)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, coarse - 1)
    f = pos - i0
    a = grid[np.ix_(i0, i0)]
    b = grid[np.ix_(i0, i1)]
    c = grid[np.ix_(i1, i0)]
    d = grid[np.ix_(i1, i1)]
    fy = f[:, None]
    fx = f[None, :]
    field_ = (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
              + c * fy * (1 - fx) + d * fy * fx)
    c0 = rng.uniform(0.35, 0.6, size=3)
    c1 = rng.uniform(0.6, 0.85, size=3)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * field_[None]


_TEXTURES = {"gradient": _tex_gradient, "checker": _tex_checker, "noise": _tex_noise}


def _polygon_matte(rng, size, vertices):
    """Hard {0,1} raster of a random star-convex polygon (even-odd rule)."""
    k = int(rng.integers(vertices[0], vertices[1] + 1))
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.15, 0.4, size=k) * size
    py = cy + radii * np.sin(angles)
    px = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    inside = np.zeros((size, size), dtype=bool)
    for i in range(k):
        y1, x1 = py[i], px[i]
        y2, x2 = py[(i + 1) % k], px[(i + 1) % k]
        crosses = (y1 > yy) != (y2 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xx < xi)
    return inside.astype(np.float64)


def generate_sample(cfg: SynthConfig, index) -> ShadowSample:
    """Deterministic synthetic triple for (cfg.seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(index)]))
    family = cfg.textures[int(rng.integers(len(cfg.textures)))]
    gt = np.clip(_TEXTURES[family](rng, cfg.size), 0.0, 1.0)

    # redraw until the thresholded mask is neither empty nor wall-to-wall;
    # the rng stream advances deterministically so (seed, index) still pins
    # the sample
    for _ in range(50):
        hard = _polygon_matte(rng, cfg.size, cfg.vertices)
        sigma = rng.uniform(*cfg.penumbra)
        matte = np.clip(gaussian_filter(hard, sigma=sigma), 0.0, 1.0) \
            if sigma > 0 else hard
        cover = (matte > 0.5).mean()
        if 0.01 <= cover <= 0.9:
            break

    gain = rng.uniform(cfg.gain[0], cfg.gain[1], size=3)[:, None, None]
    ambient = rng.uniform(*cfg.ambient)
    shadow = gt * (gain + (1 - gain) * (1 - matte[None])) - ambient * matte[None]
    shadow = np.clip(shadow, 0.0, 1.0)
    mask = (matte > 0.5)[None].astype(np.float32)
    return ShadowSample(shadow.astype(np.float32), mask,
                        gt.astype(np.float32), f"synth_{index:05d}").validate()


def synth_dataset(cfg: SynthConfig, count):
    return [generate_sample(cfg, i) for i in range(count)]


# -- file I/O --------------------------------------------------------------


def save_image(img, path):
    """Write a (3,H,W) or (1,H,W)/(H,W) float image as 8-bit PNG/PPM/PGM."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ShapeError(f"cannot save image of shape {arr.shape}")
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if q.shape[0] == 1:
        pil = Image.fromarray(q[0], mode="L")
    else:
        pil = Image.fromarray(q.transpose(1, 2, 0), mode="RGB")
    pil.save(path)


def load_image(path):
    """Read an 8-bit PNG/PPM/PGM into (C, H, W) float32 in [0, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image: {path}")
    try:
        pil = Image.open(path)
        pil.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ImageFormatError(f"malformed image file {path}: {e}") from None
    if pil.mode in ("I", "I;16", "I;16B", "F"):
        raise ImageFormatError(
            f"unsupported bit depth in {path} (mode {pil.mode}); 8-bit only")
    if pil.mode == "P":
        pil = pil.convert("RGB")
    if pil.mode == "RGBA":
        pil = pil.convert("RGB")
    if pil.mode not in ("RGB", "L"):
        raise ImageFormatError(f"unsupported image mode {pil.mode} in {path}")
    arr = np.asarray(pil, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_sample(root, sample: ShadowSample):
    for sub in ("shadow", "mask", "gt"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    save_image(sample.shadow, os.path.join(root, "shadow", sample.name + ".png"))
    save_image(sample.mask, os.path.join(root, "mask", sample.name + ".png"))
    save_image(sample.gt, os.path.join(root, "gt", sample.name + ".png"))


def load_sample(root, name) -> ShadowSample:
    shadow = load_image(os.path.join(root, "shadow", name + ".png"))
    mask = load_image(os.path.join(root, "mask", name + ".png"))
    gt = load_image(os.path.join(root, "gt", name + ".png"))
    if mask.shape[0] == 3:
        mask = mask[:1]
    mask = (mask > 0.5).astype(np.float32)
    if shadow.shape[0] != 3 or gt.shape[0] != 3:
        raise ImageFormatError(f"sample {name}: shadow/gt must be RGB")
    return ShadowSample(shadow, mask, gt, name).validate()


def list_samples(root):
    d = os.path.join(root, "shadow")
    if not os.path.isdir(d):
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    return sorted(os.path.splitext(f)[0] for f in os.listdir(d)
                  if f.endswith(".png"))


class DirectoryDataset:
    """ISTD-style triple directory; loads lazily by index."""

    def __init__(self, root):
        self.root = root
        self.names = list_samples(root)
        if not self.names:
            raise FileNotFoundError(f"no samples under {root}")

    def __len__(self):
        return len(self.names)

    def __getitem__(self, i):
        return load_sample(self.root, self.names[i])


# -- augmentation -----------------------------------------------------------


def _rgb_to_hsv(rgb):
    # channels-first, vectorized; h in [0,1)
    r, g, b = rgb
    mx = rgb.max(axis=0)
    mn = rgb.min(axis=0)
    diff = mx - mn
    h = np.zeros_like(mx)
    nz = diff > 0
    rmax = nz & (mx == r)
    gmax = nz & (mx == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / diff[rmax]) % 6
    h[gmax] = (b - r)[gmax] / diff[gmax] + 2
    h[bmax] = (r - g)[bmax] / diff[bmax] + 4
    h /= 6.0
    s = np.where(mx > 0, diff / np.maximum(mx, 1e-12), 0.0)
    return np.stack([h, s, mx])


def _hsv_to_rgb(hsv):
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.select([i == k for k in range(6)], [c[0] for c in choices])
    g = np.select([i == k for k in range(6)], [c[1] for c in choices])
    b = np.select([i == k for k in range(6)], [c[2] for c in choices])
    return np.stack([r, g, b])


def _hsv_jitter(img, dh, sf):
    hsv = _rgb_to_hsv(img.astype(np.float64))
    hsv[0] = (hsv[0] + dh) % 1.0
    hsv[1] = np.clip(hsv[1] * sf, 0.0, 1.0)
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0).astype(img.dtype)


def augment(sample: ShadowSample, rng, mixup_partner=None, hsv=False):
    """Shared geometric transforms on the triple; optional MixUp/HSV extras.

    Horizontal flip, vertical flip, and a random 90-degree rotation each
    apply with probability 0.5, identically to shadow, mask, and gt. MixUp
    (convex image blend, union mask) runs only when a partner is supplied;
    HSV jitter (hue +-0.05, saturation x[0.8,1.2], same transform to shadow
    and gt) only when ``hsv`` is set.
    """
    shadow, mask, gt = sample.shadow, sample.mask, sample.gt
    name = sample.name
    if mixup_partner is not None:
        lam = float(rng.beta(1.0, 1.0))
        shadow = lam * shadow + (1 - lam) * mixup_partner.shadow
        gt = lam * gt + (1 - lam) * mixup_partner.gt
        mask = np.maximum(mask, mixup_partner.mask)
    if hsv:
        dh = rng.uniform(-0.05, 0.05)
        sf = rng.uniform(0.8, 1.2)
        shadow = _hsv_jitter(shadow, dh, sf)
        gt = _hsv_jitter(gt, dh, sf)
    if rng.random() < 0.5:
        shadow, mask, gt = (np.ascontiguousarray(a[..., ::-1])
                            for a in (shadow, mask, gt))
    if rng.random() < 0.5:
        shadow, mask, gt = (np.ascontiguousarray(a[:, ::-1])
                            for a in (shadow, mask, gt))
    if rng.random() < 0.5:
        k = int(rng.integers(1, 4))
        shadow, mask, gt = (np.ascontiguousarray(np.rot90(a, k, axes=(1, 2)))
                            for a in (shadow, mask, gt))
    return ShadowSample(shadow, mask, gt, name)


def random_crop(sample: ShadowSample, size, rng) -> ShadowSample:
    """Cut one shared size x size window from all three maps."""
    h, w = sample.shadow.shape[1:]
    if size > h or size > w:
        raise ShapeError(f"crop {size} exceeds image {h}x{w}")
    oy = int(rng.integers(0, h - size + 1))
    ox = int(rng.integers(0, w - size + 1))
    sl = np.s_[:, oy:oy + size, ox:ox + size]
    return ShadowSample(np.ascontiguousarray(sample.shadow[sl]),
                        np.ascontiguousarray(sample.mask[sl]),
                        np.ascontiguousarray(sample.gt[sl]), sample.name)
