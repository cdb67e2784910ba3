"""Evaluation metrics: PSNR and SSIM in RGB, error measures in CIELAB,
each with shadow / non-shadow / whole-image variants driven by the mask.

The LAB pipeline is sRGB -> linear RGB -> XYZ (D65 white) -> L*a*b*. Two LAB
error variants are exposed side by side: rmse_lab is the literal
root-mean-square, mae_lab the mean absolute difference many comparisons
report under the same name. Everything here is plain numpy; nothing needs
gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import EvaluationError, ShapeError
from .tensor import Tensor

# sRGB <-> XYZ (D65), IEC 61966-2-1
_RGB2XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                     [0.2126729, 0.7151522, 0.0721750],
                     [0.0193339, 0.1191920, 0.9503041]])
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])

_DELTA = 6.0 / 29.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_chw(x, channels=3):
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != channels:
        raise ShapeError(f"expected ({channels}, H, W) array, got {a.shape}")
    return a


def _mask_plane(mask, shape):
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match image {shape}")
    return m > 0.5


def srgb_to_lab(img):
    """(3,H,W) sRGB in [0,1] -> (3,H,W) CIELAB. Clips input first."""
    rgb = np.clip(_as_chw(img), 0.0, 1.0)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = np.einsum("ij,jhw->ihw", _RGB2XYZ, lin) / _WHITE[:, None, None]
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz),
                 xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[0] = 116.0 * f[1] - 16.0
    lab[1] = 500.0 * (f[0] - f[1])
    lab[2] = 200.0 * (f[1] - f[2])
    return lab


def lab_to_srgb(lab):
    """Inverse of srgb_to_lab (for round-trip verification)."""
    lab = _as_chw(lab)
    fy = (lab[0] + 16.0) / 116.0
    fx = fy + lab[1] / 500.0
    fz = fy - lab[2] / 200.0
    f = np.stack([fx, fy, fz])
    xyz = np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0))
    xyz = xyz * _WHITE[:, None, None]
    lin = np.einsum("ij,jhw->ihw", _XYZ2RGB, xyz)
    lin = np.clip(lin, 0.0, None)
    return np.where(lin <= 0.0031308, lin * 12.92,
                    1.055 * lin ** (1.0 / 2.4) - 0.055)


def _lab_diff(pred, gt, mask):
    dp = srgb_to_lab(pred)
    dg = srgb_to_lab(gt)
    if dp.shape != dg.shape:
        raise ShapeError(f"shape mismatch: {dp.shape} vs {dg.shape}")
    diff = dp - dg
    if mask is not None:
        sel = _mask_plane(mask, dp.shape[1:])
        if not sel.any():
            raise EvaluationError("mask selects no pixels")
        diff = diff[:, sel]
    return diff


def rmse_lab(pred, gt, mask=None):
    """Root-mean-square LAB difference over selected pixels and channels."""
    diff = _lab_diff(pred, gt, mask)
    return float(np.sqrt(np.mean(diff * diff)))


def mae_lab(pred, gt, mask=None):
    """Mean absolute LAB difference over selected pixels and channels."""
    return float(np.mean(np.abs(_lab_diff(pred, gt, mask))))


def psnr(pred, gt, mask=None):
    """10 log10(1/MSE) in dB against a [0,1] range, capped at 100."""
    p = np.clip(_as_chw(pred), 0.0, 1.0)
    g = np.clip(_as_chw(gt), 0.0, 1.0)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {g.shape}")
    d = p - g
    if mask is not None:
        sel = _mask_plane(mask, p.shape[1:])
        if not sel.any():
            raise EvaluationError("mask selects no pixels")
        d = d[:, sel]
    mse = float(np.mean(d * d))
    if mse < 1e-10:
        return 100.0
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img, w):
    # separable valid-mode correlation with a 1-D window
    from numpy.lib.stride_tricks import sliding_window_view
    t = sliding_window_view(img, len(w), axis=0) @ w
    return sliding_window_view(t, len(w), axis=1) @ w


def ssim(pred, gt, mask=None):
    """Gaussian-window SSIM on [0,1] images, channel-averaged.

    Window statistics are population moments over an 11x11 sigma=1.5 window,
    computed only where the window fits (valid mode). The masked variant
    keeps windows whose center pixel is selected.
    """
    p = np.clip(_as_chw(pred), 0.0, 1.0)
    g = np.clip(_as_chw(gt), 0.0, 1.0)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {g.shape}")
    h, wd = p.shape[1:]
    if h < SSIM_WINDOW or wd < SSIM_WINDOW:
        raise ShapeError(f"image {h}x{wd} smaller than the {SSIM_WINDOW} window")
    win = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    pad = SSIM_WINDOW // 2
    sel = None
    if mask is not None:
        sel = _mask_plane(mask, (h, wd))[pad:h - pad, pad:wd - pad]
        if not sel.any():
            raise EvaluationError("mask selects no window centers")
    vals = []
    for ch in range(3):
        x, y = p[ch], g[ch]
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        mxx = _filter_valid(x * x, win)
        myy = _filter_valid(y * y, win)
        mxy = _filter_valid(x * y, win)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        m = ((2 * mx * my + c1) * (2 * cxy + c2)) / \
            ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(np.mean(m[sel]) if sel is not None else np.mean(m))
    return float(np.mean(vals))


# -- per-image records ----------------------------------------------------

RECORD_FIELDS = ("name",
                 "psnr_s", "psnr_ns", "psnr_all",
                 "ssim_s", "ssim_ns", "ssim_all",
                 "rmse_lab_s", "rmse_lab_ns", "rmse_lab_all",
                 "mae_lab_s", "mae_lab_ns", "mae_lab_all")


def metric_record(name, pred, gt, mask):
    """All S/NS/ALL metrics for one image as an ordered dict."""
    inv = 1.0 - np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    rec = {"name": name}
    for suffix, m in (("s", mask), ("ns", inv), ("all", None)):
        rec[f"psnr_{suffix}"] = psnr(pred, gt, m)
        rec[f"ssim_{suffix}"] = ssim(pred, gt, m)
        rec[f"rmse_lab_{suffix}"] = rmse_lab(pred, gt, m)
        rec[f"mae_lab_{suffix}"] = mae_lab(pred, gt, m)
    return rec


def records_to_csv(records):
    """Comma-separated table with a header row and a trailing mean row."""
    lines = [",".join(RECORD_FIELDS)]
    for rec in records:
        lines.append(",".join(
            rec["name"] if f == "name" else f"{rec[f]:.6f}" for f in RECORD_FIELDS))
    if records:
        means = {f: float(np.mean([r[f] for r in records]))
                 for f in RECORD_FIELDS[1:]}
        lines.append("mean," + ",".join(f"{means[f]:.6f}" for f in RECORD_FIELDS[1:]))
    return "\n".join(lines) + "\n"
