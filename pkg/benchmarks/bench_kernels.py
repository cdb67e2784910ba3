"""Timing comparison: compiled kernels vs the numpy fallback.

Runs each hot kernel (im2col, col2im, regional attention forward and
backward) under both backends on identical inputs, checks agreement, and
prints per-call times with the speedup. Invoke from the repo root:

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from rasm import kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _bench(name, fn, repeat, results):
    times = {}
    outs = {}
    for be in ("numpy", "native"):
        kernels.set_backend(be)
        times[be], outs[be] = _time(fn, repeat)
    kernels.set_backend("auto")
    a, b = outs["numpy"], outs["native"]
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    dev = max(float(np.abs(x - y).max()) for x, y in zip(a, b))
    results.append((name, times["numpy"], times["native"], dev))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    results = []

    # conv-sized im2col / col2im: 64 channels at 128x128, 3x3 window
    c, h, w, k = 64, 128, 128, 3
    x = rng.normal(size=(c, h, w)).astype(np.float32)
    _bench("im2col 64x128x128 k3", lambda: kernels.im2col(x, k, k, 1, 1, h, w),
           args.repeat, results)
    cols = kernels.im2col(x, k, k, 1, 1, h, w)
    _bench("col2im 64x128x128 k3",
           lambda: kernels.col2im(cols, c, h, w, k, k, 1, 1, h, w),
           args.repeat, results)

    # regional attention at the default bottleneck scale: 32x32 map,
    # 8 heads of 32 dims, r=11
    heads, n, d, r = 8, 32 * 32, 32, 11
    q = rng.normal(size=(heads, n, d)).astype(np.float32)
    kk = rng.normal(size=(heads, n, d)).astype(np.float32)
    v = rng.normal(size=(heads, n, d)).astype(np.float32)
    bias = rng.normal(size=(heads, n, r * r)).astype(np.float32)
    idx = rng.integers(0, n, size=(n, r * r))
    scale = 1.0 / np.sqrt(d)
    _bench("regional fwd 8h 1024n r11",
           lambda: kernels.regional_forward(q, kk, v, bias, idx, scale),
           args.repeat, results)
    _, probs = kernels.regional_forward(q, kk, v, bias, idx, scale)
    gout = rng.normal(size=(heads, n, d)).astype(np.float32)
    _bench("regional bwd 8h 1024n r11",
           lambda: kernels.regional_backward(q, kk, v, idx, scale, probs, gout),
           args.repeat, results)

    print(f"{'kernel':<28}{'numpy':>10}{'native':>10}{'speedup':>9}"
          f"{'max dev':>11}")
    for name, tn, tc, dev in results:
        print(f"{name:<28}{tn * 1e3:>8.2f}ms{tc * 1e3:>8.2f}ms"
              f"{tn / tc:>8.2f}x{dev:>11.2e}")


if __name__ == "__main__":
    main()
