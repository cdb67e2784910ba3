# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled inner loops: im2col/col2im and the regional attention core.

Contracts match the numpy fallbacks in kernels.py exactly; the test suite
diffs the two backends elementwise. float32 and float64 via a fused type.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef fused real:
    float
    double


def _dtype_of(arr):
    return np.asarray(arr).dtype


def im2col(real[:, :, ::1] x, int kh, int kw, int stride, int pad, int ho, int wo):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    out_np = np.zeros((c * kh * kw, ho * wo), dtype=_dtype_of(x))
    cdef real[:, ::1] cols = out_np
    cdef Py_ssize_t ci, ky, kx, oy, ox, iy, ix, row
    for ci in range(c):
        for ky in range(kh):
            for kx in range(kw):
                row = (ci * kh + ky) * kw + kx
                for oy in range(ho):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(wo):
                        ix = ox * stride + kx - pad
                        if 0 <= ix < w:
                            cols[row, oy * wo + ox] = x[ci, iy, ix]
    return out_np


def col2im(real[:, ::1] cols, int c, int h, int w, int kh, int kw,
           int stride, int pad, int ho, int wo):
    out_np = np.zeros((c, h, w), dtype=_dtype_of(cols))
    cdef real[:, :, ::1] img = out_np
    cdef Py_ssize_t ci, ky, kx, oy, ox, iy, ix, row
    for ci in range(c):
        for ky in range(kh):
            for kx in range(kw):
                row = (ci * kh + ky) * kw + kx
                for oy in range(ho):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(wo):
                        ix = ox * stride + kx - pad
                        if 0 <= ix < w:
                            img[ci, iy, ix] += cols[row, oy * wo + ox]
    return out_np


def regional_forward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                     real[:, :, ::1] bias, cnp.int64_t[:, ::1] idx, double scale):
    cdef Py_ssize_t heads = q.shape[0], n = q.shape[1], dh = q.shape[2]
    cdef Py_ssize_t m = idx.shape[1]
    dt = _dtype_of(q)
    out_np = np.zeros((heads, n, dh), dtype=dt)
    probs_np = np.empty((heads, n, m), dtype=dt)
    cdef real[:, :, ::1] out = out_np
    cdef real[:, :, ::1] probs = probs_np
    cdef Py_ssize_t hi, i, j, d, src
    cdef double acc, mx, s, p
    for hi in range(heads):
        for i in range(n):
            mx = -1e300
            for j in range(m):
                src = idx[i, j]
                acc = 0.0
                for d in range(dh):
                    acc += q[hi, i, d] * k[hi, src, d]
                acc = (acc + bias[hi, i, j]) * scale
                probs[hi, i, j] = <real> acc
                if acc > mx:
                    mx = acc
            s = 0.0
            for j in range(m):
                p = exp(probs[hi, i, j] - mx)
                probs[hi, i, j] = <real> p
                s += p
            for j in range(m):
                p = probs[hi, i, j] / s
                probs[hi, i, j] = <real> p
                src = idx[i, j]
                for d in range(dh):
                    out[hi, i, d] += <real> (p * v[hi, src, d])
    return out_np, probs_np


def regional_backward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                      cnp.int64_t[:, ::1] idx, double scale,
                      real[:, :, ::1] probs, real[:, :, ::1] gout):
    cdef Py_ssize_t heads = q.shape[0], n = q.shape[1], dh = q.shape[2]
    cdef Py_ssize_t m = idx.shape[1]
    dt = _dtype_of(q)
    gq_np = np.zeros((heads, n, dh), dtype=dt)
    gk_np = np.zeros((heads, n, dh), dtype=dt)
    gv_np = np.zeros((heads, n, dh), dtype=dt)
    gbias_np = np.empty((heads, n, m), dtype=dt)
    gp_np = np.empty(m, dtype=np.float64)
    cdef real[:, :, ::1] gq = gq_np
    cdef real[:, :, ::1] gk = gk_np
    cdef real[:, :, ::1] gv = gv_np
    cdef real[:, :, ::1] gbias = gbias_np
    cdef double[::1] gp = gp_np
    cdef Py_ssize_t hi, i, j, d, src
    cdef double acc, dotsum, gl, p
    for hi in range(heads):
        for i in range(n):
            dotsum = 0.0
            for j in range(m):
                src = idx[i, j]
                acc = 0.0
                for d in range(dh):
                    acc += gout[hi, i, d] * v[hi, src, d]
                gp[j] = acc
                dotsum += acc * probs[hi, i, j]
            for j in range(m):
                src = idx[i, j]
                p = probs[hi, i, j]
                gl = p * (gp[j] - dotsum) * scale
                gbias[hi, i, j] = <real> gl
                for d in range(dh):
                    gq[hi, i, d] += <real> (gl * k[hi, src, d])
                    gk[hi, src, d] += <real> (gl * q[hi, i, d])
                    gv[hi, src, d] += <real> (p * gout[hi, i, d])
    return gq_np, gk_np, gv_np, gbias_np
