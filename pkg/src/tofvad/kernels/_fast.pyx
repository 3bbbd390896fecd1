# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: drop-in twin of `tofvad.kernels.ref`.

bg_update matches the numpy fallback bit-for-bit (identical per-pixel
expressions); col2im accumulates kernel offsets in the same row-major
order so conv results agree bitwise across backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isnan, NAN

cnp.import_array()

BACKEND_NAME = "cython"

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, int kh, int kw):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = hp - kh + 1, ow = wp - kw + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((n, c * kh * kw, oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, y, x, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = ch * kh * kw + i * kw + j
                        for y in range(oh):
                            for x in range(ow):
                                cols[b, row, y * ow + x] = xp[b, ch, y + i, x + j]
    return out


def col2im(floating[:, :, ::1] cols, int kh, int kw, int hp, int wp):
    cdef Py_ssize_t n = cols.shape[0], ckk = cols.shape[1], p = cols.shape[2]
    cdef Py_ssize_t c = ckk // (kh * kw)
    cdef Py_ssize_t oh = hp - kh + 1, ow = wp - kw + 1
    if ckk != c * kh * kw or p != oh * ow:
        raise ValueError("col2im: inconsistent column shape")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = out
    cdef Py_ssize_t b, ch, i, j, y, x, row
    with nogil:
        # offsets accumulate in row-major (i, j) order, matching ref.col2im
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        row = ch * kh * kw + i * kw + j
                        for y in range(oh):
                            for x in range(ow):
                                xp[b, ch, y + i, x + j] += cols[b, row, y * ow + x]
    return out


def conv_fwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w):
    """Direct cross-correlation of a padded input: no column matrix is
    materialized, so thin-output layers stay cache-resident.

    Each output plane is accumulated in place while it is hot in L1; the
    inner loop is a plain row fused-multiply-add the compiler vectorizes."""
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = hp - kh + 1, ow = wp - kw + 1
    if w.shape[1] != c:
        raise ValueError("conv_fwd: channel mismatch")
    if oh < 1 or ow < 1:
        raise ValueError("conv_fwd: kernel larger than padded input")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, f, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t b, ff, ch, i, j, yy, xx
    cdef floating wv, w0, w1, w2, w3, w4
    cdef floating* yrow
    cdef const floating* xrow
    with nogil:
        for b in range(n):
            for ff in range(f):
                for ch in range(c):
                    for i in range(kh):
                        if kw == 5:
                            # unrolled kernel row: one pass per input row
                            # instead of five
                            w0 = w[ff, ch, i, 0]
                            w1 = w[ff, ch, i, 1]
                            w2 = w[ff, ch, i, 2]
                            w3 = w[ff, ch, i, 3]
                            w4 = w[ff, ch, i, 4]
                            for yy in range(oh):
                                yrow = &y[b, ff, yy, 0]
                                xrow = &xp[b, ch, yy + i, 0]
                                for xx in range(ow):
                                    yrow[xx] += (w0 * xrow[xx]
                                                 + w1 * xrow[xx + 1]
                                                 + w2 * xrow[xx + 2]
                                                 + w3 * xrow[xx + 3]
                                                 + w4 * xrow[xx + 4])
                        else:
                            for j in range(kw):
                                wv = w[ff, ch, i, j]
                                for yy in range(oh):
                                    yrow = &y[b, ff, yy, 0]
                                    xrow = &xp[b, ch, yy + i, j]
                                    for xx in range(ow):
                                        yrow[xx] += wv * xrow[xx]
    return out


def conv_scatter(floating[:, :, :, ::1] g, floating[:, :, :, ::1] w,
                 int hp, int wp):
    """Adjoint of conv_fwd: scatter-add each output-side value through the
    kernel taps back onto a padded input-shaped array."""
    cdef Py_ssize_t n = g.shape[0], f = g.shape[1]
    cdef Py_ssize_t oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    if w.shape[0] != f:
        raise ValueError("conv_scatter: channel mismatch")
    if oh != hp - kh + 1 or ow != wp - kw + 1:
        raise ValueError("conv_scatter: output size does not match padded size")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xg = out
    cdef Py_ssize_t b, ff, ch, i, j, yy, xx
    cdef floating wv
    cdef floating* orow
    cdef const floating* grow
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ff in range(f):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[ff, ch, i, j]
                            for yy in range(oh):
                                orow = &xg[b, ch, yy + i, j]
                                grow = &g[b, ff, yy, 0]
                                for xx in range(ow):
                                    orow[xx] += wv * grow[xx]
    return out


def conv_dw(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] g,
            int kh, int kw):
    """Weight gradient of conv_fwd: one dot product per kernel tap.

    The dot product is accumulated in a row-length scratch vector so the hot
    loop is a vectorizable fused-multiply-add; the scalar reduction happens
    once per tap over that short vector."""
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t f = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    if g.shape[0] != n:
        raise ValueError("conv_dw: batch mismatch")
    if oh != hp - kh + 1 or ow != wp - kw + 1:
        raise ValueError("conv_dw: output size does not match padded size")
    if oh < 1 or ow < 1:
        raise ValueError("conv_dw: kernel larger than padded input")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((f, c, kh, kw), dtype=dtype)
    scratch = np.zeros(ow, dtype=dtype)
    cdef floating[:, :, :, ::1] dw = out
    cdef floating[::1] accv = scratch
    cdef Py_ssize_t b, ff, ch, i, j, yy, xx
    cdef floating s
    cdef floating* acc
    cdef const floating* grow
    cdef const floating* xrow
    with nogil:
        acc = &accv[0]
        for ff in range(f):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for xx in range(ow):
                            acc[xx] = 0
                        for b in range(n):
                            for yy in range(oh):
                                grow = &g[b, ff, yy, 0]
                                xrow = &xp[b, ch, yy + i, j]
                                for xx in range(ow):
                                    acc[xx] += grow[xx] * xrow[xx]
                        s = 0
                        for xx in range(ow):
                            s += acc[xx]
                        dw[ff, ch, i, j] = s
    return out


def maxpool2_fwd(floating[:, :, :, ::1] x):
    """2x2 max pooling, stride 2, floor semantics.

    Returns (y, idx) where idx holds the row-major position (0..3) of the
    winning element inside each window.  Ties go to the first element, so
    for finite inputs the result is bit-identical to the numpy fallback."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError("maxpool2_fwd: input smaller than the pooling window")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    yarr = np.empty((n, c, h2, w2), dtype=dtype)
    iarr = np.empty((n, c, h2, w2), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = yarr
    cdef unsigned char[:, :, :, ::1] idx = iarr
    cdef Py_ssize_t b, ch, i, j
    cdef floating v0, v1, v2, v3, best
    cdef unsigned char code
    cdef const floating* top
    cdef const floating* bot
    cdef floating* yrow
    cdef unsigned char* irow
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    top = &x[b, ch, 2 * i, 0]
                    bot = &x[b, ch, 2 * i + 1, 0]
                    yrow = &y[b, ch, i, 0]
                    irow = &idx[b, ch, i, 0]
                    for j in range(w2):
                        v0 = top[2 * j]
                        v1 = top[2 * j + 1]
                        v2 = bot[2 * j]
                        v3 = bot[2 * j + 1]
                        best = v0
                        code = 0
                        if v1 > best:
                            best = v1
                            code = 1
                        if v2 > best:
                            best = v2
                            code = 2
                        if v3 > best:
                            best = v3
                            code = 3
                        yrow[j] = best
                        irow[j] = code
    return yarr, iarr


def maxpool2_bwd(floating[:, :, :, ::1] g, unsigned char[:, :, :, ::1] idx,
                 int h, int w):
    """Gradient of maxpool2_fwd: routes each upstream value to the window
    element recorded in idx; every other input position (including rows and
    columns cropped by floor semantics) gets zero."""
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t h2 = g.shape[2], w2 = g.shape[3]
    if (idx.shape[0] != n or idx.shape[1] != c
            or idx.shape[2] != h2 or idx.shape[3] != w2):
        raise ValueError("maxpool2_bwd: index shape does not match gradient")
    if h // 2 != h2 or w // 2 != w2:
        raise ValueError("maxpool2_bwd: target size does not match gradient")
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, ch, i, j
    cdef unsigned char code
    cdef const floating* grow
    cdef const unsigned char* irow
    cdef floating* top
    cdef floating* bot
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    grow = &g[b, ch, i, 0]
                    irow = &idx[b, ch, i, 0]
                    top = &gx[b, ch, 2 * i, 0]
                    bot = &gx[b, ch, 2 * i + 1, 0]
                    for j in range(w2):
                        code = irow[j]
                        if code == 0:
                            top[2 * j] = grow[j]
                        elif code == 1:
                            top[2 * j + 1] = grow[j]
                        elif code == 2:
                            bot[2 * j] = grow[j]
                        else:
                            bot[2 * j + 1] = grow[j]
    return out


def bg_update(double[:, ::1] depth, unsigned char[:, ::1] valid,
              double[:, ::1] bg, double[:, ::1] cand,
              int[:, ::1] counter, int[:, ::1] invalid_run,
              double[:, ::1] drift, unsigned char[:, ::1] mask_out,
              double k, double k_kinect, double noise_floor,
              double delta_p_max, double alpha, int t_w, int n_h,
              bint reset_drift):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1]
    cdef Py_ssize_t y, x
    cdef double z, sigma, thr, new_bg, step
    with nogil:
        for y in range(h):
            for x in range(w):
                if reset_drift:
                    drift[y, x] = 0.0
                z = depth[y, x]
                if valid[y, x] == 0:
                    invalid_run[y, x] += 1
                    cand[y, x] = NAN
                    counter[y, x] = 0
                    if invalid_run[y, x] >= n_h:
                        bg[y, x] = NAN
                    mask_out[y, x] = 0
                elif isnan(bg[y, x]):
                    bg[y, x] = z
                    cand[y, x] = NAN
                    counter[y, x] = 0
                    invalid_run[y, x] = 0
                    mask_out[y, x] = 0
                else:
                    sigma = (k_kinect * (z * z)) / 1000.0
                    thr = k * sigma
                    if thr < noise_floor:
                        thr = noise_floor
                    if fabs(z - bg[y, x]) <= thr:
                        new_bg = (1.0 - alpha) * bg[y, x] + alpha * z
                        step = fabs(new_bg - bg[y, x])
                        if drift[y, x] + step <= delta_p_max:
                            bg[y, x] = new_bg
                            drift[y, x] += step
                        cand[y, x] = NAN
                        counter[y, x] = 0
                        invalid_run[y, x] = 0
                        mask_out[y, x] = 0
                    else:
                        if (not isnan(cand[y, x])) and fabs(z - cand[y, x]) <= thr:
                            counter[y, x] += 1
                        else:
                            counter[y, x] = 1
                        cand[y, x] = z
                        if counter[y, x] >= t_w:
                            bg[y, x] = cand[y, x]
                            cand[y, x] = NAN
                            counter[y, x] = 0
                        invalid_run[y, x] = 0
                        mask_out[y, x] = 1
