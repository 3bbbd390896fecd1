"""Pure-numpy kernels: the fallback backend for `tofvad.kernels`.

Semantics here are the contract; the compiled backend in `_fast.pyx` must
match them exactly (bit-for-bit for `bg_update`, same accumulation order
for `col2im`).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gather kh x kw patches of a padded (N, C, Hp, Wp) array.

    Returns (N, C*kh*kw, OH*OW) with OH = Hp-kh+1, OW = Wp-kw+1, laid out so
    that cols[n, c*kh*kw + i*kw + j, oh*OW + ow] == xp[n, c, oh+i, ow+j].
    """
    n, c, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    cols = np.empty((n, c, kh * kw, oh * ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j, :] = xp[:, :, i:i + oh, j:j + ow].reshape(n, c, oh * ow)
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols: np.ndarray, kh: int, kw: int, hp: int, wp: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patches back into (N, C, Hp, Wp).

    Accumulates kernel offsets in row-major (i, j) order; the compiled
    backend keeps the same order so results agree bitwise.
    """
    n, ckk, p = cols.shape
    c = ckk // (kh * kw)
    oh, ow = hp - kh + 1, wp - kw + 1
    if ckk != c * kh * kw or p != oh * ow:
        raise ValueError("col2im: inconsistent column shape")
    cols4 = cols.reshape(n, c, kh * kw, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + oh, j:j + ow] += cols4[:, :, i * kw + j]
    return out


def conv_fwd(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlation of a padded (N, C, Hp, Wp) input with (F, C, kh, kw)
    weights, as the im2col + matmul composition."""
    f, c, kh, kw = w.shape
    if xp.shape[1] != c:
        raise ValueError("conv_fwd: channel mismatch")
    n, _, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError("conv_fwd: kernel larger than padded input")
    cols = im2col(xp, kh, kw)
    y = np.matmul(w.reshape(f, c * kh * kw), cols)
    return np.ascontiguousarray(y.reshape(n, f, oh, ow))


def conv_scatter(g: np.ndarray, w: np.ndarray, hp: int, wp: int) -> np.ndarray:
    """Adjoint of conv_fwd: spread (N, F, OH, OW) values back through the
    kernel taps onto a padded (N, C, Hp, Wp) array."""
    f, c, kh, kw = w.shape
    n, fg, oh, ow = g.shape
    if fg != f:
        raise ValueError("conv_scatter: channel mismatch")
    if oh != hp - kh + 1 or ow != wp - kw + 1:
        raise ValueError("conv_scatter: output size does not match padded size")
    w2 = w.reshape(f, c * kh * kw)
    cols = np.matmul(w2.T, g.reshape(n, f, oh * ow))
    return col2im(cols, kh, kw, hp, wp)


def conv_dw(xp: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Weight gradient of conv_fwd for padded input xp and output-side
    values g, shaped (F, C, kh, kw)."""
    n, c, hp, wp = xp.shape
    ng, f, oh, ow = g.shape
    if ng != n:
        raise ValueError("conv_dw: batch mismatch")
    if oh != hp - kh + 1 or ow != wp - kw + 1:
        raise ValueError("conv_dw: output size does not match padded size")
    cols = im2col(xp, kh, kw)
    gf = g.reshape(n, f, oh * ow)
    dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
    return np.ascontiguousarray(dw.reshape(f, c, kh, kw))


def maxpool2_fwd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2, floor semantics.

    Returns (y, idx) where idx holds the row-major position (0..3) of the
    winning element inside each window; ties go to the first element."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError("maxpool2_fwd: input smaller than the pooling window")
    win = (x[:, :, :2 * h2, :2 * w2]
           .reshape(n, c, h2, 2, w2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, h2, w2, 4))
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.uint8)


def maxpool2_bwd(g: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    """Gradient of maxpool2_fwd: routes each upstream value to the window
    element recorded in idx; every other input position (including rows and
    columns cropped by floor semantics) gets zero."""
    n, c, h2, w2 = g.shape
    if idx.shape != g.shape:
        raise ValueError("maxpool2_bwd: index shape does not match gradient")
    if h // 2 != h2 or w // 2 != w2:
        raise ValueError("maxpool2_bwd: target size does not match gradient")
    g4 = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(g4, idx[..., None].astype(np.int64), g[..., None], axis=-1)
    gx = np.zeros((n, c, h, w), dtype=g.dtype)
    gx[:, :, :2 * h2, :2 * w2] = (g4.reshape(n, c, h2, w2, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, 2 * h2, 2 * w2))
    return gx


def bg_update(depth: np.ndarray, valid: np.ndarray,
              bg: np.ndarray, cand: np.ndarray,
              counter: np.ndarray, invalid_run: np.ndarray, drift: np.ndarray,
              mask_out: np.ndarray,
              k: float, k_kinect: float, noise_floor: float,
              delta_p_max: float, alpha: float, t_w: int, n_h: int,
              reset_drift: bool) -> None:
    """One frame of the per-pixel background-model state machine.

    Mutates the state arrays in place and writes the binary foreground mask
    into mask_out. All depths are millimetres (float64). The per-pixel rules:

      invalid observation: mask 0, candidate dropped, invalid run extended;
        after n_h consecutive invalid frames the background estimate is
        dropped and the pixel re-bootstraps on the next valid value.
      no background estimate yet: first valid depth initialises it, mask 0.
      |z - bg| <= max(k * k_kinect * z^2 / 1000, noise_floor): background;
        bg is blended toward z by alpha, but only while the absolute blend
        steps accumulated since the last n_h-frame window boundary stay
        within delta_p_max (drift freeze). Mask 0.
      otherwise: foreground, mask 1. The candidate depth tracks z and its
        stability counter grows while consecutive z stay within the noise
        threshold of the previous candidate; once it reaches t_w the
        candidate is absorbed as the new background (taking effect on the
        next frame).
    """
    if reset_drift:
        drift.fill(0.0)

    z = depth
    is_valid = valid.astype(bool)
    has_bg = ~np.isnan(bg)

    sigma = (k_kinect * (z * z)) / 1000.0
    thr = np.maximum(k * sigma, noise_floor)

    diff = np.abs(z - bg)
    case_a = ~is_valid
    case_b = is_valid & ~has_bg
    with np.errstate(invalid="ignore"):
        near_bg = diff <= thr
    case_c = is_valid & has_bg & near_bg
    case_d = is_valid & has_bg & ~near_bg

    # (a) invalid observation
    invalid_run[case_a] += 1
    cand[case_a] = np.nan
    counter[case_a] = 0
    bg[case_a & (invalid_run >= n_h)] = np.nan

    # (b) bootstrap: first valid observation becomes the background
    bg[case_b] = z[case_b]

    # (c) background: bounded exponential blend toward z
    new_bg = (1.0 - alpha) * bg + alpha * z
    step = np.abs(new_bg - bg)
    apply_blend = case_c & (drift + step <= delta_p_max)
    bg[apply_blend] = new_bg[apply_blend]
    drift[apply_blend] += step[apply_blend]

    # (d) foreground: track the candidate and absorb once stable for t_w
    with np.errstate(invalid="ignore"):
        tracks = case_d & ~np.isnan(cand) & (np.abs(z - cand) <= thr)
    counter[tracks] += 1
    restart = case_d & ~tracks
    counter[restart] = 1
    cand[case_d] = z[case_d]
    absorbed = case_d & (counter >= t_w)
    bg[absorbed] = cand[absorbed]
    cand[absorbed] = np.nan
    counter[absorbed] = 0

    # any valid observation clears bookkeeping shared across cases
    not_fg = case_b | case_c
    cand[not_fg] = np.nan
    counter[not_fg] = 0
    invalid_run[is_valid] = 0

    mask_out[...] = 0
    mask_out[case_d] = 1
