"""Kernel backend selection.

The compiled Cython extension (`tofvad.kernels._fast`) is preferred when it
imported cleanly; otherwise the pure-numpy twin (`tofvad.kernels.ref`) is
used. Both expose the same kernels; `im2col`/`col2im`/`bg_update` and the
pooling pair (`maxpool2_fwd`/`maxpool2_bwd`) agree bitwise across backends,
while the direct convolution kernels (`conv_fwd`/`conv_scatter`/`conv_dw`)
agree to floating-point tolerance (the compiled versions accumulate in a
different order than matmul). `use_backend` exists for tests and benchmarks.
"""

from __future__ import annotations

from . import ref as _ref

try:
    from . import _fast as _fast  # type: ignore[attr-defined]
except ImportError:
    _fast = None

_active = _fast if _fast is not None else _ref


def available_backends() -> tuple[str, ...]:
    names = ["numpy"]
    if _fast is not None:
        names.insert(0, "cython")
    return tuple(names)


def active_backend() -> str:
    return _active.BACKEND_NAME


def use_backend(name: str) -> None:
    """Force a backend by name ("cython" or "numpy")."""
    global _active
    if name == "numpy":
        _active = _ref
    elif name == "cython":
        if _fast is None:
            raise RuntimeError("compiled kernels are not available")
        _active = _fast
    else:
        raise ValueError(f"unknown backend {name!r}")


def im2col(xp, kh, kw):
    return _active.im2col(xp, kh, kw)


def col2im(cols, kh, kw, hp, wp):
    return _active.col2im(cols, kh, kw, hp, wp)


def conv_fwd(xp, w):
    return _active.conv_fwd(xp, w)


def conv_scatter(g, w, hp, wp):
    return _active.conv_scatter(g, w, hp, wp)


def conv_dw(xp, g, kh, kw):
    return _active.conv_dw(xp, g, kh, kw)


def maxpool2_fwd(x):
    return _active.maxpool2_fwd(x)


def maxpool2_bwd(g, idx, h, w):
    return _active.maxpool2_bwd(g, idx, h, w)


def bg_update(depth, valid, bg, cand, counter, invalid_run, drift, mask_out,
              k, k_kinect, noise_floor, delta_p_max, alpha, t_w, n_h,
              reset_drift):
    return _active.bg_update(depth, valid, bg, cand, counter, invalid_run,
                             drift, mask_out, k, k_kinect, noise_floor,
                             delta_p_max, alpha, t_w, n_h, reset_drift)
