"""Per-pixel background modelling and soft foreground masks for depth video.

Each pixel keeps a background depth estimate that adapts slowly to small
changes, flags large deviations as foreground, and absorbs a deviating depth
back into the background once it has been stable long enough (a deposited
static object stops being foreground). The binary mask is then blurred with
a small Gaussian so weights fade at object borders.
"""

from __future__ import annotations

import hashlib
import io
import os
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .frameio import Frame, FrameKind, FrameSequence
from .ioutil import atomic_write_bytes


@dataclass(frozen=True)
class MaskParams:
    """Background-model parameters (depths in millimetres, times in frames)."""

    k: float = 1.25              # noise-scale factor on the sensor sigma
    k_kinect: float = 5e-4       # quadratic sensor-noise coefficient
    delta_p_max: float = 100.0   # max cumulative background drift per window
    alpha: float = 0.4           # background adaptation rate
    t_w: int = 300               # frames a new depth must stay stable to absorb
    n_h: int = 90                # history window (drift accounting, dropouts)
    noise_floor: float = 10.0    # minimum deviation threshold in mm

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.k_kinect > 0:
            raise ValueError(f"k_kinect must be positive, got {self.k_kinect}")
        if not self.delta_p_max > 0:
            raise ValueError(f"delta_p_max must be positive, got {self.delta_p_max}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha out of range (0, 1]: {self.alpha}")
        if self.t_w < 1:
            raise ValueError(f"t_w must be >= 1, got {self.t_w}")
        if self.n_h < 1:
            raise ValueError(f"n_h must be >= 1, got {self.n_h}")
        if self.noise_floor < 0:
            raise ValueError(f"noise_floor must be >= 0, got {self.noise_floor}")

    def digest(self) -> str:
        text = ",".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


class BackgroundModel:
    """Streaming per-pixel background model over one depth sequence."""

    def __init__(self, width: int, height: int, params: MaskParams):
        if width < 1 or height < 1:
            raise ValueError(f"invalid model size {width}x{height}")
        self.width = width
        self.height = height
        self.params = params
        self.frame_index = 0
        shape = (height, width)
        self._bg = np.full(shape, np.nan)
        self._cand = np.full(shape, np.nan)
        self._counter = np.zeros(shape, dtype=np.int32)
        self._invalid_run = np.zeros(shape, dtype=np.int32)
        self._drift = np.zeros(shape)

    def update(self, frame: Frame) -> np.ndarray:
        """Consume one raw depth frame; returns the binary foreground mask."""
        if frame.kind is not FrameKind.DEPTH_RAW:
            raise ValueError("depth modality required")
        if (frame.height, frame.width) != (self.height, self.width):
            raise ValueError(f"frame size {frame.width}x{frame.height} does not "
                             f"match model {self.width}x{self.height}")
        depth = np.ascontiguousarray(frame.values, dtype=np.float64)
        valid = np.ascontiguousarray(frame.validity, dtype=np.uint8)
        mask = np.zeros((self.height, self.width), dtype=np.uint8)
        p = self.params
        kernels.bg_update(depth, valid, self._bg, self._cand, self._counter,
                          self._invalid_run, self._drift, mask,
                          p.k, p.k_kinect, p.noise_floor, p.delta_p_max,
                          p.alpha, p.t_w, p.n_h,
                          self.frame_index % p.n_h == 0)
        self.frame_index += 1
        return mask


_GAUSS5: np.ndarray | None = None


def _gauss5(sigma: float = 1.0) -> np.ndarray:
    global _GAUSS5
    if _GAUSS5 is None:
        ax = np.arange(-2, 3, dtype=np.float64)
        k1 = np.exp(-(ax ** 2) / (2.0 * sigma * sigma))
        k2 = np.outer(k1, k1)
        _GAUSS5 = k2 / k2.sum()
    return _GAUSS5


def smooth_mask(raw: np.ndarray) -> np.ndarray:
    """5x5 Gaussian blur of a binary mask, reflected borders, clamped [0,1]."""
    m = np.asarray(raw, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    k2 = _gauss5()
    padded = np.pad(m, 2, mode="reflect")
    h, w = m.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(5):
        for j in range(5):
            out += k2[i, j] * padded[i:i + h, j:j + w]
    return np.clip(out, 0.0, 1.0)


def mask_sequence(seq: FrameSequence, params: MaskParams,
                  smoothed: bool = True) -> np.ndarray:
    """Per-frame foreground masks for a raw depth sequence.

    Returns (N, H, W) float32 soft masks (or the binary masks as float32
    when smoothed=False); frames are processed strictly in order.
    """
    if seq.kind is not FrameKind.DEPTH_RAW:
        raise ValueError("depth modality required")
    model = BackgroundModel(seq.width, seq.height, params)
    out = np.empty((len(seq), seq.height, seq.width), dtype=np.float32)
    for t, frame in enumerate(seq.frames):
        raw = model.update(frame)
        out[t] = smooth_mask(raw) if smoothed else raw
    return out


def _sequence_fingerprint(seq: FrameSequence) -> str:
    h = hashlib.sha256()
    h.update(f"{len(seq)}x{seq.height}x{seq.width}".encode())
    h.update(np.ascontiguousarray(seq.frames[0].values).tobytes())
    h.update(np.ascontiguousarray(seq.frames[-1].values).tobytes())
    return h.hexdigest()[:16]


def cached_mask_sequence(seq: FrameSequence, params: MaskParams,
                         cache_dir: str | Path | None) -> np.ndarray:
    """mask_sequence with an on-disk cache keyed by sequence id, content
    fingerprint, and parameter digest."""
    if cache_dir is None:
        return mask_sequence(seq, params)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = f"{seq.sequence_id}-{_sequence_fingerprint(seq)}-{params.digest()}.npz"
    path = cache_dir / key
    if path.exists():
        with np.load(path) as data:
            masks = data["masks"]
        if masks.shape == (len(seq), seq.height, seq.width):
            return masks
    masks = mask_sequence(seq, params)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=f".{key}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez_compressed(fh, masks=masks)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return masks


def export_mask_pngs(masks: np.ndarray, out_dir: str | Path) -> list[Path]:
    """Write soft masks as 8-bit grayscale PNGs (weight x 255) for inspection."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, m in enumerate(np.asarray(masks)):
        img = Image.fromarray(np.clip(np.rint(m * 255.0), 0, 255).astype(np.uint8),
                              mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        p = out_dir / f"{t:06d}.png"
        atomic_write_bytes(p, buf.getvalue())
        paths.append(p)
    return paths
