"""Frame/sequence loading, normalization, clip assembly, annotations.

Sequences live on disk as one directory of 16-bit single-channel grayscale
images per sequence, zero-padded decimal filenames in acquisition order.
Raw depth values are millimetres; IR values are sensor amplitude counts.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .ioutil import atomic_write_bytes

log = logging.getLogger("tofvad.frameio")

IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".pgm")


class FrameKind(enum.Enum):
    DEPTH_RAW = "depth_raw"
    IR_RAW = "ir_raw"
    NORMALIZED = "normalized"


class Modality(enum.Enum):
    DEPTH = "depth"
    IR = "ir"

    @classmethod
    def coerce(cls, value: "Modality | str") -> "Modality":
        return value if isinstance(value, cls) else cls(str(value).lower())


class InputMode(enum.Enum):
    RECONSTRUCTION = "reconstruction"
    PREDICTION = "prediction"

    @classmethod
    def coerce(cls, value: "InputMode | str") -> "InputMode":
        return value if isinstance(value, cls) else cls(str(value).lower())


class Category(enum.Enum):
    AGGRESSIVE_BEHAVIOR = "aggressive_behavior"
    MEDICAL_ISSUE = "medical_issue"
    LEFT_BEHIND_OBJECT = "left_behind_object"
    OTHER = "other"


_CATEGORY_TOKENS = {
    "aggressive": Category.AGGRESSIVE_BEHAVIOR,
    "aggression": Category.AGGRESSIVE_BEHAVIOR,
    "aggressive_behavior": Category.AGGRESSIVE_BEHAVIOR,
    "aggressive_behaviour": Category.AGGRESSIVE_BEHAVIOR,
    "medical": Category.MEDICAL_ISSUE,
    "medical_issue": Category.MEDICAL_ISSUE,
    "potential_medical_issue": Category.MEDICAL_ISSUE,
    "left_behind": Category.LEFT_BEHIND_OBJECT,
    "left_behind_object": Category.LEFT_BEHIND_OBJECT,
    "left_behind_objects": Category.LEFT_BEHIND_OBJECT,
    "leftbehindobject": Category.LEFT_BEHIND_OBJECT,
    "other": Category.OTHER,
    "normal": Category.OTHER,
    "none": Category.OTHER,
}


def _canon_token(token: str) -> str:
    return token.strip().lower().replace(" ", "_").replace("-", "_")


@dataclass(frozen=True)
class Frame:
    """One single-channel 2-D measurement with per-pixel validity."""

    values: np.ndarray
    validity: np.ndarray
    kind: FrameKind

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"frame values must be 2-D, got shape {self.values.shape}")
        if self.validity.shape != self.values.shape:
            raise ValueError("validity shape does not match values")
        if self.kind is FrameKind.NORMALIZED:
            v = self.values[self.validity]
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise ValueError("normalized frame has valid pixels outside [0,1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class FrameSequence:
    """Uniform, time-ordered frames plus an identifier."""

    frames: list[Frame]
    sequence_id: str

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"sequence {self.sequence_id!r} has no frames")
        f0 = self.frames[0]
        for i, f in enumerate(self.frames):
            if (f.height, f.width) != (f0.height, f0.width):
                raise ValueError(f"sequence {self.sequence_id!r}: frame {i} has "
                                 f"size {f.width}x{f.height}, expected {f0.width}x{f0.height}")
            if f.kind is not f0.kind:
                raise ValueError(f"sequence {self.sequence_id!r}: mixed frame kinds")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> Frame:
        return self.frames[i]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def kind(self) -> FrameKind:
        return self.frames[0].kind


@dataclass(frozen=True)
class Annotation:
    """Anomalous frame span of one sequence; first == last == -1 marks a
    sequence with no anomaly."""

    sequence_id: str
    first_anomalous: int
    last_anomalous: int
    anomaly_type: str
    category: Category

    def __post_init__(self):
        f, l = self.first_anomalous, self.last_anomalous
        if f == -1 and l == -1:
            return
        if f < 0 or l < 0 or f > l:
            raise ValueError(f"annotation for {self.sequence_id!r}: invalid span "
                             f"[{f}, {l}]")

    @property
    def is_normal(self) -> bool:
        return self.first_anomalous == -1 and self.last_anomalous == -1

    def to_labels(self, n_frames: int) -> np.ndarray:
        """Per-frame binary labels: 1 inside [first, last], else 0."""
        labels = np.zeros(n_frames, dtype=np.uint8)
        if not self.is_normal:
            if self.last_anomalous >= n_frames:
                raise ValueError(f"annotation for {self.sequence_id!r}: last index "
                                 f"{self.last_anomalous} outside sequence of {n_frames}")
            labels[self.first_anomalous:self.last_anomalous + 1] = 1
        return labels


@dataclass(frozen=True)
class Clip:
    """Network input frames plus the frame the network must produce."""

    inputs: tuple[Frame, ...]
    target: Frame
    target_index: int

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("clip needs at least one input frame")


def read_frame16(path: str | Path) -> np.ndarray:
    """Read one 16-bit single-channel image as a float64 (H, W) array."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected single-channel image, got shape {arr.shape}")
    return arr.astype(np.float64)


def write_frame16(path: str | Path, values: np.ndarray) -> None:
    """Write integer-valued data as a 16-bit grayscale PNG (atomically)."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"cannot write {path}: expected 2-D data, got shape {arr.shape}")
    clipped = np.clip(np.rint(arr), 0, 65535).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(clipped)  # uint16 -> 16-bit grayscale ("I;16")
    if img.mode != "I;16":
        img = img.convert("I;16")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_sequence(dir_path: str | Path, modality: Modality | str) -> FrameSequence:
    """Load one sequence directory; validity = (raw value > 0)."""
    modality = Modality.coerce(modality)
    directory = Path(dir_path)
    if not directory.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {directory}")
    entries = []
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.stem.isdigit():
            entries.append((int(p.stem), p))
    if not entries:
        raise ValueError(f"{directory}: no frame images found")
    entries.sort(key=lambda e: e[0])
    for pos in range(1, len(entries)):
        prev_idx, _ = entries[pos - 1]
        idx, p = entries[pos]
        if idx == prev_idx:
            raise ValueError(f"{directory}: duplicate frame index {idx} ({p.name})")
        if idx != prev_idx + 1:
            raise ValueError(f"{directory}: gap at index {prev_idx + 1}")

    kind = FrameKind.DEPTH_RAW if modality is Modality.DEPTH else FrameKind.IR_RAW
    frames: list[Frame] = []
    size = None
    for _, p in entries:
        values = read_frame16(p)
        if size is None:
            size = values.shape
        elif values.shape != size:
            raise ValueError(f"{p}: frame size {values.shape[::-1]} differs from "
                             f"first frame {size[::-1]}")
        frames.append(Frame(values=values, validity=values > 0, kind=kind))
    return FrameSequence(frames=frames, sequence_id=directory.name)


def normalize_depth(frame: Frame, max_depth_m: float) -> Frame:
    """Map raw millimetre depth to [0,1] by v/1000/max_depth_m, clamped."""
    if frame.kind is not FrameKind.DEPTH_RAW:
        raise ValueError(f"normalize_depth expects raw depth, got {frame.kind.value}")
    if not max_depth_m > 0:
        raise ValueError(f"max_depth must be positive, got {max_depth_m}")
    out = np.clip(frame.values / 1000.0 / max_depth_m, 0.0, 1.0)
    out[~frame.validity] = 0.0
    return Frame(values=out.astype(np.float32), validity=frame.validity.copy(),
                 kind=FrameKind.NORMALIZED)


def normalize_ir(frame: Frame, full_scale: bool = False) -> Frame:
    """Compress IR counts with ln(1+x)/(2^16-1).

    The default divisor follows the source formula literally and lands far
    below 1.0 for every representable input; ``full_scale=True`` divides by
    ln(2^16) instead so the maximum count maps to ~1.0.
    """
    if frame.kind is not FrameKind.IR_RAW:
        raise ValueError(f"normalize_ir expects raw IR, got {frame.kind.value}")
    divisor = math.log(2.0 ** 16) if full_scale else 2.0 ** 16 - 1.0
    out = np.log1p(frame.values) / divisor
    out[~frame.validity] = 0.0
    return Frame(values=out.astype(np.float32), validity=frame.validity.copy(),
                 kind=FrameKind.NORMALIZED)


def add_noise(frame: Frame, sigma: float, seed: int) -> Frame:
    """Add clamped zero-mean Gaussian noise; for network inputs only."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if frame.kind is not FrameKind.NORMALIZED:
        raise ValueError("add_noise expects a normalized frame")
    if sigma == 0:
        return frame
    rng = np.random.default_rng(seed)
    noisy = frame.values + rng.normal(0.0, sigma, size=frame.values.shape)
    out = np.clip(noisy, 0.0, 1.0).astype(frame.values.dtype)
    return Frame(values=out, validity=frame.validity.copy(), kind=FrameKind.NORMALIZED)


def make_clips(seq: FrameSequence, mode: InputMode | str, clip_len: int = 4) -> list[Clip]:
    """Reconstruction: one single-frame clip per frame. Prediction: inputs
    are the clip_len frames before each target, targets clip_len..N-1."""
    mode = InputMode.coerce(mode)
    n = len(seq)
    if mode is InputMode.RECONSTRUCTION:
        return [Clip(inputs=(seq[t],), target=seq[t], target_index=t) for t in range(n)]
    if n < clip_len + 1:
        raise ValueError(f"sequence {seq.sequence_id!r} too short: {n} frames, "
                         f"prediction needs at least {clip_len + 1}")
    return [Clip(inputs=tuple(seq.frames[t - clip_len:t]), target=seq[t], target_index=t)
            for t in range(clip_len, n)]


def load_category_map(path: str | Path) -> dict[str, Category]:
    """Key-value text file: one `anomaly_type = category` per line."""
    mapping: dict[str, Category] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'anomaly_type = category'")
        key, value = (part.strip() for part in line.split("=", 1))
        token = _canon_token(value)
        if token not in _CATEGORY_TOKENS:
            raise ValueError(f"{path}:{lineno}: unknown category {value!r}")
        mapping[_canon_token(key)] = _CATEGORY_TOKENS[token]
    return mapping


def _resolve_category(anomaly_type: str, token: str,
                      category_map: dict[str, Category] | None,
                      context: str) -> Category:
    if category_map:
        hit = category_map.get(_canon_token(anomaly_type))
        if hit is not None:
            return hit
    canon = _canon_token(token)
    if canon in _CATEGORY_TOKENS:
        return _CATEGORY_TOKENS[canon]
    log.warning("%s: unknown category %r, using 'other'", context, token)
    return Category.OTHER


def load_annotations(path: str | Path,
                     category_map: dict[str, Category] | None = None) -> list[Annotation]:
    """Parse a delimited table: sequence_id, first, last, anomaly_type, category."""
    path = Path(path)
    annotations: list[Annotation] = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].strip().startswith("#")):
                continue
            cells = [c.strip() for c in row]
            if lineno == 1 and len(cells) >= 3 and not _is_int(cells[1]):
                continue  # header row
            if len(cells) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(cells)}")
            seq_id, first_s, last_s, anomaly_type, token = cells
            if not (_is_int(first_s) and _is_int(last_s)):
                raise ValueError(f"{path}:{lineno}: frame indices must be integers")
            first, last = int(first_s), int(last_s)
            category = _resolve_category(anomaly_type, token, category_map,
                                         f"{path}:{lineno}")
            try:
                annotations.append(Annotation(seq_id, first, last, anomaly_type, category))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return annotations


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False
