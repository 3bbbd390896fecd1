"""Run configuration: a flat, typed `key = value` text format.

Physical quantities carry their unit in the key name (``max_depth_m``,
``mask.noise_floor_mm``) so a value can never be misread in the wrong unit.
Background-model parameters live under the ``mask.`` prefix. Saving and
re-loading a config reproduces it exactly, and the canonical serialization
is byte-stable, which makes recorded snapshots sufficient to reproduce a
training run bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .fgmask import MaskParams
from .frameio import Modality
from .ioutil import atomic_write_text
from .losses import LossKind
from .models import ModelKind


@dataclass(frozen=True)
class RunConfig:
    model: str = "rcae"
    loss: str = "w_mse"
    modality: str = "depth"
    max_depth_m: float = 3.5
    ir_full_scale: bool = False
    noise_sigma: float = 0.01
    seed: int = 0
    epochs: int = 1
    lr: float = 0.001
    clip_len: int = 4
    window: int = 10
    train_dir: str = ""
    mask_cache_dir: str = ""
    mask: MaskParams = field(default_factory=MaskParams)

    def __post_init__(self):
        # enum-backed fields fail fast on typos
        ModelKind.coerce(self.model)
        LossKind.coerce(self.loss)
        Modality.coerce(self.modality)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.clip_len < 1:
            raise ValueError(f"clip_len must be >= 1, got {self.clip_len}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.max_depth_m > 0:
            raise ValueError(f"max_depth_m must be positive, got {self.max_depth_m}")

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind.coerce(self.model)

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.coerce(self.loss)

    @property
    def modality_kind(self) -> Modality:
        return Modality.coerce(self.modality)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# key -> (python type, how to reach the value). Order here is the canonical
# serialization order.
_TOP_FIELDS: dict[str, type] = {
    "model": str,
    "loss": str,
    "modality": str,
    "max_depth_m": float,
    "ir_full_scale": bool,
    "noise_sigma": float,
    "seed": int,
    "epochs": int,
    "lr": float,
    "clip_len": int,
    "window": int,
    "train_dir": str,
    "mask_cache_dir": str,
}

# mask.<key> -> (MaskParams field, type); unit suffixes live in the key only
_MASK_FIELDS: dict[str, tuple[str, type]] = {
    "k": ("k", float),
    "k_kinect": ("k_kinect", float),
    "delta_p_max_mm": ("delta_p_max", float),
    "alpha": ("alpha", float),
    "t_w_frames": ("t_w", int),
    "n_h_frames": ("n_h", int),
    "noise_floor_mm": ("noise_floor", float),
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str, typ: type, key: str, where: str):
    if typ is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"{where}: key {key!r} expects true/false, got {text!r}")
        return low == "true"
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"{where}: key {key!r} expects an integer, "
                             f"got {text!r}") from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{where}: key {key!r} expects a number, "
                             f"got {text!r}") from None
    return text


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for key in _TOP_FIELDS:
        lines.append(f"{key} = {_format_value(getattr(cfg, key))}")
    for key, (attr, _) in _MASK_FIELDS.items():
        lines.append(f"mask.{key} = {_format_value(getattr(cfg.mask, attr))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, where: str = "<config>") -> RunConfig:
    top: dict = {}
    mask: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{where}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        spot = f"{where}:{lineno}"
        if key.startswith("mask."):
            sub = key[len("mask."):]
            if sub not in _MASK_FIELDS:
                raise ValueError(f"{spot}: unknown key {key!r}")
            attr, typ = _MASK_FIELDS[sub]
            mask[attr] = _parse_value(value, typ, key, spot)
        elif key in _TOP_FIELDS:
            top[key] = _parse_value(value, _TOP_FIELDS[key], key, spot)
        else:
            raise ValueError(f"{spot}: unknown key {key!r}")
    return RunConfig(mask=MaskParams(**mask), **top)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    atomic_write_text(Path(path), config_to_text(cfg))


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return config_from_text(p.read_text(encoding="utf-8"), where=str(p))
