"""Training objectives and frame scores.

Three interchangeable objectives over a predicted frame and its target:

- ``mse``     mean squared error over every pixel.
- ``f_mse``   foreground-weighted variant: each squared residual is scaled by
  the mask value at that pixel, but the sum is still divided by the *total*
  pixel count, so a frame with little foreground contributes little loss.
- ``w_mse``   the weighted sum ``mse + 8 * f_mse``, combining full-frame
  fidelity with extra pressure on moving people/objects.

The same scalar doubles as the per-frame anomaly score at inference time.
"""

from __future__ import annotations

import enum

import numpy as np

from . import autograd as ag
from .autograd import Tensor

FOREGROUND_WEIGHT = 8.0


def _pair(pred: Tensor, target) -> tuple[Tensor, Tensor]:
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    if t.shape != pred.shape:
        raise ValueError(f"target shape {t.shape} does not match "
                         f"prediction {pred.shape}")
    return pred, t


def mse(pred: Tensor, target) -> Tensor:
    pred, target = _pair(pred, target)
    d = ag.sub(pred, target)
    return ag.mean_all(ag.mul(d, d))


def f_mse(pred: Tensor, target, mask) -> Tensor:
    pred, target = _pair(pred, target)
    m = mask if isinstance(mask, Tensor) else Tensor(np.asarray(mask))
    if m.size != pred.size:
        raise ValueError(f"mask has {m.size} entries for {pred.size} pixels")
    m = ag.reshape(m, pred.shape)
    d = ag.sub(pred, target)
    return ag.mean_all(ag.mul(m, ag.mul(d, d)))


def w_mse(pred: Tensor, target, mask) -> Tensor:
    return ag.add(mse(pred, target),
                  ag.scale(f_mse(pred, target, mask), FOREGROUND_WEIGHT))


class LossKind(enum.Enum):
    MSE = "mse"
    F_MSE = "f_mse"
    W_MSE = "w_mse"

    @classmethod
    def coerce(cls, value: "LossKind | str") -> "LossKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_")
        return cls(key)

    @property
    def uses_mask(self) -> bool:
        return self is not LossKind.MSE

    def compute(self, pred: Tensor, target, mask=None) -> Tensor:
        if self is LossKind.MSE:
            return mse(pred, target)
        if mask is None:
            raise ValueError(f"{self.value} requires a foreground mask")
        if self is LossKind.F_MSE:
            return f_mse(pred, target, mask)
        return w_mse(pred, target, mask)


def frame_score(kind: LossKind | str, pred: Tensor, target, mask=None) -> float:
    """Anomaly score of one frame: the loss value itself, graph-free."""
    kind = LossKind.coerce(kind)
    with ag.no_grad():
        return kind.compute(pred, target, mask).item()
