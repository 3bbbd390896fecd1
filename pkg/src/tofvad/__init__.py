"""tofvad — anomaly detection for time-of-flight depth/IR video.

Autoencoders trained on normal footage only; reconstruction or prediction
error doubles as the per-frame anomaly score, optionally weighted by
depth-derived foreground masks.
"""

__version__ = "0.1.0"

from . import kernels  # noqa: F401  (selects the compiled or numpy backend)
from .autograd import Tensor, no_grad  # noqa: F401
