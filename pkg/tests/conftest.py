from __future__ import annotations

import numpy as np
import pytest

from tofvad import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per available kernel backend, restoring the default."""
    previous = kernels.active_backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
