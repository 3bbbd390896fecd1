#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy fallback.

Times each kernel on shapes taken from the 64x64 training pipeline, then a
full optimizer step per backend for the two convolutional architectures.

    python3 benchmarks/bench_kernels.py [--repeats N] [--steps N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tofvad import autograd as ag
from tofvad import kernels, nn
from tofvad.losses import LossKind
from tofvad.models import build_model


def _time(fn, repeats: int) -> float:
    """Median wall time of fn() in milliseconds (one warm-up call)."""
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def kernel_cases(rng):
    """(name, callable-factory) pairs at pipeline-realistic shapes."""
    x_wide = rng.standard_normal((1, 32, 68, 68)).astype(np.float32)
    w_wide = rng.standard_normal((16, 32, 5, 5)).astype(np.float32)
    cols_wide = kernels.im2col(x_wide, 5, 5)
    g_wide = rng.standard_normal((1, 16, 64, 64)).astype(np.float32)

    x_head = rng.standard_normal((1, 64, 68, 68)).astype(np.float32)
    w_head = rng.standard_normal((1, 64, 5, 5)).astype(np.float32)
    g_head = rng.standard_normal((1, 1, 64, 64)).astype(np.float32)

    pool_x = rng.standard_normal((1, 32, 64, 64)).astype(np.float32)
    pool_g = rng.standard_normal((1, 32, 32, 32)).astype(np.float32)
    _, pool_idx = kernels.maxpool2_fwd(pool_x)

    depth = np.full((64, 64), 2000.0) + rng.normal(0, 2, (64, 64))
    valid = np.ones((64, 64), dtype=np.uint8)

    def bg_state():
        return dict(bg=np.full((64, 64), np.nan), cand=np.full((64, 64), np.nan),
                    counter=np.zeros((64, 64), np.int32),
                    invalid_run=np.zeros((64, 64), np.int32),
                    drift=np.zeros((64, 64)), mask=np.zeros((64, 64), np.uint8))

    def run_bg():
        st = bg_state()
        kernels.bg_update(depth, valid, st["bg"], st["cand"], st["counter"],
                          st["invalid_run"], st["drift"], st["mask"],
                          1.25, 5e-4, 10.0, 100.0, 0.4, 300, 90, True)

    return [
        ("im2col          32ch 64x64", lambda: kernels.im2col(x_wide, 5, 5)),
        ("col2im          32ch 64x64", lambda: kernels.col2im(cols_wide, 5, 5, 68, 68)),
        ("conv_fwd   64ch->1  64x64", lambda: kernels.conv_fwd(x_head, w_head)),
        ("conv_scatter 1->64ch 64x64", lambda: kernels.conv_scatter(g_head, w_head, 68, 68)),
        ("conv_dw    64ch->1  64x64", lambda: kernels.conv_dw(x_head, g_head, 5, 5)),
        ("maxpool2_fwd    32ch 64x64", lambda: kernels.maxpool2_fwd(pool_x)),
        ("maxpool2_bwd    32ch 64x64", lambda: kernels.maxpool2_bwd(pool_g, pool_idx, 64, 64)),
        ("bg_update            64x64", run_bg),
    ]


def train_step_case(model_name: str, rng):
    model = build_model(model_name, 64, 64, seed=0)
    opt = nn.Adam(model.parameters(), lr=1e-3)
    clip = rng.random((1, model.clip_len, 64, 64)).astype(np.float32)
    target = rng.random((1, 1, 64, 64)).astype(np.float32)
    mask = (rng.random((64, 64)) < 0.1).astype(np.float32)

    def step():
        loss = LossKind.W_MSE.compute(model(ag.Tensor(clip)), target, mask)
        ag.backward(loss)
        opt.step()
        opt.zero_grad()

    return step


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20,
                        help="timed repetitions per kernel (default 20)")
    parser.add_argument("--steps", type=int, default=10,
                        help="timed optimizer steps per model (default 10)")
    args = parser.parse_args()

    backends = kernels.available_backends()
    if len(backends) < 2:
        print(f"only the {backends[0]} backend is available; "
              f"nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}   "
          f"(times are medians of {args.repeats} runs, in ms)\n")
    width = 28
    print(f"{'kernel':<{width}} {'numpy':>9} {'cython':>9} {'speedup':>8}")
    print("-" * (width + 29))
    for name, fn in kernel_cases(rng):
        times = {}
        for backend in backends:
            kernels.use_backend(backend)
            times[backend] = _time(fn, args.repeats)
        kernels.use_backend(backends[0])
        ratio = times["numpy"] / times["cython"]
        print(f"{name:<{width}} {times['numpy']:>9.3f} {times['cython']:>9.3f} "
              f"{ratio:>7.1f}x")

    print(f"\n{'full optimizer step':<{width}} {'numpy':>9} {'cython':>9} "
          f"{'speedup':>8}")
    print("-" * (width + 29))
    for model_name in ("rcae", "pcae"):
        times = {}
        for backend in backends:
            kernels.use_backend(backend)
            times[backend] = _time(train_step_case(model_name, rng), args.steps)
        kernels.use_backend(backends[0])
        ratio = times["numpy"] / times["cython"]
        print(f"{model_name + ' w_mse step, 64x64':<{width}} "
              f"{times['numpy']:>9.3f} {times['cython']:>9.3f} {ratio:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
