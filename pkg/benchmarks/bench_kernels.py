"""Benchmark the per-sample clipping kernel: compiled extension vs numpy.

Usage: python benchmarks/bench_kernels.py [--repeats 20]

Times the kernel on DP-SGD-shaped workloads (batch x feature-dim x classes)
and prints the per-call latency of each backend plus the speedup. The
compiled backend is skipped when the extension is not built.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dpcl import _kernels_numpy

try:
    from dpcl import _clip_kernel
except ImportError:  # pragma: no cover
    _clip_kernel = None

SHAPES = [
    (32, 16, 10),  # small desk-scale task
    (64, 64, 50),
    (256, 128, 100),
    (1024, 768, 100),  # transformer-width features
]


def _time(fn, feats, grads, clip, repeats) -> float:
    fn(feats, grads, clip)  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(feats, grads, clip)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'batch':>6} {'dim':>5} {'classes':>7} {'numpy':>12} {'cython':>12} {'speedup':>8}")
    for b, k, l in SHAPES:
        feats = rng.normal(size=(b, k))
        grads = rng.normal(size=(b, l))
        t_np = _time(_kernels_numpy.clipped_grad_sums, feats, grads, 1.0, args.repeats)
        if _clip_kernel is None:
            print(f"{b:>6} {k:>5} {l:>7} {t_np * 1e6:>10.1f}us {'n/a':>12} {'n/a':>8}")
            continue
        t_cy = _time(_clip_kernel.clipped_grad_sums, feats, grads, 1.0, args.repeats)
        w_np, b_np, m_np = _kernels_numpy.clipped_grad_sums(feats, grads, 1.0)
        w_cy, b_cy, m_cy = _clip_kernel.clipped_grad_sums(feats, grads, 1.0)
        assert np.allclose(w_np, w_cy, atol=1e-12) and np.allclose(b_np, b_cy, atol=1e-12)
        print(
            f"{b:>6} {k:>5} {l:>7} {t_np * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us "
            f"{t_np / t_cy:>8.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
