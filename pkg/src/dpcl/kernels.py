"""Kernel backend selection for the per-sample clipping hot loop.

The compiled extension beats numpy on small DP-SGD workloads (typical
desk-scale tasks) where ufunc and temporary overhead dominates, while
numpy's BLAS-backed matmul wins on large batches: measured crossover is
near 32k multiply-accumulates per call (see benchmarks/bench_kernels.py).
Calls are dispatched by workload size; set ``DPCL_PURE_PYTHON=1`` to force
the numpy path everywhere.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_numpy

# batch * dim * classes at which numpy's matmul overtakes the scalar loop
DISPATCH_THRESHOLD = 32_768

if os.environ.get("DPCL_PURE_PYTHON"):
    _compiled = None
    BACKEND = "numpy"
else:
    try:
        from . import _clip_kernel as _compiled  # type: ignore[no-redef]

        BACKEND = "cython+numpy"
    except ImportError:  # extension not compiled
        _compiled = None
        BACKEND = "numpy"


def clipped_grad_sums(
    feats: np.ndarray, grad_logits: np.ndarray, clip_norm: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sum per-sample clipped gradients; see dpcl._kernels_numpy for the contract."""
    if _compiled is not None:
        work = feats.shape[0] * feats.shape[1] * grad_logits.shape[1]
        if 0 < work <= DISPATCH_THRESHOLD:
            return _compiled.clipped_grad_sums(feats, grad_logits, clip_norm)
    return _kernels_numpy.clipped_grad_sums(feats, grad_logits, clip_norm)


__all__ = ["clipped_grad_sums", "BACKEND", "DISPATCH_THRESHOLD"]
