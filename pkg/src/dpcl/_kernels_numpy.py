"""Pure-numpy implementation of the per-sample gradient clipping kernel."""

from __future__ import annotations

import numpy as np


def clipped_grad_sums(
    feats: np.ndarray, grad_logits: np.ndarray, clip_norm: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sum per-sample clipped gradients of a linear softmax head.

    The per-sample gradient w.r.t. (weights, bias) is
    (outer(g_i, v_i), g_i) with joint L2 norm ``||g_i|| * sqrt(||v_i||^2 + 1)``;
    samples above ``clip_norm`` are scaled down onto the clipping sphere.

    Returns (weight-gradient sum (L, K), bias-gradient sum (L,), max clipped
    per-sample norm).
    """
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    grad_logits = np.ascontiguousarray(grad_logits, dtype=np.float64)
    if feats.shape[0] != grad_logits.shape[0]:
        raise ValueError("feats and grad_logits must agree on the batch dimension")
    if feats.shape[0] == 0:
        return (
            np.zeros((grad_logits.shape[1], feats.shape[1])),
            np.zeros(grad_logits.shape[1]),
            0.0,
        )
    v_sq = np.einsum("ij,ij->i", feats, feats)
    g_sq = np.einsum("ij,ij->i", grad_logits, grad_logits)
    norms = np.sqrt(g_sq * (v_sq + 1.0))
    scale = np.where(norms > clip_norm, clip_norm / np.maximum(norms, 1e-300), 1.0)
    scaled = grad_logits * scale[:, None]
    sum_w = scaled.T @ feats
    sum_b = scaled.sum(axis=0)
    return sum_w, sum_b, float(np.max(norms * scale))
