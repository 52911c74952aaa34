"""Gating-side bookkeeping: top-k selection and per-expert token histograms."""

from __future__ import annotations

import numpy as np


def route_topk(scores: np.ndarray, k: int) -> list[tuple[int, ...]]:
    """Select the k highest-scoring experts per token.

    Ties break toward the lower expert id. Output order preserves input
    token order; routing is drop-less and padding-less.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a (tokens x experts) matrix")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if k < 1 or k > scores.shape[1]:
        raise ValueError(f"k={k} out of range for {scores.shape[1]} experts")
    # Stable sort on -score keeps lower ids first among equal scores.
    order = np.argsort(-scores, axis=1, kind="stable")
    return [tuple(int(e) for e in row[:k]) for row in order]


def expert_histogram(assignments, num_experts: int) -> np.ndarray:
    """Count (token, slot) pairs routed to each expert."""
    counts = np.zeros(num_experts, dtype=np.int64)
    for experts in assignments:
        for e in experts:
            counts[e] += 1
    return counts
