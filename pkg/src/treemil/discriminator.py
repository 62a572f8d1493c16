"""Series-level and point-level anomaly heads sharing one linear layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tree import TreeLayout

POOLS = ("max", "mean")
PROB_EPS = 1e-12


@dataclass
class PointPrediction:
    scores: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def labels(self):
        return self.scores >= self.threshold


def _pool(x, axis, pool, mask=None):
    """Pool ``x`` over ``axis``; ``mask`` (broadcastable, True = keep) drops members."""
    if pool == "max":
        if mask is not None:
            x = ad.where(mask, x, -np.inf)
        return ad.max(x, axis=axis)
    if pool == "mean":
        if mask is None:
            return ad.mean(x, axis=axis)
        keep = np.broadcast_to(mask, x.shape).astype(np.float64)
        return ad.sum(x * keep, axis=axis) / keep.sum(axis=axis)
    raise ValueError(f"pool must be one of {POOLS}, got {pool!r}")


def _linear(pooled, w, b):
    return (pooled @ w).sum(axis=-1) + b.sum()


def series_logits(H, w, b, pool="max"):
    layout: TreeLayout = H.layout
    keep = (~layout.pad_mask)[None, :, None]
    return _linear(_pool(H.nodes, 1, pool, keep if layout.pad_mask.any() else None), w, b)


def series_score(H, w, b, pool="max"):
    """sigmoid(W . pool(all non-pad node features) + b), one value per window."""
    return ad.sigmoid(series_logits(H, w, b, pool))


def ancestor_set(t, layout: TreeLayout):
    """[(S, t), (S-1, ceil(t/N)), ..., (1, 1)] for a 1-based time index t."""
    if not 1 <= t <= layout.T:
        raise IndexError(f"time index {t} outside 1..{layout.T}")
    N, S = layout.N, layout.S
    return [(s, -(-t // N ** (S - s))) for s in range(S, 0, -1)]


def point_logits(H, w, b, pool="max", leaf_only=False):
    layout: TreeLayout = H.layout
    anc = layout.ancestors[:, -1:] if leaf_only else layout.ancestors
    gathered = H.nodes[:, anc]  # (B, T, levels, d)
    return _linear(_pool(gathered, 2, pool), w, b)


def point_scores(H, w, b, pool="max", leaf_only=False):
    """Per time step: sigmoid(W . pool(features of the step's ancestors) + b).

    ``leaf_only`` restricts each ancestor set to the leaf itself (ablation).
    """
    return ad.sigmoid(point_logits(H, w, b, pool, leaf_only))


def node_scores(H, w, b):
    """Unpooled sigmoid score of every node, shape (B, n_nodes)."""
    return ad.sigmoid(_linear(H.nodes, w, b))


def bce_loss(predictions, labels):
    """Summed binary cross-entropy with predictions clamped away from 0 and 1."""
    predictions = predictions if isinstance(predictions, ad.Tensor) else ad.Tensor(predictions)
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"labels must be 0 or 1, got {np.unique(y)}")
    if y.shape != predictions.shape:
        raise ad.ShapeError("bce_loss", predictions.shape, y.shape)
    p = ad.clip(predictions, PROB_EPS, 1.0 - PROB_EPS)
    return -ad.sum(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p))
