"""F1 / IoU metrics (no point adjustment) and per-node score maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import stack


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _masks(predictions, labels):
    p = np.asarray(predictions).astype(bool).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    return p, y


def confusion(predictions, labels):
    p, y = _masks(predictions, labels)
    return ConfusionCounts(
        tp=int(np.sum(p & y)), fp=int(np.sum(p & ~y)), fn=int(np.sum(~p & y)), tn=int(np.sum(~p & ~y))
    )


def f1(predictions, labels):
    """2tp / (2tp + fp + fn), or 0 when nothing is predicted or labelled."""
    c = confusion(predictions, labels)
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def iou(predictions, labels):
    """|pred & label| / |pred | label|, or 1 when both are empty."""
    c = confusion(predictions, labels)
    union = c.tp + c.fp + c.fn
    return c.tp / union if union else 1.0


def evaluate(model, windows, threshold=None, leaf_only=False, batch=64):
    """F1-W on series predictions, F1-D and IoU on concatenated point predictions."""
    if not windows:
        raise ValueError("cannot evaluate on an empty test set")
    threshold = model.cfg.threshold if threshold is None else threshold
    x, y_series, y_points = stack(windows)
    series, points = [], []
    for i in range(0, len(windows), batch):
        s, p = model.predict(x[i : i + batch], leaf_only=leaf_only)
        series.append(s)
        points.append(p)
    series = np.concatenate(series)
    points = np.concatenate(points)
    return {
        "f1w": f1(series >= threshold, y_series),
        "f1d": f1(points >= threshold, y_points),
        "iou": iou(points >= threshold, y_points),
    }


def format_report(report):
    return "".join(f"{k}={report[k]:.6f}\n" for k in ("f1w", "f1d", "iou"))


@dataclass
class ScoreMap:
    """Level x time matrix of node scores; NaN marks cells of pad-only nodes.

    Row 0 is the root level, row S-1 the leaves.
    """

    values: np.ndarray  # (S, padded_len)
    N: int
    T: int

    @property
    def S(self):
        return self.values.shape[0]

    def to_csv(self):
        lines = []
        for row in self.values:
            lines.append(",".join("" if np.isnan(v) else format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path, N, T):
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh.read().splitlines():
                rows.append([float(v) if v else np.nan for v in line.split(",")])
        return cls(np.array(rows), N, T)


def score_map(model, window):
    """Every node's sigmoid score, replicated across the time span it covers."""
    values = window.values if hasattr(window, "values") else window
    scores, layout = model.node_scores(values)
    scores = scores[0]
    out = np.full((layout.S, layout.padded_len), np.nan)
    for s in range(1, layout.S + 1):
        width = layout.span_width(s)
        sl = layout.level_slice(s)
        row = np.where(layout.pad_mask[sl], np.nan, scores[sl])
        out[s - 1] = np.repeat(row, width)
    return ScoreMap(out, layout.N, layout.T)


def level_contrast(smap: ScoreMap, point_labels):
    """Per level: (mean score of cells whose node overlaps an anomaly, mean of the rest).

    Only the first T columns count; either entry is None when its set is empty.
    """
    labels = np.asarray(point_labels, dtype=bool)
    out = []
    for s in range(1, smap.S + 1):
        width = smap.N ** (smap.S - s)
        row = smap.values[s - 1, : smap.T]
        node_hit = np.zeros(smap.values.shape[1] // width, dtype=bool)
        for t in np.flatnonzero(labels):
            node_hit[t // width] = True
        hit = np.repeat(node_hit, width)[: smap.T]
        inside = row[hit]
        outside = row[~hit]
        out.append((inside.mean() if inside.size else None, outside.mean() if outside.size else None))
    return out
