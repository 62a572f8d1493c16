"""Series ingestion, synthetic anomaly generation, windowing and splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, coerce_fields, parse_kv

log = logging.getLogger(__name__)

KINDS = ("point", "collective")


class DataError(ValueError):
    pass


@dataclass
class SeriesDataset:
    values: np.ndarray  # (D, L)
    point_labels: np.ndarray  # (L,) bool
    name: str = "series"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.point_labels = np.asarray(self.point_labels, dtype=bool)
        if self.values.ndim != 2 or self.point_labels.shape != (self.values.shape[1],):
            raise DataError(f"values {self.values.shape} and labels {self.point_labels.shape} disagree")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")

    @property
    def D(self):
        return self.values.shape[0]

    @property
    def L(self):
        return self.values.shape[1]


@dataclass
class Window:
    values: np.ndarray  # (D, T)
    series_label: int
    point_labels: np.ndarray  # (T,) bool, evaluation only

    def __post_init__(self):
        self.point_labels = np.asarray(self.point_labels, dtype=bool)
        if self.series_label != int(self.point_labels.any()):
            raise DataError(f"series_label={self.series_label} contradicts point labels")


def segment(series: SeriesDataset, T):
    """Non-overlapping windows of length T; the trailing remainder is dropped."""
    if T < 1:
        raise DataError(f"window length must be >= 1, got {T}")
    if T > series.L:
        raise DataError(f"window length {T} exceeds series length {series.L}")
    M = series.L // T
    dropped = series.L - M * T
    if dropped:
        log.info("%s: dropped %d trailing time steps (L=%d, T=%d)", series.name, dropped, series.L, T)
    windows = []
    for i in range(M):
        labels = series.point_labels[i * T : (i + 1) * T]
        windows.append(Window(series.values[:, i * T : (i + 1) * T], int(labels.any()), labels))
    return windows


def split(windows, train_fraction, seed):
    """Stratified, seeded train/test partition with floor(fraction * n) training windows."""
    if not 0 < train_fraction < 1:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(windows)
    n_train = math.floor(train_fraction * n)
    if n_train < 1 or n_train >= n:
        raise DataError(f"cannot split {n} windows with train_fraction={train_fraction}")
    rng = np.random.default_rng(seed)
    labels = np.array([w.series_label for w in windows])
    pos = rng.permutation(np.flatnonzero(labels == 1))
    neg = rng.permutation(np.flatnonzero(labels == 0))

    if len(pos) and len(neg):
        if len(pos) < 2 or len(neg) < 2 or n_train < 2 or n - n_train < 2:
            raise DataError(f"too few windows to stratify ({len(pos)} positive, {len(neg)} negative)")
        n_pos = min(max(round(train_fraction * len(pos)), 1), len(pos) - 1)
        n_neg = min(max(n_train - n_pos, 1), len(neg) - 1)
        n_pos = n_train - n_neg
        if not 1 <= n_pos <= len(pos) - 1:
            raise DataError(f"too few windows to stratify ({len(pos)} positive, {len(neg)} negative)")
        train_idx = np.concatenate([pos[:n_pos], neg[:n_neg]])
    else:
        train_idx = np.concatenate([pos, neg])[:n_train]
    in_train = np.zeros(n, dtype=bool)
    in_train[train_idx] = True
    train = [w for w, t in zip(windows, in_train) if t]
    test = [w for w, t in zip(windows, in_train) if not t]
    return train, test


# ------------------------------------------------------------------ synthesis


@dataclass
class SynthSpec:
    D: int = 4
    L: int = 6400
    T: int = 64
    kinds: tuple = KINDS
    min_len: int = 4
    max_len: int = 16
    ratio: float = 0.1
    seed: int = 0
    noise: float = 0.1
    name: str = "synthetic"

    def __post_init__(self):
        if isinstance(self.kinds, str):
            self.kinds = tuple(k.strip() for k in self.kinds.split(",") if k.strip())
        self.kinds = tuple(self.kinds)

        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.D >= 1, "D", f"must be >= 1, got {self.D}")
        need(self.T >= 1, "T", f"must be >= 1, got {self.T}")
        need(self.L >= self.T, "L", f"must be >= T={self.T}, got {self.L}")
        need(self.kinds and all(k in KINDS for k in self.kinds), "kinds", f"must be a non-empty subset of {KINDS}, got {self.kinds}")
        need(1 <= self.min_len <= self.max_len < self.T, "min_len", f"need 1 <= min_len <= max_len < T, got {self.min_len}, {self.max_len}, T={self.T}")
        need(0 <= self.ratio < 0.5, "ratio", f"must lie in [0, 0.5), got {self.ratio}")
        need(self.noise > 0, "noise", f"must be positive, got {self.noise}")

    @classmethod
    def from_text(cls, text):
        return cls(**coerce_fields(cls, parse_kv(text)))

    def to_text(self):
        return "".join(
            f"{k}={','.join(v) if k == 'kinds' else v}\n"
            for k, v in self.__dict__.items()
        )


def _place(occupied, length, rng, tries=1000):
    """Random start for a run of ``length`` free steps with a free step on each side."""
    L = len(occupied)
    for _ in range(tries):
        start = int(rng.integers(0, L - length + 1))
        lo, hi = max(start - 1, 0), min(start + length + 1, L)
        if not occupied[lo:hi].any():
            return start
    return None


def synthesize(spec: SynthSpec):
    """Sinusoids plus Gaussian noise with injected point and collective anomalies.

    Point anomalies are single-step spikes of 30-50 noise deviations.
    Collective anomalies replace a run of ``min_len..max_len`` steps on every
    channel with either a 3-5x faster oscillation or the same oscillation at
    5-20% of its amplitude. Period and amplitude are redrawn for every block
    of T steps, so series from different seeds share one distribution of
    shapes. Anomalies never touch each other, and the labelled step count
    tracks ``ratio * L``.
    """
    rng = np.random.default_rng(spec.seed)
    D, L = spec.D, spec.L
    # a fresh period and amplitude per block of T steps, phase kept continuous
    blocks = -(-L // spec.T)
    period = np.repeat(rng.uniform(12.0, 40.0, size=(D, blocks)), spec.T, axis=1)[:, :L]
    amp = np.repeat(rng.uniform(0.8, 1.2, size=(D, blocks)), spec.T, axis=1)[:, :L]
    start_phase = rng.uniform(0.0, 2 * np.pi, size=(D, 1))
    phase = start_phase + np.cumsum(2 * np.pi / period, axis=1) - 2 * np.pi / period
    clean = amp * np.sin(phase)
    values = clean + rng.normal(0.0, spec.noise, size=(D, L))
    labels = np.zeros(L, dtype=bool)

    budget = round(spec.ratio * L)
    while labels.sum() < budget:
        remaining = budget - int(labels.sum())
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        if kind == "collective" and ("point" not in spec.kinds or remaining >= spec.min_len):
            length = int(rng.integers(spec.min_len, max(min(spec.max_len, remaining), spec.min_len) + 1))
        else:
            kind, length = "point", 1
        start = _place(labels, length, rng)
        if start is None:
            raise ConfigError("ratio", f"cannot place {budget} anomalous steps in L={L} (infeasible ratio/length)")
        seg = slice(start, start + length)
        if kind == "point":
            sign = rng.choice([-1.0, 1.0], size=D)
            values[:, start] += sign * rng.uniform(30.0, 50.0, size=D) * spec.noise
        else:
            # faster oscillation or shrunken amplitude, both phase-continuous at the start
            fast = rng.random() < 0.5
            factor = rng.uniform(3.0, 5.0) if fast else 1.0
            scale = 1.0 if fast else rng.uniform(0.05, 0.2)
            local = np.arange(length, dtype=np.float64)
            values[:, seg] = (
                scale * amp[:, seg] * np.sin(phase[:, start : start + 1] + 2 * np.pi * factor * local / period[:, seg])
                + rng.normal(0.0, spec.noise, size=(D, length))
            )
        labels[seg] = True
    return SeriesDataset(values, labels, name=spec.name)


# ---------------------------------------------------------------- file format


def write_dataset(series: SeriesDataset, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"dim_{j + 1}" for j in range(series.D)] + ["label"])
        for col, lab in zip(series.values.T, series.point_labels):
            writer.writerow([format(v, ".17g") for v in col] + [int(lab)])


def read_dataset(path, name=None):
    """Read ``dim_1,...,dim_D,label`` CSV; rows with non-finite values are skipped and counted."""
    rows, labels, rejected = [], [], 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "label" or len(header) < 2:
            raise DataError(f"{path}: header must be dim_1,...,dim_D,label")
        D = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != D + 1:
                raise DataError(f"{path}:{lineno}: expected {D + 1} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:D]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable value in {row[:D]}") from None
            lab = row[D].strip()
            if lab not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {lab!r}")
            if not all(math.isfinite(v) for v in vals):
                rejected += 1
                continue
            rows.append(vals)
            labels.append(lab == "1")
    if rejected:
        log.warning("%s: rejected %d rows with non-finite values", path, rejected)
    if not rows:
        raise DataError(f"{path}: no usable rows")
    return SeriesDataset(np.array(rows).T, np.array(labels), name=name or str(path))


def stack(windows):
    """Windows -> (values (B, D, T), series labels (B,), point labels (B, T))."""
    return (
        np.stack([w.values for w in windows]),
        np.array([w.series_label for w in windows], dtype=np.float64),
        np.stack([w.point_labels for w in windows]),
    )
