"""N-ary temporal tree: index layout, leaf embedding and bottom-up max pooling.

Levels are numbered 1 (root) to S (leaves); node indices within a level are
1-based in the public helpers. Internally all nodes of a window live in one
flat array ordered root first, level by level, left to right.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from . import autodiff as ad

CONV_WIDTH = 3


def num_levels(T, N):
    """ceil(log_N T) + 1, computed with integers to avoid float log error."""
    if T < 1 or N < 2:
        raise ValueError(f"need T >= 1 and N >= 2, got T={T}, N={N}")
    s, span = 1, 1
    while span < T:
        span *= N
        s += 1
    return s


@dataclass(frozen=True)
class TreeConfig:
    N: int
    T: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    @property
    def S(self):
        return num_levels(self.T, self.N)

    @property
    def padded_len(self):
        return self.N ** (self.S - 1)


class TreeLayout:
    """Index bookkeeping for one (N, T) tree, shared by every window of that size."""

    def __init__(self, cfg: TreeConfig):
        self.cfg = cfg
        self.N, self.T, self.S = cfg.N, cfg.T, cfg.S
        self.padded_len = cfg.padded_len
        self.level_sizes = [self.N ** (s - 1) for s in range(1, self.S + 1)]
        self.offsets = np.concatenate([[0], np.cumsum(self.level_sizes)]).astype(int)
        self.n_nodes = int(self.offsets[-1])

        # node spans in 1-based time steps, inclusive
        starts, ends, levels = [], [], []
        for s, size in enumerate(self.level_sizes, start=1):
            width = self.N ** (self.S - s)
            i = np.arange(size)
            starts.append(i * width + 1)
            ends.append((i + 1) * width)
            levels.append(np.full(size, s))
        self.span_start = np.concatenate(starts)
        self.span_end = np.concatenate(ends)
        self.node_level = np.concatenate(levels)
        self.pad_mask = self.span_start > self.T

    def flat(self, s, i):
        """Flat position of node ``i`` (1-based) at level ``s``."""
        if not (1 <= s <= self.S) or not (1 <= i <= self.level_sizes[s - 1]):
            raise IndexError(f"no node ({s}, {i}) in a tree with S={self.S}, N={self.N}")
        return int(self.offsets[s - 1] + i - 1)

    def unflat(self, k):
        s = int(np.searchsorted(self.offsets, k, side="right"))
        return s, int(k - self.offsets[s - 1] + 1)

    def level_slice(self, s):
        return slice(int(self.offsets[s - 1]), int(self.offsets[s]))

    def level_pad_mask(self, s):
        return self.pad_mask[self.level_slice(s)]

    def span_width(self, s):
        return self.N ** (self.S - s)

    @cached_property
    def ancestors(self):
        """(T, S) flat indices; column j is level j+1, so the leaf is last."""
        t = np.arange(1, self.T + 1)
        cols = []
        for s in range(1, self.S + 1):
            idx = (t - 1) // self.span_width(s)  # 0-based ceil(t / N^(S-s)) - 1
            cols.append(self.offsets[s - 1] + idx)
        return np.stack(cols, axis=1)


@lru_cache(maxsize=64)
def layout_for(N, T):
    return TreeLayout(TreeConfig(N=N, T=T))


@lru_cache(maxsize=64)
def positional_table(length, d):
    """Fixed sinusoidal encoding for positions 1..length, shape (length, d)."""
    pos = np.arange(1, length + 1, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    freq = np.power(10000.0, -(2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(pos * freq), np.cos(pos * freq))
    table.setflags(write=False)
    return table


@dataclass
class TreeEmbedding:
    """All node embeddings z of a batch of windows, shape (B, n_nodes, d)."""

    nodes: ad.Tensor
    layout: TreeLayout

    @property
    def levels(self):
        return [self.nodes[:, self.layout.level_slice(s)] for s in range(1, self.layout.S + 1)]

    @property
    def pad_masks(self):
        return [self.layout.level_pad_mask(s) for s in range(1, self.layout.S + 1)]


def embed_leaves(windows, conv_weight, conv_bias, layout: TreeLayout):
    """Conv + fixed positional encoding per time step; zero rows for pad leaves.

    ``windows`` has shape (B, D, T) (a single D x T window is promoted).
    Returns a (B, padded_len, d) tensor.
    """
    x = np.asarray(windows.data if isinstance(windows, ad.Tensor) else windows, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != layout.T or x.shape[1] != conv_weight.shape[1]:
        raise ad.ShapeError("embed_leaves", x.shape, (None, conv_weight.shape[1], layout.T))
    if not np.all(np.isfinite(x)):
        raise ValueError("embed_leaves: window contains non-finite values")
    B = x.shape[0]
    d = conv_weight.shape[0]
    h = ad.conv1d(windows if isinstance(windows, ad.Tensor) else x, conv_weight, conv_bias)
    leaves = h.transpose(0, 2, 1) + positional_table(layout.padded_len, d)[: layout.T]
    n_pad = layout.padded_len - layout.T
    if n_pad:
        leaves = ad.concatenate([leaves, np.zeros((B, n_pad, d))], axis=1)
    return leaves


def build_tree(leaves, layout: TreeLayout):
    """Max-pool each group of N children into its parent, bottom-up.

    Pad children are left out of the max; a parent whose children are all
    pad gets a zero embedding.
    """
    leaves = leaves if isinstance(leaves, ad.Tensor) else ad.Tensor(leaves)
    if leaves.ndim == 2:
        leaves = leaves.reshape(1, *leaves.shape)
    B, P, d = leaves.shape
    if P != layout.padded_len:
        raise ad.ShapeError("build_tree", leaves.shape, (B, layout.padded_len, d))
    N = layout.N
    levels = [leaves]
    current = leaves
    for s in range(layout.S - 1, 0, -1):
        child_pad = layout.level_pad_mask(s + 1).reshape(-1, N)
        groups = current.reshape(B, child_pad.shape[0], N, d)
        masked = ad.where(~child_pad[None, :, :, None], groups, -np.inf)
        parent = ad.max(masked, axis=2)
        parent_pad = layout.level_pad_mask(s)
        if parent_pad.any():
            parent = ad.where(~parent_pad[None, :, None], parent, 0.0)
        levels.append(parent)
        current = parent
    nodes = ad.concatenate(levels[::-1], axis=1) if len(levels) > 1 else levels[0]
    return TreeEmbedding(nodes=nodes, layout=layout)
