"""Neighbourhood attention over tree nodes.

Each node attends to itself, its children, up to ``l // 2`` same-level
neighbours on each side, and its parent. Pad nodes take no part: they are
masked out of every softmax and their outputs are pinned to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .tree import TreeLayout, layout_for


@dataclass(frozen=True)
class AttentionConfig:
    l: int = 3
    K: int = 2
    d: int = 128
    heads: int = 4
    ffn_hidden: int | None = None

    def __post_init__(self):
        if self.l < 0:
            raise ValueError(f"l must be >= 0, got {self.l}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.heads < 1 or self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 4 * self.d)

    @property
    def d_K(self):
        return self.d // self.heads


def neighborhood(s, i, layout: TreeLayout, l):
    """Ordered (level, index) members of node (s, i)'s attention set.

    Order: self, children left to right, same-level neighbours left to
    right, parent. Members outside the tree or pad-masked are dropped; a
    pad-masked node gets an empty set.
    """
    k = layout.flat(s, i)
    if layout.pad_mask[k]:
        return []
    N, half = layout.N, l // 2
    members = [(s, i)]
    if s < layout.S:
        members += [(s + 1, (i - 1) * N + c) for c in range(1, N + 1)]
    size = layout.level_sizes[s - 1]
    members += [(s, j) for j in range(i - half, i + half + 1) if j != i and 1 <= j <= size]
    if s > 1:
        members.append((s - 1, -(-i // N)))
    return [m for m in members if not layout.pad_mask[layout.flat(*m)]]


@lru_cache(maxsize=64)
def neighbor_table(N, T, l):
    """Padded gather table for all nodes: (index, valid), each (n_nodes, M).

    Invalid slots point at the node itself. Pad nodes keep only their self
    slot valid so their softmax row stays finite; their output is zeroed later.
    """
    layout = layout_for(N, T)
    M = 1 + N + 2 * (l // 2) + 1
    index = np.zeros((layout.n_nodes, M), dtype=int)
    valid = np.zeros((layout.n_nodes, M), dtype=bool)
    for k in range(layout.n_nodes):
        s, i = layout.unflat(k)
        index[k, :] = k
        members = neighborhood(s, i, layout, l)
        if not members:
            valid[k, 0] = True
            continue
        for slot, m in enumerate(members):
            index[k, slot] = layout.flat(*m)
            valid[k, slot] = True
    index.setflags(write=False)
    valid.setflags(write=False)
    return index, valid


@dataclass
class NodeFeatureSet:
    """Attention-refined features h for every node, shape (B, n_nodes, d)."""

    nodes: ad.Tensor
    layout: TreeLayout

    @property
    def levels(self):
        return [self.nodes[:, self.layout.level_slice(s)] for s in range(1, self.layout.S + 1)]

    @property
    def pad_masks(self):
        return [self.layout.level_pad_mask(s) for s in range(1, self.layout.S + 1)]


def layer_param_shapes(cfg: AttentionConfig):
    d, f = cfg.d, cfg.ffn_hidden
    return {
        "wq": (d, d),
        "wk": (d, d),
        "wv": (d, d),
        "wo": (d, d),
        "ffn.w1": (d, f),
        "ffn.b1": (f,),
        "ffn.w2": (f, d),
        "ffn.b2": (d,),
        "ln1.gamma": (d,),
        "ln1.beta": (d,),
        "ln2.gamma": (d,),
        "ln2.beta": (d,),
    }


def node_attention(x, layer, layout: TreeLayout, cfg: AttentionConfig):
    """Multi-head attention of every node over its neighbourhood.

    Returns the concatenated per-head context (before the output projection)
    with shape (B, n_nodes, d), and the attention weights (B, n_nodes, M, heads).
    """
    index, valid = neighbor_table(layout.N, layout.T, cfg.l)
    B, n, d = x.shape
    H, dk = cfg.heads, cfg.d_K
    M = index.shape[1]
    q = (x @ layer["wq"]).reshape(B, n, 1, H, dk)
    k = (x @ layer["wk"])[:, index].reshape(B, n, M, H, dk)
    v = (x @ layer["wv"])[:, index].reshape(B, n, M, H, dk)
    logits = (q * k).sum(axis=-1) / np.sqrt(dk)
    logits = ad.where(valid[None, :, :, None], logits, -np.inf)
    weights = ad.softmax(logits, axis=2)
    context = (weights.reshape(B, n, M, H, 1) * v).sum(axis=2)
    return context.reshape(B, n, d), weights


def attend(x, layer, layout: TreeLayout, cfg: AttentionConfig):
    """One post-norm transformer block restricted to tree neighbourhoods."""
    nodes = x.nodes if hasattr(x, "nodes") else x
    context, _ = node_attention(nodes, layer, layout, cfg)
    h = ad.layer_norm(nodes + context @ layer["wo"], layer["ln1.gamma"], layer["ln1.beta"])
    ff = ad.relu(h @ layer["ffn.w1"] + layer["ffn.b1"]) @ layer["ffn.w2"] + layer["ffn.b2"]
    h = ad.layer_norm(h + ff, layer["ln2.gamma"], layer["ln2.beta"])
    if layout.pad_mask.any():
        h = h * (~layout.pad_mask)[None, :, None].astype(np.float64)
    return NodeFeatureSet(nodes=h, layout=layout)


def extract_features(tree, layers, cfg: AttentionConfig):
    """Apply ``attend`` once per layer parameter set."""
    if not layers:
        raise ValueError("extract_features needs at least one layer")
    out = tree
    for layer in layers:
        out = attend(out, layer, tree.layout, cfg)
    return out
