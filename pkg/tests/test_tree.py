import math

import numpy as np
import pytest

from treemil import autodiff as ad
from treemil.discriminator import ancestor_set
from treemil.tree import TreeConfig, build_tree, embed_leaves, layout_for, num_levels, positional_table


def brute_pad(layout, s, i):
    """Recursive definition: a leaf is pad iff t > T; a parent iff all children are."""
    if s == layout.S:
        return i > layout.T
    return all(brute_pad(layout, s + 1, (i - 1) * layout.N + c) for c in range(1, layout.N + 1))


@pytest.mark.parametrize("T,N,S,padded", [(500, 2, 10, 512), (8, 2, 4, 8), (1, 2, 1, 1), (9, 3, 3, 9), (10, 3, 4, 27)])
def test_tree_config_sizes(T, N, S, padded):
    cfg = TreeConfig(N=N, T=T)
    assert cfg.S == S
    assert cfg.padded_len == padded


def test_num_levels_matches_log_formula():
    for N in (2, 3, 4, 5):
        for T in range(2, 200):
            assert num_levels(T, N) == math.ceil(round(math.log(T, N), 9)) + 1


def test_level_sizes_top_down():
    assert layout_for(2, 8).level_sizes == [1, 2, 4, 8]


@pytest.mark.parametrize("N", [2, 3, 4])
def test_pad_mask_matches_recursive_definition(N):
    for T in range(1, 34):
        layout = layout_for(N, T)
        for k in range(layout.n_nodes):
            s, i = layout.unflat(k)
            assert layout.pad_mask[k] == brute_pad(layout, s, i), (T, N, s, i)
        assert not layout.pad_mask[0]


@pytest.mark.parametrize("N", [2, 3])
def test_ancestor_chain_has_S_nodes(N):
    layout = layout_for(N, 20)
    for t in range(1, 21):
        assert len(ancestor_set(t, layout)) == layout.S


def params(D=2, d=4, seed=0):
    r = np.random.default_rng(seed)
    return ad.Tensor(r.normal(size=(d, D, 3))), ad.Tensor(np.zeros(d))


def test_zero_window_embeds_to_positional_encoding():
    w, b = params()
    layout = layout_for(2, 6)
    leaves = embed_leaves(np.zeros((2, 6)), w, b, layout).data[0]
    pe = positional_table(layout.padded_len, 4)
    np.testing.assert_array_equal(leaves[:6], pe[:6])
    np.testing.assert_array_equal(leaves[6:], 0.0)


def test_positional_table_is_fixed():
    a = positional_table(16, 8)
    assert not a.flags.writeable
    np.testing.assert_array_equal(a, positional_table(16, 8))


def test_embed_rejects_non_finite():
    w, b = params()
    with pytest.raises(ValueError, match="non-finite"):
        embed_leaves(np.array([[0.0, np.nan], [0.0, 0.0]]), w, b, layout_for(2, 2))


def test_parent_is_elementwise_max():
    tree = build_tree(np.array([[1.0, 4.0], [3.0, 2.0]]), layout_for(2, 2))
    np.testing.assert_array_equal(tree.levels[0].data[0, 0], [3.0, 4.0])


def test_pad_child_is_excluded_from_max():
    # T=3 with N=2: leaf 4 is pad, so node (2, 2) sees only leaf 3
    leaves = np.array([[0.0, 0.0], [0.0, 0.0], [-1.0, -4.0], [0.0, 0.0]])
    tree = build_tree(leaves, layout_for(2, 3))
    np.testing.assert_array_equal(tree.levels[1].data[0, 1], [-1.0, -4.0])


def test_all_pad_parent_is_zero():
    layout = layout_for(2, 5)  # padded_len 8, leaves 7-8 pad, node (3, 4) pad
    leaves = np.full((8, 3), -2.0)
    tree = build_tree(leaves, layout)
    assert layout.level_pad_mask(3)[3]
    np.testing.assert_array_equal(tree.levels[2].data[0, 3], 0.0)


def test_max_pool_dominance(rng):
    layout = layout_for(3, 20)
    leaves = rng.normal(size=(layout.padded_len, 5))
    leaves[layout.T :] = 0.0
    z = build_tree(leaves, layout).nodes.data[0]
    for k in range(layout.n_nodes):
        s, i = layout.unflat(k)
        if s == layout.S or layout.pad_mask[k]:
            continue
        for c in range(1, layout.N + 1):
            child = layout.flat(s + 1, (i - 1) * layout.N + c)
            if not layout.pad_mask[child]:
                assert np.all(z[k] >= z[child])


def test_shuffling_leaves_changes_tree():
    r = np.random.default_rng(7)
    layout = layout_for(2, 16)
    leaves = r.normal(size=(16, 4))
    shuffled = leaves[r.permutation(16)]
    a = build_tree(leaves, layout).nodes.data
    b = build_tree(shuffled, layout).nodes.data
    assert not np.array_equal(a[:, 1:], b[:, 1:])
    np.testing.assert_array_equal(a[:, 0], b[:, 0])  # the root max is order-free
