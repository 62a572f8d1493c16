import numpy as np
import pytest

from treemil import autodiff as ad
from treemil.attention import (
    AttentionConfig,
    attend,
    extract_features,
    neighbor_table,
    neighborhood,
    node_attention,
)
from treemil.tree import layout_for

from conftest import tiny_model


def test_interior_node_has_six_members():
    layout = layout_for(2, 16)  # S = 5
    members = neighborhood(3, 2, layout, l=3)
    assert members == [(3, 2), (4, 3), (4, 4), (3, 1), (3, 3), (2, 1)]


def test_root_of_single_step_tree_is_alone():
    assert neighborhood(1, 1, layout_for(2, 1), l=3) == [(1, 1)]


def test_leftmost_leaf():
    layout = layout_for(2, 16)
    assert neighborhood(layout.S, 1, layout, l=3) == [(5, 1), (5, 2), (4, 1)]


def test_pad_members_dropped():
    layout = layout_for(2, 5)  # leaves 6..8 pad
    assert neighborhood(4, 5, layout, l=3) == [(4, 5), (4, 4), (3, 3)]
    assert neighborhood(4, 7, layout, l=3) == []


def test_wider_neighbourhood():
    layout = layout_for(3, 27)
    members = neighborhood(3, 5, layout, l=5)
    assert members[:1 + 3] == [(3, 5), (4, 13), (4, 14), (4, 15)]
    assert members[4:8] == [(3, 3), (3, 4), (3, 6), (3, 7)]
    assert members[-1] == (2, 2)


def test_invalid_node_raises():
    with pytest.raises(IndexError):
        neighborhood(2, 3, layout_for(2, 4), l=3)


def test_attention_config_checks():
    with pytest.raises(ValueError):
        AttentionConfig(d=10, heads=4)
    with pytest.raises(ValueError):
        AttentionConfig(K=0)
    assert AttentionConfig().d_K == 32
    assert AttentionConfig().ffn_hidden == 512


def test_table_never_points_at_pad_nodes():
    for T in (5, 11, 16):
        layout = layout_for(2, T)
        index, valid = neighbor_table(2, T, 3)
        for k in range(layout.n_nodes):
            if layout.pad_mask[k]:
                continue
            assert not layout.pad_mask[index[k][valid[k]]].any()


def layer_and_input(T=8, d=8, heads=2, seed=0):
    model = tiny_model(T=T, d=d, heads=heads, seed=seed)
    tree = model.embed(np.random.default_rng(seed).normal(size=(2, 3, T)))
    return model, tree


def test_singleton_neighbourhood_returns_value_projection():
    model, tree = layer_and_input(T=1)
    layer = model.layers()[0]
    ctx, weights = node_attention(tree.nodes, layer, tree.layout, model.cfg.attention())
    np.testing.assert_allclose(ctx.data, (tree.nodes @ layer["wv"]).data, atol=1e-14)
    np.testing.assert_array_equal(weights.data[:, :, 0], 1.0)


def test_identical_keys_split_attention_evenly():
    layout = layout_for(2, 2)  # root + 2 leaves; leaf 1 sees leaf 1, leaf 2, root
    cfg = AttentionConfig(l=3, K=1, d=4, heads=1)
    x = ad.Tensor(np.array([[[1.0, 0, 0, 0], [1.0, 0, 0, 0], [1.0, 0, 0, 0]]]))
    eye = ad.Tensor(np.eye(4))
    _, w = node_attention(x, {"wq": eye, "wk": eye, "wv": eye}, layout, cfg)
    np.testing.assert_allclose(w.data[0, 1, :3, 0], [1 / 3] * 3, atol=1e-15)
    # root attends to self + two children, all tied
    np.testing.assert_allclose(w.data[0, 0, :3, 0], [1 / 3] * 3, atol=1e-15)


def test_two_tied_members():
    # T=1 has a single node; use a 2-level tree with l=0 so leaves see self + parent
    layout = layout_for(2, 2)
    cfg = AttentionConfig(l=0, K=1, d=2, heads=1)
    x = ad.Tensor(np.array([[[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]]]))
    eye = ad.Tensor(np.eye(2))
    _, w = node_attention(x, {"wq": eye, "wk": eye, "wv": eye}, layout, cfg)
    index, valid = neighbor_table(2, 2, 0)
    leaf = 1
    assert valid[leaf].sum() == 2
    np.testing.assert_allclose(w.data[0, leaf][valid[leaf]][:, 0], [0.5, 0.5], atol=1e-15)


def test_weights_sum_to_one_and_skip_pad():
    model, tree = layer_and_input(T=11)
    _, w = node_attention(tree.nodes, model.layers()[0], tree.layout, model.cfg.attention())
    np.testing.assert_allclose(w.data.sum(axis=2), 1.0, atol=1e-12)
    index, valid = neighbor_table(2, 11, 3)
    layout = tree.layout
    live = ~layout.pad_mask
    masked_weight = w.data[:, live][:, ~valid[live]]
    assert np.all(masked_weight == 0.0)
    points_at_pad = layout.pad_mask[index[live]]
    assert np.all(w.data[:, live][:, points_at_pad] == 0.0)


def test_extract_features_k1_is_single_attend():
    model, tree = layer_and_input()
    cfg = model.cfg.attention()
    one = extract_features(tree, model.layers()[:1], cfg).nodes.data
    direct = attend(tree, model.layers()[0], tree.layout, cfg).nodes.data
    np.testing.assert_array_equal(one, direct)


def test_pad_nodes_stay_zero_and_shapes_hold():
    model = tiny_model(T=11, K=2)
    tree = model.embed(np.random.default_rng(0).normal(size=(3, 3, 11)))
    H = extract_features(tree, model.layers(), model.cfg.attention())
    assert H.nodes.shape == tree.nodes.shape
    for zl, hl in zip(tree.levels, H.levels):
        assert zl.shape == hl.shape
    np.testing.assert_array_equal(H.nodes.data[:, tree.layout.pad_mask], 0.0)


def test_batch_order_equivariance():
    model = tiny_model(T=9)
    x = np.random.default_rng(2).normal(size=(4, 3, 9))
    perm = np.array([2, 0, 3, 1])
    a = model.features(x).nodes.data
    b = model.features(x[perm]).nodes.data
    np.testing.assert_array_equal(a[perm], b)
    single = model.features(x[1:2]).nodes.data
    np.testing.assert_allclose(a[1:2], single, atol=1e-12)


def test_every_live_node_receives_gradient():
    model = tiny_model(T=13, K=2)
    x = np.random.default_rng(3).normal(size=(2, 3, 13))
    tree = model.embed(x)
    H = extract_features(tree, model.layers(), model.cfg.attention())
    from treemil import discriminator as disc

    loss = disc.bce_loss(disc.series_score(H, model.w, model.b, "mean"), [1.0, 0.0])
    loss.backward()
    g = tree.nodes.grad
    live = ~tree.layout.pad_mask
    assert g is not None
    assert np.all(np.abs(g[:, live]).sum(axis=-1) > 0)
