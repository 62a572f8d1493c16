import math

import numpy as np
import pytest

from treemil import autodiff as ad
from treemil import discriminator as disc
from treemil.attention import NodeFeatureSet
from treemil.tree import layout_for

from conftest import tiny_model


def features(T, d=4, B=1, N=2, seed=0):
    layout = layout_for(N, T)
    h = np.random.default_rng(seed).normal(size=(B, layout.n_nodes, d))
    h[:, layout.pad_mask] = 0.0
    return NodeFeatureSet(ad.Tensor(h), layout)


def test_zero_head_gives_half():
    H = features(7)
    p = disc.series_score(H, ad.Tensor(np.zeros((4, 1))), ad.Tensor([0.0]))
    assert p.data[0] == 0.5


def test_single_node_pool_is_identity():
    H = features(1)
    w = ad.Tensor(np.arange(4.0)[:, None])
    for pool in disc.POOLS:
        logit = disc.series_logits(H, w, ad.Tensor([0.5]), pool).data[0]
        assert logit == pytest.approx(H.nodes.data[0, 0] @ w.data[:, 0] + 0.5, abs=1e-15)


def test_max_pool_dominates_each_node_for_nonnegative_w():
    r = np.random.default_rng(9)
    for trial in range(50):
        H = features(int(r.integers(1, 20)), seed=trial)
        w = ad.Tensor(np.abs(r.normal(size=(4, 1))))
        b = ad.Tensor([r.normal()])
        series = disc.series_score(H, w, b, "max").data[0]
        nodes = disc.node_scores(H, w, b).data[0][~H.layout.pad_mask]
        assert np.all(series >= nodes - 1e-15)


def test_pad_nodes_excluded_from_series_pool():
    H = features(5)
    h = H.nodes.data.copy()
    h[:, H.layout.pad_mask] = 1e3  # would dominate a max if included
    H2 = NodeFeatureSet(ad.Tensor(h), H.layout)
    w, b = ad.Tensor(np.ones((4, 1))), ad.Tensor([0.0])
    assert disc.series_logits(H, w, b).data[0] == disc.series_logits(H2, w, b).data[0]


def test_bce_examples():
    assert disc.bce_loss([0.5], [1]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert disc.bce_loss([1.0], [1]).item() == pytest.approx(0.0, abs=1e-11)
    pair = disc.bce_loss([0.3, 0.9], [1, 0]).item()
    assert pair == pytest.approx(disc.bce_loss([0.3], [1]).item() + disc.bce_loss([0.9], [0]).item(), abs=1e-15)
    assert np.isfinite(disc.bce_loss([0.0, 1.0], [1, 0]).item())


def test_bce_rejects_bad_labels():
    with pytest.raises(ValueError, match="0 or 1"):
        disc.bce_loss([0.5], [2])


def test_ancestor_set_examples():
    layout = layout_for(2, 8)
    assert disc.ancestor_set(3, layout) == [(4, 3), (3, 2), (2, 1), (1, 1)]
    assert disc.ancestor_set(1, layout) == [(4, 1), (3, 1), (2, 1), (1, 1)]
    with pytest.raises(IndexError):
        disc.ancestor_set(9, layout)
    with pytest.raises(IndexError):
        disc.ancestor_set(0, layout)


@pytest.mark.parametrize("N", [2, 3])
def test_ancestor_spans_nest_and_cover(N):
    for T in range(1, 65):
        layout = layout_for(N, T)
        for t in range(1, T + 1):
            chain = disc.ancestor_set(t, layout)
            assert len(chain) == layout.S
            spans = [(layout.span_start[layout.flat(*m)], layout.span_end[layout.flat(*m)]) for m in chain]
            for lo, hi in spans:
                assert lo <= t <= hi
            for (lo1, hi1), (lo2, hi2) in zip(spans, spans[1:]):
                assert lo2 <= lo1 and hi1 <= hi2
            np.testing.assert_array_equal(layout.ancestors[t - 1], [layout.flat(*m) for m in chain[::-1]])


def naive_point_logits(H, w, b, pool):
    layout = H.layout
    h = H.nodes.data
    out = np.zeros((h.shape[0], layout.T))
    for t in range(1, layout.T + 1):
        members = [k for k in range(layout.n_nodes) if layout.span_start[k] <= t <= layout.span_end[k]]
        feats = h[:, members]
        pooled = feats.max(axis=1) if pool == "max" else feats.mean(axis=1)
        out[:, t - 1] = pooled @ w[:, 0] + b[0]
    return out


def test_point_scores_match_naive_enumeration():
    for seed, T in enumerate((1, 2, 7, 16, 23)):
        H = features(T, B=2, seed=seed)
        w, b = np.random.default_rng(seed).normal(size=(4, 1)), np.array([0.1])
        for pool in disc.POOLS:
            got = disc.point_logits(H, ad.Tensor(w), ad.Tensor(b), pool).data
            np.testing.assert_allclose(got, naive_point_logits(H, w, b, pool), atol=1e-12)


def test_single_step_point_score_equals_series_score():
    H = features(1)
    w, b = ad.Tensor(np.ones((4, 1))), ad.Tensor([0.2])
    assert disc.point_scores(H, w, b).data[0, 0] == disc.series_score(H, w, b).data[0]


def test_identical_leaves_get_identical_scores():
    layout = layout_for(2, 2)
    h = np.zeros((1, 3, 4))
    h[0, 0] = [1.0, 2.0, 3.0, 4.0]
    h[0, 1] = h[0, 2] = [0.5, -0.5, 0.1, 0.0]
    H = NodeFeatureSet(ad.Tensor(h), layout)
    s = disc.point_scores(H, ad.Tensor(np.ones((4, 1))), ad.Tensor([0.0])).data[0]
    assert s[0] == s[1]


def test_max_point_logit_bounded_by_series_logit():
    for seed in range(20):
        H = features(13, B=3, seed=seed)
        # H_t is a subset of H, so its elementwise max is dominated for any W
        pooled_t = H.nodes.data[:, H.layout.ancestors].max(axis=2)
        pooled = np.where(~H.layout.pad_mask[None, :, None], H.nodes.data, -np.inf).max(axis=1)
        assert np.all(pooled_t <= pooled[:, None, :])
        # the logit bound then follows whenever W is nonnegative
        w, b = ad.Tensor(np.abs(np.random.default_rng(seed).normal(size=(4, 1)))), ad.Tensor([0.3])
        point = disc.point_logits(H, w, b, "max").data
        series = disc.series_logits(H, w, b, "max").data
        assert np.all(point.max(axis=1) <= series + 1e-12)


def test_heads_share_parameters():
    model = tiny_model(T=8)
    x = np.random.default_rng(0).normal(size=(1, 3, 8))
    before_series, before_points = model.predict(x)
    assert model.params["disc.w"] is model.w
    model.params["disc.w"].data = model.params["disc.w"].data + 0.5
    after_series, after_points = model.predict(x)
    assert not np.allclose(before_series, after_series)
    assert not np.allclose(before_points, after_points)


def test_threshold_labels_and_monotonicity():
    scores = np.random.default_rng(0).uniform(size=200)
    low = disc.PointPrediction(scores, 0.3)
    high = disc.PointPrediction(scores, 0.7)
    np.testing.assert_array_equal(low.labels, scores >= 0.3)
    assert not np.any(high.labels & ~low.labels)
    with pytest.raises(ValueError):
        disc.PointPrediction(scores, 1.0)


def test_leaf_only_uses_just_the_leaf():
    H = features(8, B=1)
    w, b = ad.Tensor(np.ones((4, 1))), ad.Tensor([0.0])
    leaf_logits = disc.point_logits(H, w, b, leaf_only=True).data[0]
    leaves = H.nodes.data[0, H.layout.level_slice(H.layout.S)]
    np.testing.assert_allclose(leaf_logits, leaves.sum(axis=1), atol=1e-14)
