"""The TreeMIL network: leaf embedding, tree pooling, K attention layers, shared head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import discriminator as disc
from .attention import extract_features, layer_param_shapes
from .config import RunConfig
from .tree import CONV_WIDTH, build_tree, embed_leaves, layout_for


def init_params(D, cfg: RunConfig, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices; zero biases; unit layer-norm gains."""

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def const(shape, value):
        return ad.Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)

    d = cfg.d
    params = {
        "embed.conv.weight": uniform((d, D, CONV_WIDTH), D * CONV_WIDTH),
        "embed.conv.bias": const((d,), 0.0),
    }
    for k in range(cfg.K):
        for name, shape in layer_param_shapes(cfg.attention()).items():
            key = f"layers.{k}.{name}"
            if name.endswith("gamma"):
                params[key] = const(shape, 1.0)
            elif len(shape) == 1:
                params[key] = const(shape, 0.0)
            else:
                params[key] = uniform(shape, shape[0])
    params["disc.w"] = uniform((d, 1), d)
    params["disc.b"] = const((1,), 0.0)
    return params


class TreeMIL:
    def __init__(self, D, cfg: RunConfig, params=None, rng=None):
        self.D = D
        self.cfg = cfg
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            params = init_params(D, cfg, rng)
        self.params = params

    @property
    def w(self):
        return self.params["disc.w"]

    @property
    def b(self):
        return self.params["disc.b"]

    def layers(self):
        out = []
        for k in range(self.cfg.K):
            prefix = f"layers.{k}."
            out.append({n[len(prefix) :]: p for n, p in self.params.items() if n.startswith(prefix)})
        return out

    def _batch(self, windows):
        x = np.asarray(windows, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.D:
            raise ValueError(f"expected windows of shape (B, {self.D}, T), got {x.shape}")
        return x

    def embed(self, windows):
        x = self._batch(windows)
        layout = layout_for(self.cfg.N, x.shape[-1])
        leaves = embed_leaves(x, self.params["embed.conv.weight"], self.params["embed.conv.bias"], layout)
        return build_tree(leaves, layout)

    def features(self, windows):
        return extract_features(self.embed(windows), self.layers(), self.cfg.attention())

    def series_probs(self, windows, H=None):
        H = H if H is not None else self.features(windows)
        return disc.series_score(H, self.w, self.b, self.cfg.pool)

    def loss(self, windows, labels):
        return disc.bce_loss(self.series_probs(windows), labels)

    # inference helpers return plain arrays

    def series_scores(self, windows):
        with ad.no_grad():
            return self.series_probs(windows).data.copy()

    def point_scores(self, windows, leaf_only=False):
        with ad.no_grad():
            H = self.features(windows)
            return disc.point_scores(H, self.w, self.b, self.cfg.pool, leaf_only).data.copy()

    def node_scores(self, windows):
        """Sigmoid score of every node, (B, n_nodes), plus the tree layout."""
        with ad.no_grad():
            H = self.features(windows)
            return disc.node_scores(H, self.w, self.b).data.copy(), H.layout

    def predict(self, windows, leaf_only=False):
        """Series scores (B,) and point scores (B, T) from one forward pass."""
        with ad.no_grad():
            H = self.features(windows)
            series = disc.series_score(H, self.w, self.b, self.cfg.pool).data.copy()
            points = disc.point_scores(H, self.w, self.b, self.cfg.pool, leaf_only).data.copy()
        return series, points
