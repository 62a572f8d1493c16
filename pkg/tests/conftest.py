import numpy as np
import pytest

from treemil import autodiff as ad
from treemil.config import RunConfig
from treemil.model import TreeMIL


def numeric_grad(f, arr, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def grad_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    """Elementwise |a - n| <= atol + rtol * max(|a|, |n|)."""
    err = np.abs(analytic - numeric)
    return bool(np.all(err <= atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))))


def tiny_model(D=3, T=16, seed=0, **overrides):
    kw = dict(T=T, N=2, K=1, d=8, heads=2, epochs=1, seed=seed)
    kw.update(overrides)
    return TreeMIL(D, RunConfig(**kw))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return tiny_model()


def leaf(values):
    return ad.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
