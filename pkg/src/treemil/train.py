"""Mini-batch training on series-level labels."""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .data import stack

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    pass


class Trainer:
    """Owns the optimizer state, the shuffling RNG and the epoch counter of one run."""

    def __init__(self, model, rng=None, state=None, epoch=0):
        cfg = model.cfg
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        self.state = state or ad.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        self.opt = ad.Adam(model.params, state=self.state)
        self.epoch = epoch

    def run_epoch(self, x, y):
        """One pass over shuffled mini-batches; returns mean BCE per window."""
        n = len(y)
        order = self.rng.permutation(n)
        total = 0.0
        for i in range(0, n, self.model.cfg.batch):
            idx = order[i : i + self.model.cfg.batch]
            self.opt.zero_grad()
            loss = self.model.loss(x[idx], y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {self.epoch + 1}")
            loss.backward()
            self.opt.step()
            total += value
        self.epoch += 1
        return total / n

    def fit(self, windows, epochs=None, on_epoch=None):
        """Train until ``epochs`` total epochs (default: the config's), returning the loss log."""
        epochs = self.model.cfg.epochs if epochs is None else epochs
        x, y, _ = stack(windows)
        if len(np.unique(y)) < 2:
            log.warning("training set has a single class (all labels %d)", int(y[0]))
        losses = []
        while self.epoch < epochs:
            loss = self.run_epoch(x, y)
            losses.append((self.epoch, loss))
            log.debug("epoch %d loss %.6f", self.epoch, loss)
            if on_epoch is not None:
                on_epoch(self, loss)
        return losses


def mean_bce(model, windows, batch=64):
    """Mean per-window BCE of the current parameters, without building a graph."""
    x, y, _ = stack(windows)
    total = 0.0
    with ad.no_grad():
        for i in range(0, len(y), batch):
            total += model.loss(x[i : i + batch], y[i : i + batch]).item()
    return total / len(y)
