"""Average-pooled history encoder with one ReLU layer and a full softmax over items."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import DataError
from ..numerics import TRAIN_DTYPE
from ..params import LayerGroup, ParameterSet, Role
from .base import HyperParams, Model, uniform_init, xavier_init

log = logging.getLogger(__name__)


class AvgPoolDNNModel(Model):
    """User vector = mean embedding of the history; output column j scores item j+1."""

    kind = "dnn"

    def __init__(self, n_users, n_items, hp: HyperParams, rng=None, params=None, dtype=TRAIN_DTYPE):
        if params is None:
            d = hp.dim
            item = uniform_init(rng, (n_items + 1, d), dtype=dtype)
            item[0] = 0.0
            params = ParameterSet([
                LayerGroup("item_emb", Role.EMBEDDING, item),
                LayerGroup("hidden", Role.MIDDLE, xavier_init(rng, d, d, dtype),
                           {"bias": np.zeros(d, dtype=dtype)}),
                LayerGroup("output", Role.SOFTMAX, xavier_init(rng, d, n_items, dtype),
                           {"bias": np.zeros(n_items, dtype=dtype)}),
            ])
        super().__init__(n_users, n_items, hp, params)

    def _encode(self, P, hist):
        mask = (hist > 0).astype(P["item_emb.weight"].dtype)
        cnt = mask.sum(axis=1, keepdims=True)
        user = (P["item_emb.weight"][hist] * mask[..., None]).sum(axis=1) / cnt
        z = user @ P["hidden.weight"] + P["hidden.bias"]
        r = np.maximum(z, 0)
        logits = r @ P["output.weight"] + P["output.bias"]
        return mask, cnt, user, z, r, logits

    def loss_and_grads(self, batch, rng=None, params=None, need_grads=True):
        """Mean softmax cross-entropy plus ``l2 * ||W||^2`` over all weight matrices."""
        P = self.params.flat() if params is None else params
        hist, target = batch
        hist = np.asarray(hist)
        target = np.asarray(target)
        self.check_items(hist)
        self.check_items(target)
        keep = (hist > 0).any(axis=1)
        if not keep.all():
            log.warning("skipping %d samples with empty history", int((~keep).sum()))
            hist, target = hist[keep], target[keep]
        if target.min(initial=1) < 1:
            raise DataError("target must be a real item id")
        n = len(target)
        mask, cnt, user, z, r, logits = self._encode(P, hist)
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(n)
        nll = lse - shifted[rows, target - 1]
        weights = ("item_emb.weight", "hidden.weight", "output.weight")
        lam = self.hp.l2
        loss = nll.mean() + lam * sum(np.sum(P[k] * P[k]) for k in weights)
        if not need_grads:
            return loss, None
        dlogits = np.exp(shifted - lse[:, None])
        dlogits[rows, target - 1] -= 1.0
        dlogits /= n
        g = {
            "output.weight": r.T @ dlogits + 2 * lam * P["output.weight"],
            "output.bias": dlogits.sum(axis=0),
        }
        dz = (dlogits @ P["output.weight"].T) * (z > 0)
        g["hidden.weight"] = user.T @ dz + 2 * lam * P["hidden.weight"]
        g["hidden.bias"] = dz.sum(axis=0)
        duser = dz @ P["hidden.weight"].T / cnt
        gE = 2 * lam * P["item_emb.weight"]
        np.add.at(gE, hist, duser[:, None, :] * mask[..., None])
        gE[0] = 0.0
        g["item_emb.weight"] = gE
        return loss, g

    def score_batch(self, users, histories):
        if histories is None:
            raise DataError("DNN scoring needs item histories")
        histories = np.asarray(histories)
        self.check_items(histories)
        if not (histories > 0).any(axis=1).all():
            raise DataError("empty history")
        logits = self._encode(self.params.flat(), histories)[-1]
        out = np.empty((logits.shape[0], self.n_items + 1), dtype=logits.dtype)
        out[:, 0] = -np.inf
        out[:, 1:] = logits
        return out
