"""Matrix factorisation trained with the pairwise BPR loss."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..numerics import TRAIN_DTYPE
from ..params import LayerGroup, ParameterSet, Role
from .base import HyperParams, Model, sigmoid, softplus, uniform_init


class BPRModel(Model):
    kind = "bpr"

    def __init__(self, n_users, n_items, hp: HyperParams, rng=None, params=None, dtype=TRAIN_DTYPE):
        if params is None:
            d = hp.dim
            item = uniform_init(rng, (n_items + 1, d), dtype=dtype)
            item[0] = 0.0
            params = ParameterSet([
                LayerGroup("user_emb", Role.EMBEDDING, uniform_init(rng, (n_users, d), dtype=dtype)),
                LayerGroup("item_emb", Role.EMBEDDING, item),
            ])
        super().__init__(n_users, n_items, hp, params)

    def loss_and_grads(self, batch, rng=None, params=None, need_grads=True):
        """Summed ``-log sigmoid(x_ui - x_uj)`` plus L2 on the embedding rows in the batch."""
        P = self.params.flat() if params is None else params
        U, Q = P["user_emb.weight"], P["item_emb.weight"]
        batch = np.asarray(batch)
        u, i, j = batch[:, 0], batch[:, 1], batch[:, 2]
        if u.max(initial=0) >= self.n_users or u.min(initial=0) < 0:
            raise DataError("user id out of range")
        self.check_items(batch[:, 1:])
        pu, qi, qj = U[u], Q[i], Q[j]
        x = np.sum(pu * (qi - qj), axis=1)
        lam = self.hp.l2
        loss = softplus(-x).sum() + lam * (np.sum(pu * pu) + np.sum(qi * qi) + np.sum(qj * qj))
        if not need_grads:
            return loss, None
        dx = -sigmoid(-x)[:, None]
        gU = np.zeros_like(U)
        gQ = np.zeros_like(Q)
        np.add.at(gU, u, dx * (qi - qj) + 2 * lam * pu)
        np.add.at(gQ, i, dx * pu + 2 * lam * qi)
        np.add.at(gQ, j, -dx * pu + 2 * lam * qj)
        gQ[0] = 0.0
        return loss, {"user_emb.weight": gU, "item_emb.weight": gQ}

    def score_batch(self, users, histories=None):
        if users is None:
            raise DataError("BPR scoring needs user ids")
        users = np.asarray(users)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise DataError("user id out of range")
        P = self.params.flat()
        scores = P["user_emb.weight"][users] @ P["item_emb.weight"].T
        scores[:, 0] = -np.inf
        return scores
