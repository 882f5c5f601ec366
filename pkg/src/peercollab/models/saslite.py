"""Causal single-head self-attention next-item model.

Pre-norm blocks (attention then feed-forward, both residual), a final
layer norm and a ``d x d`` output projection whose result is dotted with
the shared item embedding table. Trained with binary cross-entropy against
one sampled negative per position.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DataError
from ..numerics import TRAIN_DTYPE
from ..params import LayerGroup, ParameterSet, Role
from .base import HyperParams, Model, sigmoid, softplus, uniform_init, xavier_init

LN_EPS = 1e-8


def _ln_forward(x, gain, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + shift, (xhat, inv)


def _ln_backward(dy, gain, cache):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=(0, 1))
    dshift = dy.sum(axis=(0, 1))
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dshift


def _wgrad(a, d):
    """Sum over batch and time of outer products: (B,T,i),(B,T,o) -> (i,o)."""
    return a.reshape(-1, a.shape[-1]).T @ d.reshape(-1, d.shape[-1])


class SASLiteModel(Model):
    kind = "saslite"

    def __init__(self, n_users, n_items, hp: HyperParams, rng=None, params=None, dtype=TRAIN_DTYPE):
        if params is None:
            d, t = hp.dim, hp.seq_len
            item = uniform_init(rng, (n_items + 1, d), dtype=dtype)
            item[0] = 0.0
            layers = [
                LayerGroup("item_emb", Role.EMBEDDING, item),
                LayerGroup("pos_emb", Role.EMBEDDING, uniform_init(rng, (t, d), dtype=dtype)),
            ]
            ones, zeros = (lambda: np.ones(d, dtype=dtype)), (lambda: np.zeros(d, dtype=dtype))
            for b in range(hp.blocks):
                p = f"block{b}"
                layers += [
                    LayerGroup(f"{p}.attn_q", Role.MIDDLE, xavier_init(rng, d, d, dtype),
                               {"ln_gain": ones(), "ln_shift": zeros()}),
                    LayerGroup(f"{p}.attn_k", Role.MIDDLE, xavier_init(rng, d, d, dtype)),
                    LayerGroup(f"{p}.attn_v", Role.MIDDLE, xavier_init(rng, d, d, dtype)),
                    LayerGroup(f"{p}.attn_o", Role.MIDDLE, xavier_init(rng, d, d, dtype)),
                    LayerGroup(f"{p}.ffn1", Role.MIDDLE, xavier_init(rng, d, d, dtype),
                               {"bias": zeros(), "ln_gain": ones(), "ln_shift": zeros()}),
                    LayerGroup(f"{p}.ffn2", Role.MIDDLE, xavier_init(rng, d, d, dtype), {"bias": zeros()}),
                ]
            layers.append(LayerGroup("output", Role.SOFTMAX, xavier_init(rng, d, d, dtype),
                                     {"ln_gain": ones(), "ln_shift": zeros()}))
            params = ParameterSet(layers)
        super().__init__(n_users, n_items, hp, params)

    @property
    def blocks(self) -> int:
        return sum(1 for n in self.params.names() if n.endswith(".attn_q"))

    def _dropout_mask(self, rng, shape, dtype):
        p = self.hp.dropout
        if rng is None or p <= 0:
            return None
        return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)

    def forward(self, P, seq, rng=None):
        """Hidden output of every position, shape (B, T, d), plus a backward cache."""
        seq = np.asarray(seq)
        B, T = seq.shape
        E, pos = P["item_emb.weight"], P["pos_emb.weight"]
        if T > pos.shape[0]:
            raise DataError(f"sequence length {T} exceeds model maximum {pos.shape[0]}")
        dtype = E.dtype
        d = E.shape[1]
        m = (seq > 0).astype(dtype)[..., None]
        x = (E[seq] + pos[None, :T]) * m
        drop0 = self._dropout_mask(rng, x.shape, dtype)
        if drop0 is not None:
            x = x * drop0
        idx = np.arange(T)
        allowed = (idx[None, :] <= idx[:, None])[None] & ((seq > 0)[:, None, :] | np.eye(T, dtype=bool)[None])
        scale = 1.0 / math.sqrt(d)
        caches = []
        for b in range(self.blocks):
            p = f"block{b}"
            h, ln1 = _ln_forward(x, P[f"{p}.attn_q.ln_gain"], P[f"{p}.attn_q.ln_shift"])
            q, k, v = h @ P[f"{p}.attn_q.weight"], h @ P[f"{p}.attn_k.weight"], h @ P[f"{p}.attn_v.weight"]
            s = np.where(allowed, (q @ k.transpose(0, 2, 1)) * scale, -np.inf)
            s = s - s.max(axis=-1, keepdims=True)
            A = np.exp(s)
            A /= A.sum(axis=-1, keepdims=True)
            c = A @ v
            a = c @ P[f"{p}.attn_o.weight"]
            d1 = self._dropout_mask(rng, a.shape, dtype)
            if d1 is not None:
                a = a * d1
            x1 = (x + a) * m
            h2, ln2 = _ln_forward(x1, P[f"{p}.ffn1.ln_gain"], P[f"{p}.ffn1.ln_shift"])
            f1 = h2 @ P[f"{p}.ffn1.weight"] + P[f"{p}.ffn1.bias"]
            r = np.maximum(f1, 0)
            f2 = r @ P[f"{p}.ffn2.weight"] + P[f"{p}.ffn2.bias"]
            d2 = self._dropout_mask(rng, f2.shape, dtype)
            if d2 is not None:
                f2 = f2 * d2
            x = (x1 + f2) * m
            caches.append((h, ln1, q, k, v, A, c, d1, h2, ln2, f1, r, d2))
        hf, lnf = _ln_forward(x, P["output.ln_gain"], P["output.ln_shift"])
        o = hf @ P["output.weight"]
        return o, (seq, m, drop0, scale, caches, hf, lnf)

    def loss_and_grads(self, batch, rng=None, params=None, need_grads=True):
        """Mean over real positions of ``softplus(-s_pos) + softplus(s_neg)``.

        ``batch`` is ``(inputs, positives, negatives)``, each (B, T); a
        position counts only when both its input and its positive are real
        items. ``rng`` draws dropout masks.
        """
        P = self.params.flat() if params is None else params
        seq, pos_t, neg_t = (np.asarray(a) for a in batch)
        self.check_items(seq)
        self.check_items(pos_t)
        self.check_items(neg_t)
        valid = (seq > 0) & (pos_t > 0)
        n_valid = int(valid.sum())
        if n_valid == 0:
            return 0.0, ({k: np.zeros_like(v) for k, v in P.items()} if need_grads else None)
        E = P["item_emb.weight"]
        o, cache = self.forward(P, seq, rng)
        ep, en = E[pos_t], E[neg_t]
        sp = np.sum(o * ep, axis=-1)
        sn = np.sum(o * en, axis=-1)
        vf = valid.astype(o.dtype)
        loss = float(np.sum(vf * (softplus(-sp) + softplus(sn)))) / n_valid
        if not need_grads:
            return loss, None
        dsp = -sigmoid(-sp) * vf / n_valid
        dsn = sigmoid(sn) * vf / n_valid
        g = {k: np.zeros_like(v) for k, v in P.items()}
        gE = g["item_emb.weight"]
        np.add.at(gE, pos_t, dsp[..., None] * o)
        np.add.at(gE, neg_t, dsn[..., None] * o)
        do = dsp[..., None] * ep + dsn[..., None] * en
        self._backward(P, g, do, cache)
        gE[0] = 0.0
        return loss, g

    def _backward(self, P, g, do, cache):
        seq, m, drop0, scale, caches, hf, lnf = cache
        g["output.weight"] += _wgrad(hf, do)
        dx, dg, ds = _ln_backward(do @ P["output.weight"].T, P["output.ln_gain"], lnf)
        g["output.ln_gain"] += dg
        g["output.ln_shift"] += ds
        for b in reversed(range(len(caches))):
            p = f"block{b}"
            h, ln1, q, k, v, A, c, d1, h2, ln2, f1, r, d2 = caches[b]
            dx = dx * m
            df2 = dx if d2 is None else dx * d2
            g[f"{p}.ffn2.weight"] += _wgrad(r, df2)
            g[f"{p}.ffn2.bias"] += df2.sum(axis=(0, 1))
            df1 = (df2 @ P[f"{p}.ffn2.weight"].T) * (f1 > 0)
            g[f"{p}.ffn1.weight"] += _wgrad(h2, df1)
            g[f"{p}.ffn1.bias"] += df1.sum(axis=(0, 1))
            dh2 = df1 @ P[f"{p}.ffn1.weight"].T
            dln, dg, ds = _ln_backward(dh2, P[f"{p}.ffn1.ln_gain"], ln2)
            g[f"{p}.ffn1.ln_gain"] += dg
            g[f"{p}.ffn1.ln_shift"] += ds
            dx1 = (dx + dln) * m
            da = dx1 if d1 is None else dx1 * d1
            g[f"{p}.attn_o.weight"] += _wgrad(c, da)
            dc = da @ P[f"{p}.attn_o.weight"].T
            dA = dc @ v.transpose(0, 2, 1)
            dv = A.transpose(0, 2, 1) @ dc
            dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
            dq = dS @ k
            dk = dS.transpose(0, 2, 1) @ q
            g[f"{p}.attn_q.weight"] += _wgrad(h, dq)
            g[f"{p}.attn_k.weight"] += _wgrad(h, dk)
            g[f"{p}.attn_v.weight"] += _wgrad(h, dv)
            dh = (dq @ P[f"{p}.attn_q.weight"].T + dk @ P[f"{p}.attn_k.weight"].T
                  + dv @ P[f"{p}.attn_v.weight"].T)
            dln, dg, ds = _ln_backward(dh, P[f"{p}.attn_q.ln_gain"], ln1)
            g[f"{p}.attn_q.ln_gain"] += dg
            g[f"{p}.attn_q.ln_shift"] += ds
            dx = dx1 + dln
        if drop0 is not None:
            dx = dx * drop0
        dx = dx * m
        np.add.at(g["item_emb.weight"], seq, dx)
        g["pos_emb.weight"][: seq.shape[1]] += dx.sum(axis=0)

    def score_batch(self, users, histories):
        if histories is None:
            raise DataError("SASLite scoring needs item histories")
        histories = np.asarray(histories)
        t = self.params["pos_emb"].weight.shape[0]
        if histories.shape[1] > t:
            histories = histories[:, -t:]
        self.check_items(histories)
        P = self.params.flat()
        o, _ = self.forward(P, histories)
        scores = o[:, -1] @ P["item_emb.weight"].T
        scores[:, 0] = -np.inf
        return scores
