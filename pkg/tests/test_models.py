import math

import numpy as np
import pytest

from peercollab.cooperation import LWConfig, lw_cooperate
from peercollab.errors import ConfigurationError, DataError
from peercollab.models import DESK, TABLE2, AvgPoolDNNModel, BPRModel, HyperParams, SASLiteModel, build_model
from peercollab.numerics import grad_check, rng_stream
from peercollab.params import Role


def check(model, batch, stochastic=False, **kw):
    fresh = (lambda: rng_stream(0, 42)) if stochastic else (lambda: None)
    _, grads = model.loss_and_grads(batch, rng=fresh())
    return grad_check(lambda p: model.loss(p, batch, fresh()), model.params.flat(), grads, **kw)


def bpr64(users=5, items=5, l2=0.01):
    return BPRModel(users, items, HyperParams(dim=4, l2=l2), rng=rng_stream(1, 0), dtype=np.float64)


def test_bpr_gradients():
    m = bpr64()
    batch = np.array([[0, 1, 2], [1, 3, 4], [4, 5, 1], [0, 2, 5], [2, 1, 3]])
    assert check(m, batch, probe_count=60) <= 1e-4
    m2 = bpr64(2, 2)
    assert check(m2, np.array([[0, 1, 2], [1, 2, 1]]), probe_count=20) <= 1e-4


def test_bpr_equal_items_give_log2_and_zero_gradient():
    m = bpr64(l2=0.0)
    loss, grads = m.loss_and_grads(np.array([[0, 2, 2]]))
    assert loss == pytest.approx(math.log(2))
    assert not grads["user_emb.weight"].any()


def test_bpr_zero_init_first_loss():
    m = bpr64(l2=0.0)
    for layer in m.params:
        layer.weight[...] = 0.0
    batch = np.array([[0, 1, 2], [1, 3, 4], [2, 5, 1]])
    assert m.loss_and_grads(batch)[0] == pytest.approx(3 * math.log(2))
    assert np.all(m.score_all_items(0)[1:] == 0.0)


def test_bpr_scores_hand_dot_products():
    m = BPRModel(1, 3, HyperParams(dim=2), rng=rng_stream(0, 0), dtype=np.float64)
    m.params["user_emb"].weight[0] = [1.0, 2.0]
    m.params["item_emb"].weight[1:] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 3.0]]
    s = m.score_all_items(0)
    assert s[0] == -np.inf and s[1:].tolist() == [1.0, 2.0, 5.0]


def test_bpr_rejects_bad_ids():
    m = bpr64()
    with pytest.raises(DataError):
        m.loss_and_grads(np.array([[0, 9, 1]]))
    with pytest.raises(DataError):
        m.score_batch(np.array([7]))


def dnn64(items=6, l2=1e-3):
    return AvgPoolDNNModel(3, items, HyperParams(dim=4, l2=l2, seq_len=4), rng=rng_stream(2, 0), dtype=np.float64)


def test_dnn_gradients():
    m = dnn64()
    hist = np.array([[0, 0, 1, 2], [3, 4, 5, 6], [0, 0, 0, 2]])
    assert check(m, (hist, np.array([3, 1, 6])), probe_count=80) <= 1e-4


def test_dnn_uniform_logits_loss():
    m = dnn64(l2=0.0)
    for name in ("output",):
        m.params[name].weight[...] = 0.0
        m.params[name].aux["bias"][...] = 0.0
    loss, _ = m.loss_and_grads((np.array([[0, 0, 1, 2]]), np.array([3])))
    assert loss == pytest.approx(math.log(6))


def test_dnn_shift_invariance():
    m = dnn64(l2=0.0)
    batch = (np.array([[0, 1, 2, 3]]), np.array([4]))
    before = m.loss_and_grads(batch)[0]
    m.params["output"].aux["bias"][...] += 7.5
    assert m.loss_and_grads(batch)[0] == pytest.approx(before, rel=1e-12)


def sas(dtype=np.float64, dropout=0.0, blocks=1, d=8, t=4, items=7):
    m = SASLiteModel(2, items, HyperParams(dim=d, seq_len=t, dropout=dropout, blocks=blocks),
                     rng=rng_stream(3, 0), dtype=dtype)
    # unit-scale embeddings: the default +-0.01 init makes layer norm so curved
    # that central differences, not the gradients, dominate the error
    for name in ("item_emb", "pos_emb"):
        m.params[name].weight[...] *= 50.0
    return m


SAS_BATCH = (np.array([[0, 1, 2, 3], [4, 5, 6, 7]]), np.array([[0, 2, 3, 4], [5, 6, 7, 1]]),
             np.array([[0, 5, 6, 1], [1, 2, 3, 2]]))


def test_sas_gradients_64bit():
    assert check(sas(), SAS_BATCH, probe_count=150) <= 1e-5


def test_sas_gradients_with_dropout():
    assert check(sas(dropout=0.3), SAS_BATCH, stochastic=True, probe_count=100) <= 1e-5


def test_sas_gradients_32bit():
    m = sas(dtype=np.float32)
    assert check(m, SAS_BATCH, probe_count=150, h=1e-6) <= 1e-3


def test_sas_two_blocks_gradients():
    assert check(sas(blocks=2), SAS_BATCH, probe_count=100) <= 1e-5


def test_sas_tied_zero_scores():
    m = sas()
    m.params["output"].weight[...] = 0.0
    m.params["output"].aux["ln_shift"][...] = 0.0
    batch = (np.array([[0, 0, 0, 1]]), np.array([[0, 0, 0, 2]]), np.array([[0, 0, 0, 3]]))
    assert m.loss_and_grads(batch)[0] == pytest.approx(2 * math.log(2))


def test_sas_causal():
    m = sas(t=5)
    P = m.params.flat()
    seq = np.array([[1, 2, 3, 4, 5]])
    out, _ = m.forward(P, seq)
    changed = seq.copy()
    changed[0, 3:] = [7, 6]
    out2, _ = m.forward(P, changed)
    assert np.array_equal(out[0, :3], out2[0, :3])
    assert not np.allclose(out[0, 3:], out2[0, 3:])


def test_sas_roles_and_pad_row():
    m = sas()
    roles = {layer.name: layer.role for layer in m.params}
    assert roles["item_emb"] is Role.EMBEDDING and roles["output"] is Role.SOFTMAX
    assert roles["block0.attn_q"] is Role.MIDDLE
    assert not m.params["item_emb"].weight[0].any()
    assert m.score_all_items(history=[1, 2])[0] == -np.inf


def test_identical_peers_score_identically(rng):
    a = build_model("dnn", 3, 6, HyperParams(dim=4, seq_len=4), rng=rng_stream(0, 0))
    b = build_model("dnn", 3, 6, HyperParams(dim=4, seq_len=4), rng=rng_stream(0, 1))
    lw_cooperate(a.params, b.params, LWConfig())
    h = np.array([[0, 1, 2, 3]])
    assert np.array_equal(a.score_batch(None, h), b.score_batch(None, h))


def test_build_model_unknown():
    with pytest.raises(ConfigurationError):
        build_model("gru", 1, 1, HyperParams())


def test_reported_hyperparameters():
    hp = TABLE2[("saslite", "ml-20m")]
    assert (hp.dim, hp.learning_rate, hp.batch_size) == (256, 1e-3, 128)
    assert TABLE2[("bpr", "retailrocket")].batch_size == 2048
    assert TABLE2[("dnn", "retailrocket")].l2 == 1e-5
    assert set(DESK) == {"bpr", "dnn", "saslite"}
