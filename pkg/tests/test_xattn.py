import math

import numpy as np
import pytest

from fsmr import numerics as nm
from fsmr.errors import ConfigError, NumericError
from fsmr.xattn import AttentionConfig, cross_attention, fuse, itm_head, pool


def xa_params(d, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    for prefix in ("xa_lang", "xa_vis"):
        for tail in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}_{tail}"] = nm.tensor(rng.uniform(-1, 1, (d, d)))
    return params


def cfg_for(**kw):
    base = dict(heads=2, dropout_rate=0.0, pooling="mean", strategy="mixed")
    base.update(kw)
    return AttentionConfig(**base)


def rand(shape, seed):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


def test_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig(heads=0)
    with pytest.raises(ConfigError):
        AttentionConfig(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        AttentionConfig(pooling="median")
    with pytest.raises(ConfigError):
        AttentionConfig(strategy="both")


def test_single_key_attention_is_value_projection():
    d = 4
    params = xa_params(d)
    h_w = nm.tensor(rand((1, d), 1))
    h_v = nm.tensor(rand((1, d), 2))
    sink = {}
    o_w, o_v = cross_attention(h_w, h_v, cfg_for(heads=1), params, probs_sink=sink)
    assert np.allclose(sink["language"], 1.0, atol=1e-15)
    expected = (h_v.data @ params["xa_lang_wv"].data) @ params["xa_lang_wo"].data
    assert np.max(np.abs(o_w.data - expected)) < 1e-12
    expected_v = (h_w.data @ params["xa_vis_wv"].data) @ params["xa_vis_wo"].data
    assert np.max(np.abs(o_v.data - expected_v)) < 1e-12


def test_duplicating_key_value_rows_leaves_query_output_unchanged():
    d = 8
    params = xa_params(d, seed=3)
    h_w = nm.tensor(rand((5, d), 4))
    h_v = nm.tensor(rand((3, d), 5))
    base, _ = cross_attention(h_w, h_v, cfg_for(heads=4, strategy="language_only"), params)
    doubled = nm.tensor(np.vstack([h_v.data, h_v.data]))
    dup, _ = cross_attention(h_w, doubled, cfg_for(heads=4, strategy="language_only"), params)
    assert np.max(np.abs(base.data - dup.data)) < 1e-10


def test_manual_scaled_dot_product_oracle():
    # 1 head, d=2, hand-specified projections on 2x2 inputs
    h_w = np.array([[1.0, 0.0], [0.0, 1.0]])
    h_v = np.array([[0.5, -0.5], [1.0, 1.0]])
    wq = np.array([[1.0, 0.0], [0.0, 1.0]])
    wk = np.array([[0.0, 1.0], [1.0, 0.0]])
    wv = np.array([[2.0, 0.0], [0.0, 2.0]])
    wo = np.array([[1.0, 1.0], [0.0, 1.0]])
    q = h_w @ wq
    k = h_v @ wk
    v = h_v @ wv
    scores = q @ k.T / math.sqrt(2.0)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    expected = (probs @ v) @ wo

    params = {
        "xa_lang_wq": nm.tensor(wq), "xa_lang_wk": nm.tensor(wk),
        "xa_lang_wv": nm.tensor(wv), "xa_lang_wo": nm.tensor(wo),
    }
    o_w, _ = cross_attention(
        nm.tensor(h_w), nm.tensor(h_v), cfg_for(heads=1, strategy="language_only"), params
    )
    assert np.max(np.abs(o_w.data - expected)) < 1e-12


def test_attention_rows_sum_to_one_per_head():
    d = 8
    params = xa_params(d, seed=6)
    sink = {}
    cross_attention(
        nm.tensor(rand((4, d), 7)), nm.tensor(rand((3, d), 8)),
        cfg_for(heads=4), params, probs_sink=sink,
    )
    for key in ("language", "visual"):
        sums = sink[key].sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12


def test_kv_permutation_invariance_and_q_equivariance():
    d = 8
    params = xa_params(d, seed=9)
    h_w = rand((5, d), 10)
    h_v = rand((4, d), 11)
    cfg = cfg_for(heads=2, strategy="language_only")
    base, _ = cross_attention(nm.tensor(h_w), nm.tensor(h_v), cfg, params)
    perm = [3, 1, 0, 2]
    kv_perm, _ = cross_attention(nm.tensor(h_w), nm.tensor(h_v[perm]), cfg, params)
    assert np.max(np.abs(base.data - kv_perm.data)) < 1e-12
    qperm = [4, 0, 2, 1, 3]
    q_perm, _ = cross_attention(nm.tensor(h_w[qperm]), nm.tensor(h_v), cfg, params)
    assert np.max(np.abs(q_perm.data - base.data[qperm])) < 1e-12


def test_strategy_controls_branches():
    d = 4
    params = xa_params(d)
    h_w, h_v = nm.tensor(rand((2, d), 1)), nm.tensor(rand((2, d), 2))
    o_w, o_v = cross_attention(h_w, h_v, cfg_for(strategy="language_only"), params)
    assert o_w is not None and o_v is None
    o_w, o_v = cross_attention(h_w, h_v, cfg_for(strategy="visual_only"), params)
    assert o_w is None and o_v is not None


def test_heads_must_divide_width():
    d = 6
    params = xa_params(d)
    with pytest.raises(ConfigError, match="divide"):
        cross_attention(
            nm.tensor(rand((2, d), 1)), nm.tensor(rand((2, d), 2)), cfg_for(heads=4), params
        )


def test_dropout_training_vs_eval():
    d = 8
    params = xa_params(d, seed=13)
    h_w, h_v = nm.tensor(rand((3, d), 14)), nm.tensor(rand((2, d), 15))
    cfg = cfg_for(heads=2, dropout_rate=0.5)
    eval_a, _ = cross_attention(h_w, h_v, cfg, params, training=False)
    eval_b, _ = cross_attention(h_w, h_v, cfg, params, training=False)
    assert np.array_equal(eval_a.data, eval_b.data)
    rng = np.random.default_rng(0)
    train_out, _ = cross_attention(h_w, h_v, cfg, params, rng=rng, training=True)
    assert not np.array_equal(train_out.data, eval_a.data)


def test_pool_examples():
    assert np.allclose(pool(nm.tensor([[1.0, 3.0], [3.0, 1.0]]), "mean").data, [2.0, 2.0])
    assert np.allclose(pool(nm.tensor([[1.0, 3.0], [3.0, 1.0]]), "max").data, [3.0, 3.0])
    single = rand((1, 5), 16)
    assert np.array_equal(pool(nm.tensor(single), "mean").data, single[0])
    assert np.array_equal(pool(nm.tensor(single), "max").data, single[0])


def test_pool_empty_is_contract_violation():
    with pytest.raises(NumericError):
        pool(nm.tensor(np.zeros((0, 4))), "mean")


def test_fuse_shapes():
    p_w = nm.tensor([1.0, 2.0])
    p_v = nm.tensor([3.0, 4.0])
    assert np.array_equal(fuse(p_w, p_v, "mixed").data, [1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(fuse(None, p_v, "visual_only").data, [3.0, 4.0])
    assert np.array_equal(fuse(p_w, None, "language_only").data, [1.0, 2.0])
    with pytest.raises(NumericError):
        fuse(p_w, None, "mixed")


def test_itm_head_values():
    s = nm.tensor([0.2, -0.4, 0.6])
    zero_w = nm.tensor(np.zeros(3))
    assert float(itm_head(s, zero_w, nm.tensor(np.array(0.0))).data) == 0.5
    low = itm_head(s, zero_w, nm.tensor(np.array(-80.0)))
    assert 0.0 < float(low.data) < 1e-30
    rng = np.random.default_rng(17)
    w = rng.uniform(-1, 1, 3)
    b = 0.3
    expected = 1.0 / (1.0 + math.exp(-(s.data @ w + b)))
    got = float(itm_head(s, nm.tensor(w), nm.tensor(np.array(b))).data)
    assert abs(got - expected) < 1e-12


def test_itm_head_shape_mismatch_is_config_error():
    with pytest.raises(ConfigError, match="strategy"):
        itm_head(nm.tensor([1.0, 2.0]), nm.tensor(np.zeros(4)), nm.tensor(np.array(0.0)))


def test_cross_attention_gradients():
    d = 8
    params = xa_params(d, seed=20)
    h_v = nm.tensor(rand((3, d), 21))
    cfg = cfg_for(heads=2)

    def probe(t):
        o_w, o_v = cross_attention(t, h_v, cfg, params)
        s = fuse(pool(o_w, "mean"), pool(o_v, "max"), "mixed")
        return nm.sum_all(nm.tanh(s))

    assert nm.grad_check(probe, nm.tensor(rand((4, d), 22))) < 1e-6
