import numpy as np
import pytest

from fsmr import numerics as nm
from fsmr.encoder import (
    AlignmentPair,
    Instance,
    ModalEmbeddings,
    ObjectRegion,
    embed_tokens,
    encode,
    project_objects,
)
from fsmr.errors import CapacityError, DataError
from fsmr.harness import RunConfig, init_params


def small_cfg(**kw):
    base = dict(hidden_size=16, visual_dim=4, vocab_size=16, max_seq_length=32, attn_heads=4)
    base.update(kw)
    return RunConfig(**base)


def make_instance(l1=4, l2=3, m=2):
    objects = [ObjectRegion(entity_id=i + 1, feature=np.eye(4)[i % 4]) for i in range(m)]
    cands = [[(5 + k + c) % 16 for k in range(l2)] for c in range(4)]
    return Instance(
        id="t0",
        premise_tokens=[1, 2, 3, 4][:l1],
        candidates=cands,
        objects=objects,
        alignments=[[AlignmentPair(0, 0)] for _ in range(4)],
        answer_index=0,
        categories=["AT", "D1", "AF", "D2"],
    )


# ---------------------------------------------------------------------------
# embed_tokens
# ---------------------------------------------------------------------------


def test_identity_table_zero_positions_gives_unit_vectors():
    table = nm.tensor(np.eye(8))
    pos = nm.tensor(np.zeros((8, 8)))
    out = embed_tokens([3, 0, 7], table, pos)
    assert np.array_equal(out.data, np.eye(8)[[3, 0, 7]])


def test_empty_token_list():
    table = nm.tensor(np.eye(8))
    pos = nm.tensor(np.zeros((8, 8)))
    out = embed_tokens([], table, pos)
    assert out.data.shape == (0, 8)


def test_repeated_tokens_differ_only_by_position():
    rng = np.random.default_rng(0)
    table = nm.tensor(rng.uniform(-1, 1, (8, 6)))
    pos = nm.tensor(rng.uniform(-1, 1, (8, 6)))
    out = embed_tokens([2, 2], table, pos).data
    diff = out[0] - out[1]
    expected = pos.data[0] - pos.data[1]
    assert np.max(np.abs(diff - expected)) < 1e-15


def test_out_of_vocab_names_id():
    table = nm.tensor(np.eye(4))
    pos = nm.tensor(np.zeros((4, 4)))
    with pytest.raises(DataError, match="9"):
        embed_tokens([1, 9], table, pos)


def test_sequence_longer_than_position_table():
    table = nm.tensor(np.eye(4))
    pos = nm.tensor(np.zeros((2, 4)))
    with pytest.raises(CapacityError):
        embed_tokens([0, 1, 2], table, pos)


# ---------------------------------------------------------------------------
# project_objects
# ---------------------------------------------------------------------------


def zeroed_obj_params(d=6, dv=4, vocab=8):
    return {
        "obj_proj_w": nm.tensor(np.zeros((dv, d))),
        "obj_proj_b": nm.tensor(np.zeros(d)),
        "obj_entity_emb": nm.tensor(np.zeros((vocab, d))),
    }


def test_all_zero_projection_gives_zero_rows():
    params = zeroed_obj_params()
    out = project_objects([ObjectRegion(1, np.zeros(4))], params)
    assert np.array_equal(out.data, np.zeros((1, 6)))


def test_identity_projection_is_tanh_of_feature():
    params = zeroed_obj_params(d=4, dv=4)
    params["obj_proj_w"] = nm.tensor(np.eye(4))
    feat = np.array([0.3, -0.2, 0.9, 0.0])
    out = project_objects([ObjectRegion(2, feat)], params)
    assert np.max(np.abs(out.data[0] - np.tanh(feat))) < 1e-15


def test_identical_objects_identical_rows():
    rng = np.random.default_rng(1)
    params = {
        "obj_proj_w": nm.tensor(rng.uniform(-1, 1, (4, 6))),
        "obj_proj_b": nm.tensor(rng.uniform(-1, 1, 6)),
        "obj_entity_emb": nm.tensor(rng.uniform(-1, 1, (8, 6))),
    }
    feat = rng.uniform(-1, 1, 4)
    out = project_objects([ObjectRegion(3, feat), ObjectRegion(3, feat.copy())], params)
    assert np.array_equal(out.data[0], out.data[1])


def test_no_objects_is_data_error():
    with pytest.raises(DataError, match="no objects"):
        project_objects([], zeroed_obj_params())


def test_nonfinite_feature_rejected():
    with pytest.raises(DataError):
        ObjectRegion(0, np.array([1.0, np.nan]))


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


def test_encode_shape_contract():
    cfg = small_cfg()
    params = init_params(cfg)
    inst = make_instance(l1=4, l2=3, m=2)
    out = encode(inst, 0, params, cfg.max_seq_length)
    assert isinstance(out, ModalEmbeddings)
    assert out.words.data.shape == (7, 16)
    assert out.objects.data.shape == (2, 16)
    assert out.h_cls.data.shape == (16,)
    assert out.h_img.data.shape == (16,)


def test_encode_deterministic():
    cfg = small_cfg()
    params = init_params(cfg)
    inst = make_instance()
    a = encode(inst, 1, params, cfg.max_seq_length)
    b = encode(inst, 1, params, cfg.max_seq_length)
    for left, right in ((a.words, b.words), (a.objects, b.objects), (a.h_cls, b.h_cls), (a.h_img, b.h_img)):
        assert np.array_equal(left.data, right.data)


def test_encode_invalid_candidate_index():
    cfg = small_cfg()
    params = init_params(cfg)
    with pytest.raises(DataError):
        encode(make_instance(), 7, params, cfg.max_seq_length)


def test_object_permutation_equivariance_and_h_img_invariance():
    cfg = small_cfg()
    params = init_params(cfg)
    inst = make_instance(m=4)
    base = encode(inst, 0, params, cfg.max_seq_length)
    perm = [2, 0, 3, 1]
    inst2 = make_instance(m=4)
    inst2.objects = [inst.objects[i] for i in perm]
    out = encode(inst2, 0, params, cfg.max_seq_length)
    assert np.max(np.abs(out.objects.data - base.objects.data[perm])) < 1e-12
    assert np.max(np.abs(out.h_img.data - base.h_img.data)) < 1e-12


def test_encode_zero_object_features_hides_attributes_only():
    cfg = small_cfg()
    params = init_params(cfg)
    inst = make_instance(m=2)
    plain = encode(inst, 0, params, cfg.max_seq_length)
    blind = encode(inst, 0, params, cfg.max_seq_length, zero_object_features=True)
    assert not np.array_equal(plain.objects.data, blind.objects.data)
    # words are untouched by the object path
    assert np.array_equal(plain.words.data, blind.words.data)


def test_encode_gradient_of_cls_probe_wrt_token_table():
    cfg = small_cfg(hidden_size=8, vocab_size=8, max_seq_length=16)
    params = init_params(cfg)
    inst = make_instance(l1=2, l2=2, m=2)
    inst.candidates = [[c[0] % 8, c[1] % 8] for c in inst.candidates]
    inst.premise_tokens = [1, 2]

    table = params["tok_emb"]

    def probe(t):
        params["tok_emb"] = t
        out = encode(inst, 0, params, cfg.max_seq_length)
        return nm.sum_all(out.h_cls)

    try:
        assert nm.grad_check(probe, table) < 1e-6
    finally:
        params["tok_emb"] = table


def test_instance_validation_catches_broken_records():
    inst = make_instance()
    inst.categories = ["AT", "AT", "AF", "D2"]
    with pytest.raises(DataError, match="exactly one"):
        inst.validate()
    inst = make_instance()
    inst.answer_index = 1
    with pytest.raises(DataError, match="answer_index"):
        inst.validate()
    inst = make_instance()
    inst.alignments[2] = [AlignmentPair(50, 0)]
    with pytest.raises(DataError, match="out of range"):
        inst.validate()
    inst = make_instance()
    inst.alignments[0] = [AlignmentPair(0, 0), AlignmentPair(0, 1)]
    with pytest.raises(DataError, match="duplicate word position"):
        inst.validate()
