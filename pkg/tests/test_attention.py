import numpy as np
import pytest

from stepsum.attention import (
    AttentionConfig,
    AttentionMask,
    RelPosLabels,
    band_pattern,
    band_pattern_for_positions,
    banded_apply,
    banded_pair_count,
    banded_scores,
    bucket_matrix,
    etc_global_local_attention,
    glocal_attention,
    init_glocal_layer,
    init_mha,
    local_attention_mask,
    multi_head_attention,
    relative_position_bucket,
    score_counter,
)
from stepsum.autodiff import Tensor, mul, sum_all
from stepsum.gradcheck import check_gradients


@pytest.fixture
def rng():
    return np.random.default_rng(17)


def small_cfg(radius=2):
    return AttentionConfig(num_heads=2, model_dim=8, local_radius=radius,
                           relpos_vocab_size=12, max_distance=4)


# -- config and mask types ----------------------------------------------------


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        AttentionConfig(num_heads=3, model_dim=8, local_radius=1,
                        relpos_vocab_size=12, max_distance=4)


def test_config_rejects_tiny_relpos_vocab():
    with pytest.raises(ValueError):
        AttentionConfig(num_heads=2, model_dim=8, local_radius=1,
                        relpos_vocab_size=8, max_distance=4)


def test_mask_rejects_dead_query_row():
    allowed = np.ones((3, 3), dtype=bool)
    allowed[1] = False
    with pytest.raises(ValueError, match="row 1"):
        AttentionMask(allowed)


# -- relative position buckets ------------------------------------------------


def test_bucket_center():
    assert relative_position_bucket(5, 5, 4) == 4


def test_bucket_clipping():
    assert relative_position_bucket(0, 7, 4) == relative_position_bucket(0, 4, 4)
    assert relative_position_bucket(7, 0, 4) == 0


def test_bucket_matrix_matches_bruteforce():
    n, maxd = 6, 2
    got = bucket_matrix(np.arange(n), np.arange(n), maxd)
    for i in range(n):
        for j in range(n):
            off = max(-maxd, min(maxd, j - i))
            assert got[i, j] == off + maxd


# -- local masks ---------------------------------------------------------------


def test_local_mask_rows():
    mask = local_attention_mask(4, 1)
    assert mask.allowed[0].tolist() == [True, True, False, False]
    assert mask.allowed[1].tolist() == [True, True, True, False]


def test_local_mask_full_when_radius_covers():
    mask = local_attention_mask(5, 4)
    assert mask.allowed.all()


def test_local_mask_popcount_matches_clipped_window_sum():
    # sum of clipped windows: n*(2r+1) - r*(r+1) = 10*5 - 6 = 44
    mask = local_attention_mask(10, 2)
    assert mask.popcount() == 44
    assert mask.popcount() == banded_pair_count(10, 2)


# -- dense multi-head attention -------------------------------------------------


def test_single_key_returns_value_row(rng):
    params = init_mha(rng, 8, 0.1)
    q = Tensor(rng.normal(size=(3, 8)))
    kv = Tensor(rng.normal(size=(1, 8)))
    out = multi_head_attention(q, kv, kv, AttentionMask(np.ones((3, 1), bool)),
                               params, 2)
    # softmax over one key is 1, so every query gets the projected value row
    projected = multi_head_attention(
        Tensor(rng.normal(size=(1, 8))), kv, kv,
        AttentionMask(np.ones((1, 1), bool)), params, 2)
    for row in out.data:
        np.testing.assert_allclose(row, projected.data[0], atol=1e-12)


def test_two_identical_keys_average_values(rng):
    params = init_mha(rng, 8, 0.1)
    q = Tensor(rng.normal(size=(2, 8)))
    key = rng.normal(size=8)
    k = Tensor(np.stack([key, key]))
    v = Tensor(rng.normal(size=(2, 8)))
    out = multi_head_attention(q, k, v, AttentionMask(np.ones((2, 2), bool)),
                               params, 2)
    # identical keys force 1/2-1/2 weights: same output as attending the mean value
    v_mean = Tensor(np.stack([v.data.mean(axis=0)]))
    want = multi_head_attention(q, Tensor(key[None, :]), v_mean,
                                AttentionMask(np.ones((2, 1), bool)), params, 2)
    np.testing.assert_allclose(out.data, want.data, atol=1e-12)


def test_dense_attention_gradients(rng):
    params = init_mha(rng, 8, 0.1, relpos_vocab=12, num_heads=2)
    q = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    k = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    v = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    labels = RelPosLabels(bucket_matrix(np.arange(6), np.arange(6), 4))
    mask = AttentionMask(np.ones((6, 6), bool))
    probe = Tensor(rng.normal(size=(6, 8)))

    def loss():
        return sum_all(mul(multi_head_attention(q, k, v, mask, params, 2, labels),
                           probe))

    leaves = {"q": q, "k": k, "v": v, "wq": params.wq, "relpos": params.relpos}
    assert check_gradients(loss, leaves) == []


def test_mask_soundness_zeroing_masked_rows_bitwise(rng):
    params = init_mha(rng, 8, 0.1)
    q = Tensor(rng.normal(size=(4, 8)))
    k_data = rng.normal(size=(4, 8))
    v_data = rng.normal(size=(4, 8))
    allowed = np.ones((4, 4), dtype=bool)
    allowed[:, 3] = False
    out1 = multi_head_attention(q, Tensor(k_data), Tensor(v_data),
                                AttentionMask(allowed), params, 2)
    k2, v2 = k_data.copy(), v_data.copy()
    k2[3] = 0.0
    v2[3] = 0.0
    out2 = multi_head_attention(q, Tensor(k2), Tensor(v2),
                                AttentionMask(allowed), params, 2)
    assert np.array_equal(out1.data, out2.data)


def test_labels_on_masked_pairs_are_ignored(rng):
    params = init_mha(rng, 8, 0.1, relpos_vocab=12, num_heads=2)
    q = Tensor(rng.normal(size=(4, 8)))
    k = Tensor(rng.normal(size=(4, 8)))
    v = Tensor(rng.normal(size=(4, 8)))
    allowed = np.ones((4, 4), dtype=bool)
    allowed[:, 2] = False
    labels_a = bucket_matrix(np.arange(4), np.arange(4), 4)
    labels_b = labels_a.copy()
    labels_b[:, 2] = 11  # different labels where the mask blocks anyway
    out_a = multi_head_attention(q, k, v, AttentionMask(allowed), params, 2,
                                 RelPosLabels(labels_a))
    out_b = multi_head_attention(q, k, v, AttentionMask(allowed), params, 2,
                                 RelPosLabels(labels_b))
    assert np.array_equal(out_a.data, out_b.data)


def test_permutation_equivariance_without_labels(rng):
    params = init_mha(rng, 8, 0.1)
    q = Tensor(rng.normal(size=(5, 8)))
    k_data = rng.normal(size=(5, 8))
    v_data = rng.normal(size=(5, 8))
    mask = AttentionMask(np.ones((5, 5), bool))
    out = multi_head_attention(q, Tensor(k_data), Tensor(v_data), mask, params, 2)
    perm = np.random.default_rng(3).permutation(5)
    out_kv = multi_head_attention(q, Tensor(k_data[perm]), Tensor(v_data[perm]),
                                  mask, params, 2)
    np.testing.assert_allclose(out.data, out_kv.data, atol=1e-12)
    out_q = multi_head_attention(Tensor(q.data[perm]), Tensor(k_data),
                                 Tensor(v_data), mask, params, 2)
    np.testing.assert_allclose(out.data[perm], out_q.data, atol=1e-12)


# -- banded primitives ----------------------------------------------------------


def test_band_pattern_examples():
    pat = band_pattern(4, 1)
    assert pat.count == banded_pair_count(4, 1) == 10
    assert banded_pair_count(64, 3) == 64 * 7 - 2 * (3 + 2 + 1)


def test_band_pattern_positions_matches_dense_pattern():
    pat_a = band_pattern(7, 2)
    pat_b = band_pattern_for_positions(np.arange(7), 2)
    assert np.array_equal(pat_a.ii, pat_b.ii)
    assert np.array_equal(pat_a.jj, pat_b.jj)
    assert np.array_equal(pat_a.ww, pat_b.ww)


def test_band_pattern_positions_respects_gaps():
    # positions 0, 1, 9: the gap breaks the window
    pat = band_pattern_for_positions(np.array([0, 1, 9]), 2)
    pairs = set(zip(pat.ii.tolist(), pat.jj.tolist()))
    assert pairs == {(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)}


def test_banded_matches_dense_softmax_attention(rng):
    length, dim, radius = 9, 4, 3
    q = Tensor(rng.normal(size=(length, dim)))
    k = Tensor(rng.normal(size=(length, dim)))
    v = Tensor(rng.normal(size=(length, dim)))
    pat = band_pattern(length, radius)
    from stepsum.autodiff import softmax

    w = softmax(banded_scores(q, k, pat), -1)
    out = banded_apply(w, v, pat)

    scores = q.data @ k.data.T
    idx = np.arange(length)
    masked = np.where(np.abs(idx[:, None] - idx[None, :]) <= radius, scores, -np.inf)
    e = np.exp(masked - masked.max(axis=1, keepdims=True))
    dense = (e / e.sum(axis=1, keepdims=True)) @ v.data
    np.testing.assert_allclose(out.data, dense, atol=1e-12)


# -- global-local ----------------------------------------------------------------


def test_glocal_rejects_empty_global():
    cfg = small_cfg()
    params = init_mha(np.random.default_rng(0), 8, 0.1, 12, 2)
    with pytest.raises(ValueError):
        glocal_attention(Tensor(np.zeros((3, 8))), Tensor(np.zeros((0, 8))),
                         np.zeros(3, dtype=np.int64), params, cfg)


def test_glocal_one_global_one_long_gradients(rng):
    cfg = small_cfg()
    params = init_mha(rng, 8, 0.1, 12, 2)
    long = Tensor(rng.normal(size=(1, 8)), requires_grad=True)
    glob = Tensor(rng.normal(size=(1, 8)), requires_grad=True)
    probe = Tensor(rng.normal(size=(1, 8)))

    def loss():
        lo, go = glocal_attention(long, glob, np.zeros(1, dtype=np.int64),
                                  params, cfg)
        return sum_all(mul(mul(lo, probe), mul(go, probe)))

    assert check_gradients(loss, {"long": long, "glob": glob}) == []


def test_instrumented_count_L64_r3():
    cfg = small_cfg(radius=3)
    rng = np.random.default_rng(2)
    params = init_mha(rng, 8, 0.1, 12, 2)
    long = Tensor(rng.normal(size=(64, 8)))
    glob = Tensor(rng.normal(size=(1, 8)))
    score_counter.reset()
    glocal_attention(long, glob, np.zeros(64, dtype=np.int64), params, cfg)
    assert score_counter.get("long_to_long") == 436


def test_glocal_pad_rows_influence_nothing(rng):
    cfg = small_cfg()
    layer = init_glocal_layer(rng, cfg, 16, 0.1)
    length = 10
    active = np.ones(length, dtype=bool)
    active[4:6] = False
    sid = np.zeros(length, dtype=np.int64)
    base = rng.normal(size=(length, 8))
    lo1, go1 = etc_global_local_attention(
        Tensor(base), Tensor(np.ones((1, 8))), sid, layer, cfg, long_active=active)
    mutated = base.copy()
    mutated[4:6] = 123.0
    lo2, go2 = etc_global_local_attention(
        Tensor(mutated), Tensor(np.ones((1, 8))), sid, layer, cfg, long_active=active)
    assert np.array_equal(lo1.data[active], lo2.data[active])
    assert np.array_equal(go1.data, go2.data)


def test_two_layer_compacted_equals_padded(rng):
    """Compaction is an encoding choice, not a model change."""
    from stepsum.etc_encoder import EtcConfig, StepwiseEtc, assemble_input

    cfg = EtcConfig(dim=8, num_heads=2, ffn_dim=16, layers=2, vocab_size=30,
                    long_budget=20, summary_budget=10, global_cap=8,
                    local_radius=2, relpos_vocab_size=12, max_distance=4)
    model = StepwiseEtc(cfg, rng)
    asm = assemble_input([[10, 11], [12, 13, 14]], [[12]], [[2]], 1,
                         long_budget=20, summary_budget=10, global_cap=8,
                         pad_id=0, cls_id=5, sep_id=6, beg_id=4, eos_id=3)
    compact = model.etc_encode(asm).data

    # padded reference path: run the layers over the full padded stream
    from stepsum.autodiff import take

    acfg = cfg.attention()
    long = take(model.params.token, asm.long_ids)
    glob = take(model.params.global_kind, asm.global_kind)
    for layer in model.params.layers:
        long, glob = etc_global_local_attention(
            long, glob, asm.sentence_id, layer, acfg,
            long_active=asm.active, ln_eps=cfg.ln_eps)
    padded = long.data[asm.candidate_anchor]
    np.testing.assert_allclose(compact, padded, atol=1e-12)
