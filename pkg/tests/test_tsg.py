from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from tass import numcore as nc
from tass.errors import DimensionError, DomainError
from tass.layers import Linear
from tass.models import AblationFlags, FusionMode, ScenarioSpec
from tass.numcore import Tape, Tensor, backward
from tass.optim import Adam
from tass.synthgen import gen_prototypes, generate_split
from tass.tsg import (
    MATCHED,
    MISMATCHED,
    MatchPairs,
    TsgParams,
    match_loss,
    region_attention,
    sample_match_pairs,
    target_aware_visual,
    threshold_gate,
)


@pytest.fixture
def params(rng) -> TsgParams:
    return TsgParams.init(rng, 4, tau=0.025)


def test_orthogonal_query_gives_uniform_attention():
    v_map = Tensor([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    s = region_attention(Tensor([[0.0, 1.0]]), v_map).data
    np.testing.assert_allclose(s, [[1 / 3, 1 / 3, 1 / 3]])


def test_region_attention_hand_example():
    v_map = Tensor([[0.0, 0.0], [math.log(3.0), 0.0]])
    s = region_attention(Tensor([[1.0, 0.0]]), v_map).data
    np.testing.assert_allclose(s, [[0.25, 0.75]], atol=1e-12)


def test_region_attention_shape_mismatch():
    with pytest.raises(DimensionError):
        region_attention(Tensor([[1.0, 0.0, 0.0]]), Tensor(np.ones((4, 2))))


def test_threshold_gate_examples():
    s_q = Tensor([0.3, 0.01, 0.5])
    assert threshold_gate(s_q, 0.025).data.tolist() == [0.3, 0.0, 0.5]
    np.testing.assert_array_equal(threshold_gate(s_q, 0.0).data, s_q.data)


def test_threshold_gate_sparsity_grows_with_tau(rng):
    s_q = nc.softmax_lastdim(Tensor(rng.standard_normal((20, 49))))
    zeros = [int((threshold_gate(s_q, tau).data == 0).sum()) for tau in (0.0, 0.01, 0.02, 0.05, 0.1)]
    assert zeros == sorted(zeros)


def test_empty_gate_reduces_to_global_mean(params, rng):
    v_map = Tensor(rng.standard_normal((4, 4)))
    zero = Tensor(np.zeros((1, 4)))
    params.tau = 0.5
    out = target_aware_visual(v_map, zero, zero, params)
    np.testing.assert_array_equal(out.s_q_gated.data, np.zeros((1, 4)))
    np.testing.assert_allclose(out.weights.data, np.full((1, 4), 0.25))
    np.testing.assert_allclose(out.f_vi.data, out.f_vg.data, atol=1e-12)


def test_target_boosts_its_region(params):
    v_map = Tensor(3.0 * np.eye(4))
    f_a = Tensor(np.zeros((1, 4)))
    f_tgt = Tensor([[0.0, 0.0, 3.0, 0.0]])
    out = target_aware_visual(v_map, f_a, f_tgt, params)
    assert int(np.argmax(out.weights.data)) == 2
    assert out.weights.data[0, 2] > 0.25


def test_without_target_awareness_weights_are_audio_attention(params, rng):
    v_map = Tensor(rng.standard_normal((6, 4)))
    f_a, f_tgt = Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal((1, 4)))
    full = target_aware_visual(v_map, f_a, f_tgt, params)
    ablated = target_aware_visual(v_map, f_a, f_tgt, params, AblationFlags(no_target_aware=True))
    np.testing.assert_array_equal(full.f_vg.data, ablated.f_vg.data)
    np.testing.assert_array_equal(ablated.weights.data, ablated.s_a.data)
    assert ablated.s_q is None


def test_zero_tau_with_blank_target_keeps_audio_argmax(params, rng):
    params.tau = 0.0
    v_map = Tensor(rng.standard_normal((6, 4)))
    f_a = Tensor(rng.standard_normal((1, 4)))
    out = target_aware_visual(v_map, f_a, Tensor(np.zeros((1, 4))), params)
    assert int(np.argmax(out.weights.data)) == int(np.argmax(out.s_a.data))


def test_without_spatial_grounding_weights_are_uniform(params, rng):
    v_map = Tensor(rng.standard_normal((2, 3, 6, 4)))
    feats = Tensor(rng.standard_normal((2, 3, 1, 4)))
    out = target_aware_visual(v_map, feats, feats, params, AblationFlags(no_spatial_grounding=True))
    np.testing.assert_allclose(out.weights.data, np.full((2, 3, 1, 6), 1 / 6))
    assert out.f_vi is out.f_vg
    assert out.s_a is None


@pytest.mark.parametrize("fusion", list(FusionMode))
def test_batched_maps_are_distributions(params, rng, fusion):
    v_map = Tensor(rng.standard_normal((50, 4, 9, 4)))
    f_a = Tensor(3 * rng.standard_normal((50, 4, 1, 4)))
    f_tgt = Tensor(3 * rng.standard_normal((50, 4, 1, 4)))
    out = target_aware_visual(v_map, f_a, f_tgt, params, AblationFlags(fusion=fusion))
    for probs in (out.weights, out.s_a, out.s_q):
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(probs.data >= 0)
    assert out.f_vt.shape == (50, 4, 1, 4)


def test_gate_passes_gradient_only_through_kept_regions(params, rng):
    v_map = Tensor(rng.standard_normal((6, 4)))
    f_a = Tensor(rng.standard_normal((1, 4)))
    f_tgt = Tensor(2 * rng.standard_normal((1, 4)), requires_grad=True)
    params.tau = 0.2
    with Tape() as tape:
        out = target_aware_visual(v_map, f_a, f_tgt, params)
        loss = nc.sum_all(out.f_vt)
    backward(loss, tape)
    kept = out.s_q.data >= 0.2
    if kept.any():
        assert np.any(f_tgt.grad != 0)
    else:
        np.testing.assert_array_equal(f_tgt.grad, 0.0)


def test_params_validate_shapes(rng):
    with pytest.raises(DomainError):
        TsgParams.init(rng, 4, tau=-0.1)
    good = TsgParams.init(rng, 4)
    bad = TsgParams.init(rng, 3)
    with pytest.raises(DimensionError):
        TsgParams(good.fc, bad.match)


def test_match_loss_is_log_two_for_equal_logits(params, rng):
    params.match.out.weight.data[:] = 0.0
    params.match.out.bias.data[:] = 0.0
    f_a = Tensor(rng.standard_normal((2, 3, 1, 4)))
    f_v = Tensor(rng.standard_normal((2, 3, 1, 4)))
    pairs = sample_match_pairs(["a", "b"], 3, rng)
    assert match_loss(f_a, f_v, pairs, params).item() == pytest.approx(math.log(2), abs=1e-12)


def test_match_loss_needs_one_pair_per_segment(params, rng):
    f = Tensor(rng.standard_normal((2, 3, 1, 4)))
    with pytest.raises(DimensionError):
        match_loss(f, f, MatchPairs(np.arange(4), np.ones(4, dtype=np.intp)), params)


def test_negatives_come_from_other_videos(rng):
    ids = ["a", "a", "b", "c"]
    pairs = sample_match_pairs(ids, 5, rng)
    assert len(pairs) == 20
    assert set(np.unique(pairs.labels)) <= {MATCHED, MISMATCHED}
    for i, (partner, label) in enumerate(zip(pairs.partners, pairs.labels, strict=True)):
        if label == MATCHED:
            assert partner == i
        else:
            assert ids[partner // 5] != ids[i // 5]
    assert 0 < (pairs.labels == MISMATCHED).sum() < 20


def test_single_video_batch_warns_and_stays_in_video(rng, caplog):
    with caplog.at_level(logging.WARNING, logger="tass.tsg"):
        pairs = sample_match_pairs(["a", "a"], 4, rng)
    assert "single video" in caplog.text
    for i, (partner, label) in enumerate(zip(pairs.partners, pairs.labels, strict=True)):
        assert partner // 4 == i // 4
        if label == MISMATCHED:
            assert partner != i


def test_single_segment_of_a_single_video_keeps_its_true_pair():
    for seed in range(20):
        pairs = sample_match_pairs(["a"], 1, np.random.default_rng(seed))
        assert pairs.partners.tolist() == [0]
        assert pairs.labels.tolist() == [MATCHED]


def test_match_head_learns_separable_pairs(rng):
    d = 8
    params = TsgParams.init(rng, d, with_match=True)
    k = np.arange(4)
    a_idx = np.concatenate([np.repeat(k, 4), np.tile(k, 2)])
    v_idx = np.concatenate([np.tile(k, 4), np.tile(k, 2)])
    f_a = Tensor(np.eye(d)[a_idx][:, np.newaxis, :])
    f_v = Tensor(np.eye(d)[v_idx][:, np.newaxis, :])
    labels = (a_idx == v_idx).astype(np.intp)
    pairs = MatchPairs(np.arange(len(labels)), labels)

    opt = Adam(dict(params.match.named_parameters("match")))
    for _ in range(1000):
        opt.zero_grad()
        with Tape() as tape:
            loss = match_loss(f_a, f_v, pairs, params)
        backward(loss, tape)
        opt.step(0.02)

    flat = nc.concat_lastdim(nc.reshape(f_a, (-1, d)), nc.reshape(f_v, (-1, d)))
    accuracy = (np.argmax(params.match(flat).data, axis=-1) == labels).mean()
    assert accuracy >= 0.9


def test_match_loss_drops_below_chance_on_generated_scenes(rng):
    spec = ScenarioSpec(K=4, d=16, h=2, w=2, T1=6, max_sources=2, seed=3)
    split = generate_split(spec, gen_prototypes(spec), "train", 64)
    audio = np.stack([v.audio.data for v in split.videos])[:, :, np.newaxis, :]
    visual = np.stack([v.visual.data.reshape(spec.t1, spec.h * spec.w, spec.d) for v in split.videos])
    ids = [v.video_id for v in split.videos]

    params = TsgParams.init(rng, spec.d)
    audio_proj = Linear.init(rng, spec.d, spec.d)
    opt = Adam({**dict(params.named_parameters()), **dict(audio_proj.named_parameters("audio_proj"))})
    flags = AblationFlags(no_target_aware=True)
    losses = []
    for _ in range(500):
        idx = rng.choice(len(ids), size=16, replace=False)
        pairs = sample_match_pairs([ids[i] for i in idx], spec.t1, rng)
        opt.zero_grad()
        with Tape() as tape:
            f_a = audio_proj(Tensor(audio[idx]))
            grounded = target_aware_visual(Tensor(visual[idx]), f_a, f_a, params, flags)
            loss = match_loss(f_a, grounded.f_vt, pairs, params)
        backward(loss, tape)
        opt.step(5e-3)
        losses.append(loss.item())

    assert np.mean(losses[-50:]) < 0.55 < math.log(2)
