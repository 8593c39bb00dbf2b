import math

import pytest
import torch

from convrec.generator import (BiasMode, DecodeConfig, DecodeStrategy,
                               VocabBias, _biased_log_probs, _finalize,
                               build_bias, decode)
from convrec.preference import RecommendationDistribution
from helpers import tiny_catalog, tiny_kg, tiny_vocab

# toy vocabulary: 0=bos, 1=eos, 2..5 words, 6..7 items
BOS, EOS, V = 0, 1, 8
ITEM_START = 6


def constant_step(row):
    values = torch.tensor(row, dtype=torch.float32)

    def step(prefixes):
        return values.repeat(len(prefixes), 1)
    return step


def markov_step(table):
    rows = torch.tensor(table, dtype=torch.float32)

    def step(prefixes):
        return torch.stack([rows[p[-1]] for p in prefixes])
    return step


def chain_table():
    """bos->2, 2->3, 3->eos, with strictly decreasing alternatives."""
    rows = [[-9.0] * V for _ in range(V)]
    rows[BOS][2], rows[BOS][3], rows[BOS][4] = 2.0, 1.0, 0.5
    rows[2][3], rows[2][4], rows[2][5] = 2.0, 1.0, 0.5
    rows[3][EOS], rows[3][4], rows[3][5] = 2.0, 1.0, 0.5
    for t in (4, 5, 6, 7, EOS):
        rows[t][EOS] = 2.0
        rows[t][5] = 1.0
    return rows


def cfg(**kw):
    base = dict(strategy=DecodeStrategy.GREEDY, beam_size=1, groups=1,
                max_new_tokens=8, bias_trigger_k=3)
    base.update(kw)
    return DecodeConfig(**base)


# --- greedy ---

def test_greedy_follows_hand_path():
    hyps = decode(markov_step(chain_table()), BOS, EOS, cfg())
    assert len(hyps) == 1
    assert hyps[0].tokens == [2, 3]
    assert hyps[0].length == 3            # eos counted
    rows = torch.tensor(chain_table())
    want = sum(float(torch.log_softmax(rows[a], dim=0)[b])
               for a, b in [(BOS, 2), (2, 3), (3, EOS)])
    assert hyps[0].logprob == pytest.approx(want, abs=1e-6)
    assert hyps[0].score == pytest.approx(want / 3.0, abs=1e-6)


def test_max_new_tokens_cap():
    row = [-9.0] * V
    row[4] = 3.0                          # never emits eos
    hyps = decode(constant_step(row), BOS, EOS, cfg(max_new_tokens=5))
    assert hyps[0].tokens == [4] * 5
    assert hyps[0].length == 5


def test_immediate_eos_keeps_length_one():
    row = [-9.0] * V
    row[EOS] = 3.0
    hyps = decode(constant_step(row), BOS, EOS, cfg())
    assert hyps[0].tokens == []
    assert hyps[0].length == 1


# --- bias application ---

def test_zero_bias_is_bit_identical():
    step = markov_step(chain_table())
    zero = VocabBias(torch.zeros(V), ITEM_START)
    assert zero.is_zero()
    for strategy, groups in [(DecodeStrategy.GREEDY, 1),
                             (DecodeStrategy.DIVERSE_BEAM, 2)]:
        conf = cfg(strategy=strategy, beam_size=4, groups=groups)
        plain = decode(step, BOS, EOS, conf)
        biased = decode(step, BOS, EOS, conf, bias=zero)
        assert [h.tokens for h in plain] == [h.tokens for h in biased]
        assert [h.logprob for h in plain] == [h.logprob for h in biased]
        assert [h.score for h in plain] == [h.score for h in biased]


def test_biased_step_renormalizes_and_matches_hand_arithmetic():
    logits = torch.zeros(1, V)
    logits[0, 6] = 1.0                    # item token leads, trigger fires
    bias_vec = torch.zeros(V)
    bias_vec[6], bias_vec[7] = 0.3, 0.1
    out = _biased_log_probs(logits, VocabBias(bias_vec, ITEM_START), cfg())
    probs = torch.exp(out[0])
    assert abs(float(probs.sum()) - 1.0) <= 1e-6
    base = torch.softmax(logits[0], dim=0)
    mixed = base + bias_vec
    want = mixed / mixed.sum()
    assert torch.allclose(probs, want, atol=1e-6)


def test_bias_gate_requires_item_in_top_k():
    logits = torch.zeros(1, V)
    logits[0, 2], logits[0, 3], logits[0, 4] = 3.0, 2.5, 2.0
    logits[0, 6], logits[0, 7] = -5.0, -6.0
    bias_vec = torch.zeros(V)
    bias_vec[6] = 0.5
    bias = VocabBias(bias_vec, ITEM_START)
    gated = _biased_log_probs(logits, bias, cfg(bias_trigger_k=3))
    assert torch.equal(gated, torch.log_softmax(logits, dim=-1))
    fired = _biased_log_probs(logits, bias, cfg(bias_trigger_k=V))
    assert not torch.equal(fired, torch.log_softmax(logits, dim=-1))


def test_bias_applies_per_row():
    logits = torch.zeros(2, V)
    logits[0, 6] = 2.0                    # row 0 fires
    logits[1, 2] = 2.0                    # row 1 stays unbiased
    bias_vec = torch.zeros(V)
    bias_vec[6] = 0.4
    out = _biased_log_probs(logits, VocabBias(bias_vec, ITEM_START),
                            cfg(bias_trigger_k=1))
    plain = torch.log_softmax(logits, dim=-1)
    assert not torch.equal(out[0], plain[0])
    assert torch.equal(out[1], plain[1])


def test_logit_bias_mode():
    logits = torch.zeros(1, V)
    logits[0, 6] = 1.0
    bias_vec = torch.zeros(V)
    bias_vec[6] = 2.0
    out = _biased_log_probs(logits, VocabBias(bias_vec, ITEM_START),
                            cfg(bias_mode=BiasMode.LOGIT))
    want = torch.log_softmax(logits + bias_vec, dim=-1)
    assert torch.allclose(out, want, atol=1e-7)


def test_build_bias_lifts_entity_probabilities():
    kg, catalog, vocab = tiny_kg(), tiny_catalog(), tiny_vocab()
    probs = torch.tensor([0.5, 0.3, 0.2, 0.0, 0.0], dtype=torch.float64)
    p_rec = RecommendationDistribution(
        probs, torch.tensor([True, True, True, False, False]))
    bias = build_bias(p_rec, vocab, catalog, kg)
    assert bias.item_start == vocab.item_block_start
    assert not bias.is_zero()
    assert (bias.vector[:vocab.item_block_start] == 0).all()
    assert float(bias.vector[vocab.item_tokens["101"]]) == 0.5
    assert float(bias.vector[vocab.item_tokens["102"]]) == 0.3
    assert float(bias.vector[vocab.item_tokens["103"]]) == 0.2


def test_build_bias_skips_unlinked_items():
    kg, catalog, vocab = tiny_kg(), tiny_catalog(), tiny_vocab()
    del catalog.item_to_entity["103"]
    p_rec = RecommendationDistribution(
        torch.tensor([0.6, 0.4, 0.0, 0.0, 0.0]),
        torch.tensor([True, True, False, False, False]))
    bias = build_bias(p_rec, vocab, catalog, kg)
    assert float(bias.vector[vocab.item_tokens["103"]]) == 0.0


# --- beams ---

def test_beam_size_one_equals_greedy():
    step = markov_step(chain_table())
    greedy = decode(step, BOS, EOS, cfg())[0]
    beamed = decode(step, BOS, EOS,
                    cfg(strategy=DecodeStrategy.BEAM))[0]
    assert beamed.tokens == greedy.tokens
    assert beamed.logprob == greedy.logprob
    assert beamed.score == greedy.score


def test_diverse_with_one_group_equals_plain_beam():
    step = markov_step(chain_table())
    for beam_size in (2, 4):
        plain = decode(step, BOS, EOS,
                       cfg(strategy=DecodeStrategy.BEAM,
                           beam_size=beam_size))
        diverse = decode(step, BOS, EOS,
                         cfg(strategy=DecodeStrategy.DIVERSE_BEAM,
                             beam_size=beam_size, groups=1))
        assert [(h.tokens, h.logprob, h.score) for h in plain] == \
            [(h.tokens, h.logprob, h.score) for h in diverse]


def test_diversity_penalty_pushes_groups_apart():
    row = [-9.0] * V
    row[4], row[5] = 2.0, 1.9             # two near-tied continuations
    step = constant_step(row)
    spread = decode(step, BOS, EOS,
                    cfg(strategy=DecodeStrategy.DIVERSE_BEAM, beam_size=2,
                        groups=2, diversity_strength=5.0, max_new_tokens=1))
    assert {h.tokens[0] for h in spread} == {4, 5}
    merged = decode(step, BOS, EOS,
                    cfg(strategy=DecodeStrategy.DIVERSE_BEAM, beam_size=2,
                        groups=2, diversity_strength=0.0, max_new_tokens=1))
    assert {h.tokens[0] for h in merged} == {4}


def test_results_sorted_by_score():
    step = markov_step(chain_table())
    hyps = decode(step, BOS, EOS, cfg(strategy=DecodeStrategy.DIVERSE_BEAM,
                                      beam_size=4, groups=2))
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)


def test_decode_is_deterministic():
    step = markov_step(chain_table())
    conf = cfg(strategy=DecodeStrategy.DIVERSE_BEAM, beam_size=4, groups=2)
    first = decode(step, BOS, EOS, conf)
    second = decode(step, BOS, EOS, conf)
    assert [(h.tokens, h.logprob) for h in first] == \
        [(h.tokens, h.logprob) for h in second]


# --- scoring ---

def test_finalize_strips_eos_and_counts_it():
    hyp = _finalize([5, 4, EOS], EOS, logprob=-1.2, length_penalty=2.0)
    assert hyp.tokens == [5, 4]
    assert hyp.length == 3
    assert hyp.score == pytest.approx(-1.2 / 9.0)
    bare = _finalize([], EOS, logprob=0.0, length_penalty=1.0)
    assert bare.length == 1


def test_length_penalty_changes_ranking():
    short = _finalize([2, EOS], EOS, -1.0, 0.0)
    long = _finalize([2, 3, 4, EOS], EOS, -1.5, 0.0)
    assert short.score > long.score
    short2 = _finalize([2, EOS], EOS, -1.0, 2.0)
    long2 = _finalize([2, 3, 4, EOS], EOS, -1.5, 2.0)
    assert long2.score > short2.score


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=4, groups=3)
    with pytest.raises(ValueError):
        DecodeConfig(max_new_tokens=0)
    with pytest.raises(ValueError):
        DecodeConfig(diversity_strength=-1.0)
    with pytest.raises(ValueError):
        DecodeConfig(length_penalty=-0.5)
    with pytest.raises(ValueError):
        DecodeConfig(bias_trigger_k=0)
