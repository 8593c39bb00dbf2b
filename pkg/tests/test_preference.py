import math

import pytest
import torch
from hypothesis import given, strategies as st

from convrec.preference import (COLD_START, ColdStartError,
                                RecommendationDistribution,
                                SelfAttentionParams, entity_scores,
                                masked_item_logits, self_attention_summary,
                                time_aware_summary, time_weights)


# --- oracles ---

def direct_time_weights(length: int, decay: float) -> list[float]:
    """Literal definition: decay^(i-1) / sum_j decay^(j-1), i = 1 earliest."""
    raw = [decay ** (i - 1) for i in range(1, length + 1)]
    total = sum(raw)
    return [value / total for value in raw]


def weighted_sum_oracle(history, table, decay):
    weights = direct_time_weights(len(history), decay)
    out = torch.zeros(table.shape[1], dtype=table.dtype)
    for w, entity in zip(weights, history):
        out += w * table[entity]
    return out


# --- time weights ---

@pytest.mark.parametrize("decay", [0.5, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("length", [1, 2, 3, 4, 5, 6])
def test_time_weights_match_direct_formula(decay, length):
    got = time_weights(length, decay)
    want = direct_time_weights(length, decay)
    assert got.shape == (length,)
    for g, w in zip(got.tolist(), want):
        assert abs(g - w) <= 1e-10


def test_time_weights_geometric_series():
    got = time_weights(3, 2.0)
    assert torch.allclose(got, torch.tensor([1 / 7, 2 / 7, 4 / 7],
                                            dtype=torch.float64), atol=1e-12)


def test_time_weights_uniform_at_one():
    got = time_weights(5, 1.0)
    assert torch.allclose(got, torch.full((5,), 0.2, dtype=torch.float64),
                          atol=1e-12)


def test_time_weights_errors():
    with pytest.raises(ColdStartError):
        time_weights(0, 1.5)
    with pytest.raises(ValueError):
        time_weights(3, 0.0)
    with pytest.raises(ValueError):
        time_weights(3, -1.0)


def test_time_weights_no_overflow_on_long_histories():
    # the naive formula overflows (2.0**2000); the shifted form must not
    got = time_weights(2000, 2.0)
    assert torch.isfinite(got).all()
    assert abs(float(got.sum()) - 1.0) <= 1e-9
    assert float(got[-1]) == pytest.approx(0.5)


@given(length=st.integers(1, 64),
       decay=st.floats(0.05, 8.0, allow_nan=False, allow_infinity=False))
def test_time_weights_properties(length, decay):
    got = time_weights(length, decay)
    assert abs(float(got.sum()) - 1.0) <= 1e-9
    assert (got > 0).all()
    diffs = got[1:] - got[:-1]
    if decay > 1.0:
        assert (diffs > 0).all()
    elif decay < 1.0:
        assert (diffs < 0).all()


# --- summaries ---

def test_time_aware_summary_matches_weighted_sum():
    gen = torch.Generator().manual_seed(7)
    table = torch.rand((9, 4), generator=gen, dtype=torch.float64)
    history = [3, 1, 3, 8, 0]
    got = time_aware_summary(history, table, 1.5)
    want = weighted_sum_oracle(history, table, 1.5)
    assert torch.allclose(got, want, atol=1e-10)


def test_time_aware_summary_mean_at_one():
    table = torch.arange(12, dtype=torch.float64).reshape(6, 2)
    got = time_aware_summary([0, 2, 4], table, 1.0)
    assert torch.allclose(got, table[[0, 2, 4]].mean(dim=0), atol=1e-12)


def test_time_aware_summary_empty_history():
    with pytest.raises(ColdStartError):
        time_aware_summary([], torch.ones(3, 2), 1.5)
    assert repr(COLD_START) == "COLD_START"


def test_self_attention_summary_matches_manual():
    gen = torch.Generator().manual_seed(3)
    table = torch.rand((5, 3), generator=gen, dtype=torch.float64)
    scoring = torch.rand(3, generator=gen, dtype=torch.float64)
    history = [4, 0, 2]
    got = self_attention_summary(history, table,
                                 SelfAttentionParams(scoring))
    emb = table[history]
    weights = torch.softmax(emb @ scoring, dim=0)
    assert torch.allclose(got, weights @ emb, atol=1e-12)
    with pytest.raises(ColdStartError):
        self_attention_summary([], table, SelfAttentionParams(scoring))


# --- distributions ---

def test_masked_item_logits():
    logits = torch.tensor([1.0, 2.0, 3.0])
    mask = torch.tensor([True, False, True])
    out = masked_item_logits(logits, mask)
    assert out[1] == float("-inf")
    assert out[0] == 1.0 and out[2] == 3.0
    with pytest.raises(ValueError):
        masked_item_logits(logits, torch.zeros(3, dtype=torch.bool))


def test_entity_scores_zero_off_support():
    summary = torch.tensor([0.3, -0.2], dtype=torch.float64)
    table = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
                         dtype=torch.float64)
    mask = torch.tensor([True, True, False, True])
    dist = entity_scores(summary, table, mask)
    dist.validate()
    assert float(dist.probabilities[2]) == 0.0
    on = (table[[0, 1, 3]] @ summary).softmax(dim=0)
    assert torch.allclose(dist.probabilities[[0, 1, 3]], on, atol=1e-12)


def test_entity_scores_dim_mismatch():
    with pytest.raises(ValueError):
        entity_scores(torch.zeros(3), torch.zeros(4, 2),
                      torch.ones(4, dtype=torch.bool))


def test_distribution_validate_rejects_bad_inputs():
    support = torch.tensor([True, True, False])
    good = RecommendationDistribution(torch.tensor([0.4, 0.6, 0.0]), support)
    good.validate()
    with pytest.raises(ValueError):
        RecommendationDistribution(torch.tensor([0.4, 0.4, 0.0]),
                                   support).validate()
    with pytest.raises(ValueError):
        RecommendationDistribution(torch.tensor([0.4, 0.5, 0.1]),
                                   support).validate()
    with pytest.raises(ValueError):
        RecommendationDistribution(torch.tensor([-0.2, 1.2, 0.0]),
                                   support).validate()


def test_uniform_distribution():
    support = torch.tensor([True, False, True, True])
    dist = RecommendationDistribution.uniform(support)
    dist.validate()
    assert float(dist.probabilities[1]) == 0.0
    assert float(dist.probabilities[0]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        RecommendationDistribution.uniform(torch.zeros(2, dtype=torch.bool))


@given(st.data())
def test_entity_scores_always_valid(data):
    n = data.draw(st.integers(2, 12))
    d = data.draw(st.integers(1, 6))
    seed = data.draw(st.integers(0, 2 ** 16))
    gen = torch.Generator().manual_seed(seed)
    table = torch.randn((n, d), generator=gen)
    summary = torch.randn(d, generator=gen)
    mask = torch.zeros(n, dtype=torch.bool)
    mask[data.draw(st.integers(0, n - 1))] = True
    for i in range(n):
        if data.draw(st.booleans()):
            mask[i] = True
    dist = entity_scores(summary, table, mask)
    dist.validate(atol=1e-6)
    off = dist.probabilities[~mask]
    assert off.numel() == 0 or float(off.abs().max()) == 0.0


def test_history_order_matters_when_decay_above_one():
    """Recency weighting is ordering-sensitive; the mean (decay=1) is not."""
    table = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    forward = time_aware_summary([0, 1], table, 2.0)
    backward = time_aware_summary([1, 0], table, 2.0)
    assert not torch.allclose(forward, backward)
    assert torch.allclose(time_aware_summary([0, 1], table, 1.0),
                          time_aware_summary([1, 0], table, 1.0))
