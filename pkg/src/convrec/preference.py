"""Summarize mention histories into preference vectors and score items.

The time-aware summary weights the i-th mention (earliest first) by
lambda^(i-1) / sum_j lambda^(j-1); lambda > 1 therefore favors recent
mentions. Weights are computed in a shifted form so neither large lambda nor
long histories overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

PreferenceHistory = Sequence[int]


class ColdStartError(ValueError):
    """Raised when a preference summary is requested for an empty history."""


class _ColdStart:
    def __repr__(self):
        return "COLD_START"


COLD_START = _ColdStart()


@dataclass
class SelfAttentionParams:
    """Learnable scoring vector for the self-attention baseline summarizer."""

    scoring: torch.Tensor


@dataclass
class RecommendationDistribution:
    """Probability vector over all entities, supported only on items."""

    probabilities: torch.Tensor
    support: torch.Tensor

    def validate(self, atol: float = 1e-6) -> None:
        probs = self.probabilities.detach()
        total = float(probs.sum())
        if abs(total - 1.0) > atol:
            raise ValueError(f"probabilities sum to {total}, expected 1")
        off_support = probs[~self.support]
        if off_support.numel() and float(off_support.abs().max()) != 0.0:
            raise ValueError("nonzero probability outside the item support")
        if (probs < 0).any():
            raise ValueError("negative probability entry")

    @classmethod
    def uniform(cls, support: torch.Tensor) -> "RecommendationDistribution":
        count = int(support.sum())
        if count == 0:
            raise ValueError("support mask selects no items")
        probs = torch.where(support, torch.tensor(1.0 / count, dtype=torch.get_default_dtype()),
                            torch.tensor(0.0))
        return cls(probabilities=probs, support=support)


def time_weights(length: int, decay: float, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Normalized recency weights for a history of the given length."""
    if length < 1:
        raise ColdStartError("empty history has no time-aware weights")
    if decay <= 0:
        raise ValueError(f"decay must be positive, got {decay}")
    exponents = torch.arange(length, dtype=dtype)
    if decay > 1.0:
        exponents = exponents - (length - 1)
    raw = torch.tensor(float(decay), dtype=dtype) ** exponents
    return raw / raw.sum()


def time_aware_summary(history: PreferenceHistory, table: torch.Tensor,
                       decay: float) -> torch.Tensor:
    """Recency-weighted combination of the history's entity embeddings."""
    if len(history) == 0:
        raise ColdStartError("empty history; caller should apply its cold-start policy")
    embeddings = table[torch.tensor(list(history), dtype=torch.long)]
    weights = time_weights(len(history), decay, dtype=table.dtype)
    return weights @ embeddings


def self_attention_summary(history: PreferenceHistory, table: torch.Tensor,
                           attn_params: SelfAttentionParams) -> torch.Tensor:
    """Baseline summarizer: softmax over a learned score per mention."""
    if len(history) == 0:
        raise ColdStartError("empty history; caller should apply its cold-start policy")
    embeddings = table[torch.tensor(list(history), dtype=torch.long)]
    scores = embeddings @ attn_params.scoring.to(table.dtype)
    weights = torch.softmax(scores, dim=0)
    return weights @ embeddings


def masked_item_logits(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Set non-item logits to -inf so they get exactly zero probability."""
    if not mask.any():
        raise ValueError("item mask selects no entities")
    return torch.where(mask, logits, torch.tensor(float("-inf"), dtype=logits.dtype))


def entity_scores(summary: torch.Tensor, table: torch.Tensor,
                  mask: torch.Tensor) -> RecommendationDistribution:
    """Entity-level recommendation distribution p_e = softmax(mask(h H^T))."""
    if summary.shape[-1] != table.shape[-1]:
        raise ValueError(
            f"summary dim {summary.shape[-1]} != table dim {table.shape[-1]}")
    logits = table.to(summary.dtype) @ summary
    probs = torch.softmax(masked_item_logits(logits, mask), dim=-1)
    return RecommendationDistribution(probabilities=probs, support=mask)
