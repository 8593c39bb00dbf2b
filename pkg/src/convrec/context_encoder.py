"""Contextual preference: pool encoder states, project to entity logits.

Pooling is a masked mean over every non-padding position, separator tokens
included. The projection defaults to a single affine map from the model
dimension to the entity set; a one-hidden-layer variant sits behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import Seq2SeqBackbone
from .preference import RecommendationDistribution, masked_item_logits


@dataclass
class ContextEncoding:
    hidden: torch.Tensor
    attention_mask: torch.Tensor

    def __post_init__(self):
        if self.hidden.shape[:2] != self.attention_mask.shape:
            raise ValueError("hidden and attention_mask batch/length mismatch")


def encode(backbone: Seq2SeqBackbone, src_ids: torch.Tensor) -> ContextEncoding:
    hidden, mask = backbone.encode(src_ids)
    return ContextEncoding(hidden=hidden, attention_mask=mask)


def pooled_representation(encoding: ContextEncoding) -> torch.Tensor:
    """Mean of encoder states over real tokens; (batch, d_model)."""
    mask = encoding.attention_mask
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        raise ValueError("cannot pool a context with no real tokens")
    summed = (encoding.hidden * mask.unsqueeze(-1)).sum(dim=1)
    return summed / counts.unsqueeze(-1).to(summed.dtype)


class ContextHead(nn.Module):
    """Projects a pooled context vector to one logit per entity."""

    def __init__(self, d_model: int, num_entities: int, hidden: bool = False):
        super().__init__()
        self.hidden = hidden
        if hidden:
            self.net = nn.Sequential(nn.Linear(d_model, d_model), nn.ReLU(),
                                     nn.Linear(d_model, num_entities))
        else:
            self.net = nn.Linear(d_model, num_entities)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.net(pooled)


def context_scores(encoding: ContextEncoding, head: ContextHead,
                   mask: torch.Tensor,
                   apply_mask: bool = True) -> RecommendationDistribution:
    """p_c for a single context; item masking can be disabled for ablations."""
    pooled = pooled_representation(encoding)
    if pooled.shape[0] != 1:
        raise ValueError("context_scores expects a single context; "
                         "use the head directly for batches")
    logits = head(pooled).squeeze(0)
    if apply_mask:
        probs = torch.softmax(masked_item_logits(logits, mask), dim=-1)
        return RecommendationDistribution(probabilities=probs, support=mask)
    probs = torch.softmax(logits, dim=-1)
    return RecommendationDistribution(
        probabilities=probs, support=torch.ones_like(mask))
