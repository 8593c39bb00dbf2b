"""Fuse entity-level and contextual preferences, rank items.

p_rec = mu * p_e + (1 - mu) * p_c. With no mention history there is no p_e;
the cold-start policy either falls back to the contextual distribution alone
or substitutes a uniform distribution over items before fusing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch

from .corpus import ItemCatalog
from .kg import KnowledgeGraph
from .preference import COLD_START, RecommendationDistribution


class ColdStartPolicy(str, Enum):
    CONTEXT_ONLY = "context_only"
    UNIFORM_ENTITY = "uniform_entity"


@dataclass
class FusionConfig:
    """Fusion weight mu plus the recency decay (the lambda hyperparameter)."""

    mu: float = 0.5
    decay: float = 1.5
    cold_start: ColdStartPolicy = ColdStartPolicy.CONTEXT_ONLY

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.decay <= 0:
            raise ValueError(f"decay must be positive, got {self.decay}")


def fuse(entity_dist, context_dist: RecommendationDistribution,
         cfg: FusionConfig) -> RecommendationDistribution:
    """Convex combination of the two distributions over a shared support."""
    if entity_dist is COLD_START:
        if cfg.cold_start is ColdStartPolicy.CONTEXT_ONLY:
            return context_dist
        entity_dist = RecommendationDistribution.uniform(context_dist.support)
    if not torch.equal(entity_dist.support, context_dist.support):
        raise ValueError("entity and context distributions have different supports")
    probs = cfg.mu * entity_dist.probabilities + (1.0 - cfg.mu) * context_dist.probabilities
    return RecommendationDistribution(probabilities=probs,
                                      support=context_dist.support)


@dataclass(frozen=True)
class RankedItem:
    entity_id: int
    item_id: str
    name: str
    prob: float


def build_item_index(kg: KnowledgeGraph, catalog: ItemCatalog) -> dict[int, tuple[str, str]]:
    """Maps item entity ids to (item_id, display name)."""
    index: dict[int, tuple[str, str]] = {}
    for item_id, entity_name in catalog.item_to_entity.items():
        entity = kg.entity_index.get(entity_name)
        if entity is not None:
            index[entity] = (item_id, catalog.items[item_id])
    return index


def top_k(dist: RecommendationDistribution, k: int,
          item_index: dict[int, tuple[str, str]],
          exclude: frozenset[int] = frozenset()) -> list[RankedItem]:
    """Top-k items by probability; ties break on item id for determinism."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    ranked = []
    for entity in torch.nonzero(dist.support, as_tuple=True)[0].tolist():
        if entity in exclude:
            continue
        item_id, name = item_index[entity]
        ranked.append(RankedItem(entity_id=entity, item_id=item_id, name=name,
                                 prob=float(dist.probabilities[entity])))
    ranked.sort(key=lambda r: (-r.prob, r.item_id))
    return ranked[:k]
