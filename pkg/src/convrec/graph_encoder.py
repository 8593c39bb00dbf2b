"""Relation-aware entity representations via the R-GCN update.

Each layer computes  h_e <- ReLU( sum_r sum_{e' in N_r(e)} (1/Z) W_r h_e' ),
with a reserved self-loop relation contributing W_self h_e and the
normalization constant Z fixed to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .kg import KnowledgeGraph


@dataclass
class RgcnParams:
    """Per-relation transforms plus free entity input embeddings.

    Either `relation_weights` (num_relations, d, d) is given directly, or the
    basis-decomposed pair (`basis` (num_bases, d, d), `coefficients`
    (num_relations, num_bases)) is used to keep memory linear in num_bases.
    """

    entity_embeddings: torch.Tensor
    relation_weights: torch.Tensor | None = None
    basis: torch.Tensor | None = None
    coefficients: torch.Tensor | None = None

    def materialized_weights(self) -> torch.Tensor:
        if self.relation_weights is not None:
            return self.relation_weights
        if self.basis is None or self.coefficients is None:
            raise ValueError("params need either relation_weights or basis+coefficients")
        return torch.einsum("rb,bij->rij", self.coefficients, self.basis)

    @property
    def dim(self) -> int:
        return self.entity_embeddings.shape[1]

    def tensors(self) -> list[torch.Tensor]:
        named = [self.entity_embeddings, self.relation_weights,
                 self.basis, self.coefficients]
        return [t for t in named if t is not None]


def init_params(kg: KnowledgeGraph, d: int, seed: int, num_bases: int | None = None,
                dtype: torch.dtype = torch.float32) -> RgcnParams:
    """Seed-deterministic init: zero-mean uniform entries scaled by 1/sqrt(d)."""
    if d <= 0:
        raise ValueError(f"hidden size must be positive, got {d}")
    generator = torch.Generator().manual_seed(seed)
    scale = 1.0 / math.sqrt(d)

    def uniform(*shape):
        raw = torch.rand(shape, generator=generator, dtype=torch.float32)
        return ((raw * 2.0 - 1.0) * scale).to(dtype)

    embeddings = uniform(kg.num_entities, d)
    if num_bases is None:
        return RgcnParams(entity_embeddings=embeddings,
                          relation_weights=uniform(kg.num_relations, d, d))
    return RgcnParams(entity_embeddings=embeddings,
                      basis=uniform(num_bases, d, d),
                      coefficients=uniform(kg.num_relations, num_bases))


def edge_arrays(kg: KnowledgeGraph) -> list[tuple[int, torch.Tensor, torch.Tensor]]:
    """(relation, src ids, dst ids) tensors for every non-self-loop relation."""
    cached = getattr(kg, "_edge_array_cache", None)
    if cached is not None:
        return cached
    arrays = []
    for relation in range(kg.num_relations):
        if relation == kg.self_loop_relation:
            continue
        src, dst = [], []
        for target in sorted(kg.incoming[relation]):
            for source in sorted(kg.incoming[relation][target]):
                src.append(source)
                dst.append(target)
        if src:
            arrays.append((relation, torch.tensor(src, dtype=torch.long),
                           torch.tensor(dst, dtype=torch.long)))
    kg._edge_array_cache = arrays
    return arrays


def rgcn_forward(kg: KnowledgeGraph, params: RgcnParams, layers: int = 1) -> torch.Tensor:
    """Entity table (|E|, d) after `layers` R-GCN updates. Pure in params."""
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    weights = params.materialized_weights()
    if weights.shape[0] != kg.num_relations:
        raise ValueError(
            f"{weights.shape[0]} relation weights for {kg.num_relations} relations")
    if weights.shape[1] != weights.shape[2] or weights.shape[1] != params.dim:
        raise ValueError(
            f"weight shape {tuple(weights.shape[1:])} incompatible with d={params.dim}")
    if params.entity_embeddings.shape[0] != kg.num_entities:
        raise ValueError(
            f"{params.entity_embeddings.shape[0]} embeddings for {kg.num_entities} entities")

    hidden = params.entity_embeddings
    self_loop = kg.self_loop_relation
    for _ in range(layers):
        pre_activation = hidden @ weights[self_loop].T
        for relation, src, dst in edge_arrays(kg):
            messages = hidden[src] @ weights[relation].T
            pre_activation = pre_activation.index_add(0, dst, messages)
        hidden = torch.relu(pre_activation)
    return hidden


def validate_table(table: torch.Tensor) -> None:
    if not torch.isfinite(table).all():
        raise ValueError("entity table contains non-finite entries")
    if (table < 0).any():
        raise ValueError("entity table must be non-negative after ReLU")
