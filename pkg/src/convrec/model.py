"""Full conversational recommender: graph encoder + backbone + fusion.

Variants:
  contextm        pooled dialogue context only (p_c)
  entitym-selfa   mention history summarized by learned self-attention (p_e)
  entitym-timea   mention history summarized by time-aware weights (p_e)
  full            time-aware p_e fused with p_c
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
from torch import nn

from . import context_encoder, generator, preference
from .backbone import BackboneConfig, Seq2SeqBackbone
from .context_encoder import ContextHead
from .corpus import ItemCatalog, Vocabulary
from .generator import DecodeConfig, Hypothesis, VocabBias
from .graph_encoder import RgcnParams, init_params, rgcn_forward
from .kg import KnowledgeGraph
from .preference import (COLD_START, RecommendationDistribution,
                         SelfAttentionParams)
from .recommender import ColdStartPolicy, FusionConfig, fuse


class Variant(str, Enum):
    CONTEXTM = "contextm"
    ENTITYM_SELFA = "entitym-selfa"
    ENTITYM_TIMEA = "entitym-timea"
    FULL = "full"

    @property
    def uses_entity(self) -> bool:
        return self is not Variant.CONTEXTM

    @property
    def uses_context(self) -> bool:
        return self in (Variant.CONTEXTM, Variant.FULL)


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    entity_dim: int = 128
    rgcn_layers: int = 1
    num_bases: int | None = None
    variant: Variant = Variant.FULL
    context_hidden: bool = False
    mask_context: bool = True
    seed: int = 0


class CrsModel(nn.Module):
    """Holds every learnable table; the graph structure itself is fixed."""

    def __init__(self, cfg: ModelConfig, kg: KnowledgeGraph):
        super().__init__()
        self.cfg = cfg
        self.kg = kg
        self.backbone = Seq2SeqBackbone(cfg.backbone)
        init = init_params(kg, cfg.entity_dim, seed=cfg.seed,
                           num_bases=cfg.num_bases)
        self.entity_embeddings = nn.Parameter(init.entity_embeddings)
        if cfg.num_bases is None:
            self.relation_weights = nn.Parameter(init.relation_weights)
            self.relation_bases = None
            self.relation_coefficients = None
        else:
            self.relation_weights = None
            self.relation_bases = nn.Parameter(init.basis)
            self.relation_coefficients = nn.Parameter(init.coefficients)
        self.context_head = ContextHead(cfg.backbone.d_model, kg.num_entities,
                                        hidden=cfg.context_hidden)
        gen = torch.Generator().manual_seed(cfg.seed + 1)
        self.attn_scoring = nn.Parameter(
            torch.randn(cfg.entity_dim, generator=gen) / cfg.entity_dim ** 0.5)
        self.register_buffer(
            "item_mask", torch.tensor(kg.item_mask, dtype=torch.bool))

    # --- graph side ---

    def rgcn_params(self) -> RgcnParams:
        if self.relation_weights is not None:
            return RgcnParams(entity_embeddings=self.entity_embeddings,
                              relation_weights=self.relation_weights)
        return RgcnParams(entity_embeddings=self.entity_embeddings,
                          basis=self.relation_bases,
                          coefficients=self.relation_coefficients)

    def entity_table(self) -> torch.Tensor:
        return rgcn_forward(self.kg, self.rgcn_params(),
                            layers=self.cfg.rgcn_layers)

    def entity_summary(self, history, table: torch.Tensor,
                       decay: float) -> torch.Tensor:
        """Zero vector for an empty history (uniform logits downstream)."""
        if len(history) == 0:
            return torch.zeros(table.shape[-1], dtype=table.dtype,
                               device=table.device)
        if self.cfg.variant is Variant.ENTITYM_SELFA:
            return preference.self_attention_summary(
                history, table, SelfAttentionParams(self.attn_scoring))
        return preference.time_aware_summary(history, table, decay)

    def entity_logits(self, histories, table: torch.Tensor,
                      decay: float) -> torch.Tensor:
        summaries = torch.stack(
            [self.entity_summary(h, table, decay) for h in histories])
        return summaries @ table.t()

    def entity_distribution(self, history, decay: float,
                            table: torch.Tensor | None = None):
        if len(history) == 0:
            return COLD_START
        if table is None:
            table = self.entity_table()
        summary = self.entity_summary(history, table, decay)
        return preference.entity_scores(summary, table, self.item_mask)

    # --- context side ---

    def context_logits(self, memory: torch.Tensor,
                       attention_mask: torch.Tensor) -> torch.Tensor:
        pooled = context_encoder.pooled_representation(
            context_encoder.ContextEncoding(memory, attention_mask))
        return self.context_head(pooled)

    def context_distribution(self, src_ids: torch.Tensor) -> RecommendationDistribution:
        encoding = context_encoder.encode(self.backbone, src_ids)
        return context_encoder.context_scores(
            encoding, self.context_head, self.item_mask,
            apply_mask=self.cfg.mask_context)

    # --- fusion + generation ---

    def recommend(self, src_ids: torch.Tensor, history,
                  fusion: FusionConfig) -> RecommendationDistribution:
        variant = self.cfg.variant
        table = self.entity_table() if variant.uses_entity else None
        p_e = (self.entity_distribution(history, fusion.decay, table)
               if variant.uses_entity else None)
        p_c = (self.context_distribution(src_ids)
               if variant.uses_context else None)
        if variant is Variant.CONTEXTM:
            return p_c
        if not variant.uses_context:
            if p_e is COLD_START:
                return RecommendationDistribution.uniform(self.item_mask)
            return p_e
        return fuse(p_e, p_c, fusion)

    def generate(self, src_ids: torch.Tensor, bias: VocabBias | None,
                 cfg: DecodeConfig) -> list[Hypothesis]:
        memory, mask = self.backbone.encode(src_ids)

        def step_fn(prefixes):
            ids = torch.tensor(list(prefixes), dtype=torch.long,
                               device=src_ids.device)
            mem = memory.expand(ids.shape[0], -1, -1)
            msk = mask.expand(ids.shape[0], -1)
            hidden = self.backbone.decode_hidden(ids, mem, msk)
            return self.backbone.logits(hidden[:, -1, :])

        return generator.decode(step_fn, self.cfg.backbone.bos_id,
                                self.cfg.backbone.eos_id, cfg, bias)

    # --- training support ---

    def forward_train(self, src_ids: torch.Tensor, tgt_in: torch.Tensor,
                      histories, decay: float):
        """Returns (gen_logits, entity_logits or None, context_logits or None)."""
        memory, mask = self.backbone.encode(src_ids)
        gen_logits = self.backbone.logits(
            self.backbone.decode_hidden(tgt_in, memory, mask))
        entity_logits = None
        context_logits = None
        if self.cfg.variant.uses_entity:
            entity_logits = self.entity_logits(histories, self.entity_table(),
                                               decay)
        if self.cfg.variant.uses_context:
            context_logits = self.context_logits(memory, mask)
        return gen_logits, entity_logits, context_logits

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """'new' = graph encoder, heads, item embeddings; 'pretrained' = rest."""
        new_params = [self.entity_embeddings, self.attn_scoring,
                      self.backbone.item_embed.weight]
        if self.relation_weights is not None:
            new_params.append(self.relation_weights)
        else:
            new_params.extend([self.relation_bases, self.relation_coefficients])
        new_params.extend(self.context_head.parameters())
        new_ids = {id(p) for p in new_params}
        pretrained = [p for p in self.parameters() if id(p) not in new_ids]
        return {"new": new_params, "pretrained": pretrained}

    # --- checkpoint sections ---

    def section_state(self) -> dict:
        graph = {"entity_embeddings": self.entity_embeddings.detach().clone()}
        if self.relation_weights is not None:
            graph["relation_weights"] = self.relation_weights.detach().clone()
        else:
            graph["basis"] = self.relation_bases.detach().clone()
            graph["coefficients"] = self.relation_coefficients.detach().clone()
        return {
            "backbone": self.backbone.state_dict(),
            "graph_encoder": graph,
            "preference": {"attn_scoring": self.attn_scoring.detach().clone()},
            "context_head": self.context_head.state_dict(),
        }

    def load_section_state(self, sections: dict) -> None:
        self.backbone.load_state_dict(sections["backbone"])
        graph = sections["graph_encoder"]
        with torch.no_grad():
            self.entity_embeddings.copy_(graph["entity_embeddings"])
            if self.relation_weights is not None:
                self.relation_weights.copy_(graph["relation_weights"])
            else:
                self.relation_bases.copy_(graph["basis"])
                self.relation_coefficients.copy_(graph["coefficients"])
            self.attn_scoring.copy_(sections["preference"]["attn_scoring"])
        self.context_head.load_state_dict(sections["context_head"])
