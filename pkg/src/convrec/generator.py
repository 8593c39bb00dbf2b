"""Decoding with a recommendation-aware vocabulary bias.

The bias vector is zero over ordinary words and carries the fused item
probabilities over the item-token block. It is only applied when the step's
own top tokens already include an item token, so purely chit-chat steps are
left untouched; with a zero bias the decoder output is bit-identical to the
unbiased one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import torch

from .corpus import ItemCatalog, Vocabulary
from .kg import KnowledgeGraph
from .preference import RecommendationDistribution

StepFn = Callable[[Sequence[Sequence[int]]], torch.Tensor]


class DecodeStrategy(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    DIVERSE_BEAM = "diverse_beam"


class BiasMode(str, Enum):
    PROB = "prob"
    LOGIT = "logit"


@dataclass
class VocabBias:
    vector: torch.Tensor
    item_start: int

    def is_zero(self) -> bool:
        return not bool((self.vector != 0).any())


@dataclass
class DecodeConfig:
    strategy: DecodeStrategy = DecodeStrategy.GREEDY
    beam_size: int = 4
    groups: int = 2
    length_penalty: float = 1.0
    max_new_tokens: int = 40
    bias_trigger_k: int = 50
    diversity_strength: float = 0.5
    bias_mode: BiasMode = BiasMode.PROB

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if self.groups < 1 or self.beam_size % self.groups != 0:
            raise ValueError(f"groups ({self.groups}) must divide beam_size "
                             f"({self.beam_size})")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be at least 1")
        if self.bias_trigger_k < 1:
            raise ValueError("bias_trigger_k must be at least 1")
        if self.diversity_strength < 0:
            raise ValueError("diversity_strength must be non-negative")
        if self.length_penalty < 0:
            raise ValueError("length_penalty must be non-negative")


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    length: int
    score: float


def build_bias(p_rec: RecommendationDistribution, vocab: Vocabulary,
               catalog: ItemCatalog, kg: KnowledgeGraph) -> VocabBias:
    """Lift the entity distribution onto the item-token block of the vocab."""
    vector = torch.zeros(len(vocab), dtype=p_rec.probabilities.dtype)
    start = vocab.item_block_start
    for token_id in range(start, len(vocab)):
        item_id = vocab.item_id_for_token(token_id)
        entity_name = catalog.item_to_entity.get(item_id)
        if entity_name is None:
            continue
        entity = kg.entity_index.get(entity_name)
        if entity is not None:
            vector[token_id] = p_rec.probabilities[entity]
    return VocabBias(vector=vector, item_start=start)


def _biased_log_probs(logits: torch.Tensor, bias: VocabBias | None,
                      cfg: DecodeConfig) -> torch.Tensor:
    """Per-row log-probs; rows whose top-k contains an item token get biased."""
    log_p = torch.log_softmax(logits, dim=-1)
    if bias is None:
        return log_p
    k = min(cfg.bias_trigger_k, logits.shape[-1])
    top = torch.topk(log_p, k, dim=-1).indices
    fired = (top >= bias.item_start).any(dim=-1)
    if not fired.any():
        return log_p
    if cfg.bias_mode is BiasMode.LOGIT:
        biased = torch.log_softmax(logits + bias.vector.to(logits.dtype), dim=-1)
    else:
        mixed = torch.softmax(logits, dim=-1) + bias.vector.to(logits.dtype)
        biased = torch.log(mixed / mixed.sum(dim=-1, keepdim=True))
    return torch.where(fired.unsqueeze(-1), biased, log_p)


def _finalize(generated: list[int], eos_id: int, logprob: float,
              length_penalty: float) -> Hypothesis:
    # length counts every generated step, the closing eos included
    length = max(len(generated), 1)
    tokens = generated[:-1] if generated and generated[-1] == eos_id else generated
    return Hypothesis(tokens=tokens, logprob=logprob, length=length,
                      score=logprob / (length ** length_penalty))


def _greedy(step_fn: StepFn, bos_id: int, eos_id: int, cfg: DecodeConfig,
            bias: VocabBias | None) -> list[Hypothesis]:
    prefix = [bos_id]
    logprob = 0.0
    for _ in range(cfg.max_new_tokens):
        log_p = _biased_log_probs(step_fn([prefix]), bias, cfg)[0]
        token = int(torch.argmax(log_p))
        logprob += float(log_p[token])
        prefix.append(token)
        if token == eos_id:
            break
    return [_finalize(prefix[1:], eos_id, logprob, cfg.length_penalty)]


@dataclass
class _Beam:
    prefix: list[int]
    logprob: float


def _diverse_beam(step_fn: StepFn, bos_id: int, eos_id: int, cfg: DecodeConfig,
                  bias: VocabBias | None, groups: int) -> list[Hypothesis]:
    group_size = cfg.beam_size // groups
    active: list[list[_Beam]] = [[_Beam([bos_id], 0.0)] for _ in range(groups)]
    finished: list[list[Hypothesis]] = [[] for _ in range(groups)]
    for _ in range(cfg.max_new_tokens):
        if not any(active):
            break
        step_counts: dict[int, int] = {}
        for g in range(groups):
            beams = active[g]
            if not beams:
                continue
            log_p = _biased_log_probs(step_fn([b.prefix for b in beams]), bias, cfg)
            adjusted = log_p
            if g > 0 and step_counts and cfg.diversity_strength > 0:
                penalty = torch.zeros_like(log_p[0])
                for token, count in step_counts.items():
                    penalty[token] = cfg.diversity_strength * count
                adjusted = log_p - penalty
            candidates = []
            for i, beam in enumerate(beams):
                take = min(group_size, adjusted.shape[-1])
                vals, idxs = torch.topk(beam.logprob + adjusted[i], take)
                for val, token in zip(vals.tolist(), idxs.tolist()):
                    candidates.append((val, i, token,
                                       beam.logprob + float(log_p[i, token])))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            survivors: list[_Beam] = []
            for _, i, token, true_lp in candidates:
                if len(survivors) == group_size:
                    break
                prefix = beams[i].prefix + [token]
                if token == eos_id:
                    if len(finished[g]) < group_size:
                        finished[g].append(_finalize(prefix[1:], eos_id, true_lp,
                                                     cfg.length_penalty))
                        step_counts[token] = step_counts.get(token, 0) + 1
                else:
                    survivors.append(_Beam(prefix, true_lp))
                    step_counts[token] = step_counts.get(token, 0) + 1
            active[g] = [] if len(finished[g]) >= group_size else survivors
    results: list[Hypothesis] = []
    for g in range(groups):
        results.extend(finished[g])
        for beam in active[g]:
            results.append(_finalize(beam.prefix[1:], eos_id, beam.logprob,
                                     cfg.length_penalty))
    results.sort(key=lambda h: (-h.score, h.length, h.tokens))
    return results


def decode(step_fn: StepFn, bos_id: int, eos_id: int, cfg: DecodeConfig,
           bias: VocabBias | None = None) -> list[Hypothesis]:
    """Run the configured decoding strategy; best hypothesis first."""
    if bias is not None and bias.is_zero():
        bias = None
    if cfg.strategy is DecodeStrategy.GREEDY:
        return _greedy(step_fn, bos_id, eos_id, cfg, bias)
    groups = cfg.groups if cfg.strategy is DecodeStrategy.DIVERSE_BEAM else 1
    return _diverse_beam(step_fn, bos_id, eos_id, cfg, bias, groups)
