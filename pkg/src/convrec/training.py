"""Joint training of the generation and recommendation objectives.

Optimizer updates accumulate several token-capped micro-batches. Parameters
split into two groups: the backbone trains at lr_pretrained while everything
added on top (graph encoder, heads, item-token embeddings) trains at lr_new.
The schedule warms up linearly then decays linearly to zero; the best
checkpoint is chosen by validation Recall@50.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from . import evaluation
from .backbone import BackboneConfig
from .corpus import ItemCatalog, TrainingExample, Vocabulary
from .kg import KnowledgeGraph
from .model import CrsModel, ModelConfig, Variant
from .preference import masked_item_logits
from .recommender import FusionConfig, build_item_index, top_k

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 5
    gamma: float = 1.0
    lr_new: float = 5e-3
    lr_pretrained: float = 5e-5
    warmup_updates: int = 1000
    max_tokens_per_batch: int = 4096
    update_frequency: int = 4
    seed: int = 0
    selection_k: int = 50
    stop_gradient_context: bool = False

    def __post_init__(self):
        if self.lr_new <= 0 or self.lr_pretrained <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.warmup_updates < 1 or self.max_tokens_per_batch < 1 \
                or self.update_frequency < 1:
            raise ValueError("schedule counts must be positive")


@dataclass
class LossBreakdown:
    gen_loss: float
    rec_loss: float
    total: float

    @classmethod
    def compose(cls, gen: float, rec: float, gamma: float) -> "LossBreakdown":
        return cls(gen_loss=gen, rec_loss=rec, total=gen + gamma * rec)

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.gen_loss, self.rec_loss,
                                              self.total))


def gen_loss(logits: torch.Tensor, targets: torch.Tensor,
             pad_id: int) -> torch.Tensor:
    """Negative log-likelihood summed over positions, averaged over batch."""
    if logits.shape[:2] != targets.shape:
        raise ValueError("logits and targets disagree on batch/length")
    if int(targets.max()) >= logits.shape[-1]:
        raise ValueError("target id outside the joined vocabulary")
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    mask = targets != pad_id
    return -(picked * mask).sum() / targets.shape[0]


def rec_loss(entity_logits: torch.Tensor | None,
             context_logits: torch.Tensor | None,
             target_entities: list[list[int]],
             item_mask: torch.Tensor) -> torch.Tensor:
    """-(log p_e(r) + log p_c(r)) summed over targets, averaged over batch.

    Variants that drop one distribution pass None for its logits. Target
    probabilities are clamped at 1e-12 before the log; clamps are counted
    as warnings.
    """
    heads = [h for h in (entity_logits, context_logits) if h is not None]
    if not heads:
        raise ValueError("rec_loss needs at least one of p_e / p_c")
    batch = len(target_entities)
    if any(h.shape[0] != batch for h in heads):
        raise ValueError("logits batch size does not match targets")
    total = torch.zeros((), dtype=heads[0].dtype)
    clamped = 0
    for logits in heads:
        probs = torch.softmax(masked_item_logits(logits, item_mask), dim=-1)
        for i, targets in enumerate(target_entities):
            for entity in targets:
                prob = probs[i, entity]
                if float(prob.detach()) < PROB_FLOOR:
                    clamped += 1
                total = total - torch.log(prob.clamp_min(PROB_FLOOR))
    if clamped:
        logger.warning("rec_loss clamped %d target probabilities at %g",
                       clamped, PROB_FLOOR)
    return total / batch


def lr_factor(step: int, warmup: int, total_updates: int) -> float:
    """Linear warmup to 1.0 at `warmup`, then linear decay to 0 at the end."""
    if step < warmup:
        return (step + 1) / warmup
    if total_updates <= warmup:
        return 1.0
    return max(0.0, (total_updates - step) / (total_updates - warmup))


def example_cost(example: TrainingExample) -> int:
    return len(example.context_tokens) + len(example.target_tokens) + 2


def pack_batches(examples: list[TrainingExample], max_tokens: int,
                 rng: random.Random | None = None) -> list[list[TrainingExample]]:
    """Greedy token-capped packing; an oversized example rides alone."""
    order = list(range(len(examples)))
    if rng is not None:
        rng.shuffle(order)
    batches: list[list[TrainingExample]] = []
    current: list[TrainingExample] = []
    budget = 0
    for idx in order:
        cost = example_cost(examples[idx])
        if current and budget + cost > max_tokens:
            batches.append(current)
            current, budget = [], 0
        current.append(examples[idx])
        budget += cost
    if current:
        batches.append(current)
    return batches


@dataclass
class Batch:
    src: torch.Tensor
    tgt_in: torch.Tensor
    tgt_out: torch.Tensor
    histories: list[list[int]]
    target_entities: list[list[int]]


def target_entity_ids(example: TrainingExample, catalog: ItemCatalog,
                      kg: KnowledgeGraph) -> list[int]:
    ids = []
    for item_id in example.target_items:
        entity_name = catalog.item_to_entity.get(item_id)
        entity = kg.entity_index.get(entity_name) if entity_name else None
        if entity is not None:
            ids.append(entity)
    return ids


def collate(examples: list[TrainingExample], vocab: Vocabulary,
            catalog: ItemCatalog, kg: KnowledgeGraph) -> Batch:
    pad, bos, eos = vocab.pad_id, vocab.bos_id, vocab.eos_id
    src_len = max(len(ex.context_tokens) for ex in examples)
    tgt_len = max(len(ex.target_tokens) for ex in examples) + 1
    src = torch.full((len(examples), src_len), pad, dtype=torch.long)
    tgt_in = torch.full((len(examples), tgt_len), pad, dtype=torch.long)
    tgt_out = torch.full((len(examples), tgt_len), pad, dtype=torch.long)
    for i, ex in enumerate(examples):
        src[i, :len(ex.context_tokens)] = torch.tensor(ex.context_tokens)
        inp = [bos] + ex.target_tokens
        out = ex.target_tokens + [eos]
        tgt_in[i, :len(inp)] = torch.tensor(inp)
        tgt_out[i, :len(out)] = torch.tensor(out)
    return Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out,
                 histories=[ex.history for ex in examples],
                 target_entities=[target_entity_ids(ex, catalog, kg)
                                  for ex in examples])


def batch_losses(model: CrsModel, batch: Batch, cfg: TrainConfig,
                 fusion: FusionConfig) -> tuple[torch.Tensor, LossBreakdown]:
    memory, mask = model.backbone.encode(batch.src)
    gen_logits = model.backbone.logits(
        model.backbone.decode_hidden(batch.tgt_in, memory, mask))
    entity_logits = None
    context_logits = None
    if model.cfg.variant.uses_entity:
        entity_logits = model.entity_logits(batch.histories,
                                            model.entity_table(), fusion.decay)
    if model.cfg.variant.uses_context:
        pooled_memory = memory.detach() if cfg.stop_gradient_context else memory
        context_logits = model.context_logits(pooled_memory, mask)
    g_loss = gen_loss(gen_logits, batch.tgt_out, model.cfg.backbone.pad_id)
    r_loss = rec_loss(entity_logits, context_logits, batch.target_entities,
                      model.item_mask)
    total = g_loss + cfg.gamma * r_loss
    breakdown = LossBreakdown.compose(float(g_loss.detach()),
                                      float(r_loss.detach()), cfg.gamma)
    return total, breakdown


def validation_recall(model: CrsModel, examples: list[TrainingExample],
                      catalog: ItemCatalog, kg: KnowledgeGraph,
                      fusion: FusionConfig, k: int = 50) -> float:
    """Recall@k over (turn, target item) instances; 0 when nothing to score."""
    item_index = build_item_index(kg, catalog)
    instances = []
    model.eval()
    with torch.no_grad():
        for ex in examples:
            golds = [item_id for item_id in ex.target_items
                     if item_id in catalog.item_to_entity]
            if not golds:
                continue
            src = torch.tensor([ex.context_tokens], dtype=torch.long)
            dist = model.recommend(src, ex.history, fusion)
            ranked = [r.item_id for r in top_k(dist, k, item_index)]
            for gold in golds:
                instances.append(evaluation.RecEvalInstance(
                    ranked=ranked, gold=gold,
                    history_length=len(ex.history)))
    model.train()
    if not instances:
        return 0.0
    return evaluation.recall_at_k(instances, k)


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    best_recall: float
    best_epoch: int
    final_step: int
    diverged: bool = False
    history: list[dict] = field(default_factory=list)


def train(model: CrsModel, train_examples: list[TrainingExample],
          valid_examples: list[TrainingExample], vocab: Vocabulary,
          catalog: ItemCatalog, kg: KnowledgeGraph, cfg: TrainConfig,
          fusion: FusionConfig, out_dir: str | Path,
          config_payload: dict | None = None,
          initial_step: int = 0) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.pt"
    log_path = out_dir / "metrics.jsonl"
    if not train_examples:
        raise ValueError("no training examples")

    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    groups = model.parameter_groups()
    optimizer = torch.optim.Adam(
        [{"params": groups["pretrained"], "lr": cfg.lr_pretrained},
         {"params": groups["new"], "lr": cfg.lr_new}],
        betas=(0.9, 0.999), weight_decay=0.0)
    micro_per_epoch = len(pack_batches(train_examples, cfg.max_tokens_per_batch))
    total_updates = max(1, math.ceil(micro_per_epoch / cfg.update_frequency)
                        * max(cfg.epochs, 1))
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: lr_factor(step, cfg.warmup_updates, total_updates))

    best_recall = -1.0
    best_epoch = -1
    step = initial_step
    diverged = False
    history: list[dict] = []
    save_checkpoint(checkpoint_path, model, vocab, kg, catalog,
                    config_payload or {}, step=step, epoch=0)

    def log_record(epoch: int, breakdown: LossBreakdown) -> None:
        record = {"epoch": epoch, "step": step,
                  "gen_loss": round(breakdown.gen_loss, 6),
                  "rec_loss": round(breakdown.rec_loss, 6),
                  "lr": scheduler.get_last_lr()[1]}
        history.append(record)
        with open(log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record) + "\n")

    log_path.write_text("", encoding="utf-8")
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        batches = pack_batches(train_examples, cfg.max_tokens_per_batch, rng)
        optimizer.zero_grad()
        pending = 0
        epoch_breakdown = None
        for b_idx, group in enumerate(batches):
            batch = collate(group, vocab, catalog, kg)
            total, breakdown = batch_losses(model, batch, cfg, fusion)
            if not breakdown.finite():
                logger.error("non-finite loss at epoch %d micro-batch %d; "
                             "aborting with last good checkpoint", epoch, b_idx)
                diverged = True
                break
            (total / cfg.update_frequency).backward()
            pending += 1
            epoch_breakdown = breakdown
            if pending == cfg.update_frequency or b_idx == len(batches) - 1:
                optimizer.step()
                scheduler.step()
                optimizer.zero_grad()
                step += 1
                pending = 0
                log_record(epoch, breakdown)
        if diverged:
            break
        recall = validation_recall(model, valid_examples, catalog, kg, fusion,
                                   k=cfg.selection_k)
        logger.info("epoch %d: recall@%d=%.2f gen=%.4f rec=%.4f", epoch,
                    cfg.selection_k, recall,
                    epoch_breakdown.gen_loss if epoch_breakdown else float("nan"),
                    epoch_breakdown.rec_loss if epoch_breakdown else float("nan"))
        if recall > best_recall:
            best_recall = recall
            best_epoch = epoch
            save_checkpoint(checkpoint_path, model, vocab, kg, catalog,
                            config_payload or {}, step=step, epoch=epoch)
    return TrainResult(checkpoint_path=checkpoint_path, log_path=log_path,
                       best_recall=max(best_recall, 0.0),
                       best_epoch=max(best_epoch, 0),
                       final_step=step, diverged=diverged, history=history)


# --- checkpoint serialization ---

def kg_payload(kg: KnowledgeGraph) -> dict:
    return {"entity_names": list(kg.entity_names),
            "relation_names": list(kg.relation_names),
            "triples": [list(t) for t in kg.triples],
            "item_mask": list(kg.item_mask)}


def kg_from_payload(payload: dict) -> KnowledgeGraph:
    return KnowledgeGraph(
        entity_names=list(payload["entity_names"]),
        relation_names=list(payload["relation_names"]),
        triples=[tuple(t) for t in payload["triples"]],
        item_mask=list(payload["item_mask"]))


def catalog_payload(catalog: ItemCatalog) -> dict:
    return {"items": dict(catalog.items),
            "item_to_entity": dict(catalog.item_to_entity)}


def save_checkpoint(path: str | Path, model: CrsModel, vocab: Vocabulary,
                    kg: KnowledgeGraph, catalog: ItemCatalog,
                    config_payload: dict, step: int, epoch: int) -> None:
    sections = model.section_state()
    sections["vocab"] = vocab.to_payload()
    sections["config"] = {
        "model": {
            "backbone": asdict(model.cfg.backbone),
            "entity_dim": model.cfg.entity_dim,
            "rgcn_layers": model.cfg.rgcn_layers,
            "num_bases": model.cfg.num_bases,
            "variant": model.cfg.variant.value,
            "context_hidden": model.cfg.context_hidden,
            "mask_context": model.cfg.mask_context,
            "seed": model.cfg.seed,
        },
        "run": config_payload,
    }
    payload = {"format_version": CHECKPOINT_VERSION,
               "sections": sections,
               "step": step, "epoch": epoch,
               "kg": kg_payload(kg),
               "catalog": catalog_payload(catalog)}
    torch.save(payload, path)


REQUIRED_SECTIONS = ("backbone", "graph_encoder", "preference",
                     "context_head", "vocab", "config")


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    missing = [s for s in REQUIRED_SECTIONS if s not in payload.get("sections", {})]
    if missing:
        raise ValueError(f"checkpoint missing sections {missing}")
    return payload


def restore(path: str | Path) -> tuple[CrsModel, Vocabulary, KnowledgeGraph,
                                       ItemCatalog, dict]:
    """Rebuild the full model stack from a checkpoint file."""
    payload = load_checkpoint(path)
    sections = payload["sections"]
    vocab = Vocabulary.from_payload(sections["vocab"])
    kg = kg_from_payload(payload["kg"])
    catalog = ItemCatalog(items=payload["catalog"]["items"],
                          item_to_entity=payload["catalog"]["item_to_entity"])
    model_cfg = sections["config"]["model"]
    cfg = ModelConfig(
        backbone=BackboneConfig(**model_cfg["backbone"]),
        entity_dim=model_cfg["entity_dim"],
        rgcn_layers=model_cfg["rgcn_layers"],
        num_bases=model_cfg["num_bases"],
        variant=Variant(model_cfg["variant"]),
        context_hidden=model_cfg["context_hidden"],
        mask_context=model_cfg["mask_context"],
        seed=model_cfg["seed"])
    model = CrsModel(cfg, kg)
    model.load_section_state(sections)
    model.eval()
    return model, vocab, kg, catalog, sections["config"]["run"]
