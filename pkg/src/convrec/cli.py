"""Command-line entry points: preprocess, train, eval, sweep, serve.

Every command loads defaults, then an optional --config key=value file,
then explicit flags, and writes the effective config next to its outputs.
Commands exit nonzero with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import torch

from . import corpus, evaluation, kg as kgmod, training
from .config import (RunConfig, config_from_payload, load_config,
                     resolve_path, write_config)
from .corpus import Split, Vocabulary, build_examples
from .generator import build_bias
from .kg import AliasIndex
from .model import CrsModel
from .recommender import build_item_index, top_k
from .training import restore

logger = logging.getLogger(__name__)

VARIANTS = ("contextm", "entitym-selfa", "entitym-timea", "full")
DATASETS = ("redial", "opendialkg", "canonical")


# --- shared plumbing ---

def _overrides(args: argparse.Namespace) -> dict:
    """Map parsed flags onto RunConfig fields, dropping unset ones."""
    mapping = {
        "variant": "variant", "dataset": "dataset", "seed": "seed",
        "mu": "mu", "gamma": "gamma", "beam": "beam", "groups": "groups",
        "length_penalty": "length_penalty", "lam": "decay",
        "exclude_seen": "exclude_seen", "epochs": "epochs",
        "data": "data_path", "out": "out_dir", "kg": "kg_path",
        "aliases": "alias_path", "min_count": "min_count",
        "strategy": "strategy", "max_new_tokens": "max_new_tokens",
    }
    out = {}
    for attr, field in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[field] = value
    return out


def _load_raw(cfg: RunConfig):
    path = resolve_path(cfg.data_path)
    if cfg.dataset == "redial":
        catalog = corpus.build_redial_catalog(path)
        conversations = corpus.load_redial(path)
    elif cfg.dataset == "opendialkg":
        conversations = corpus.load_opendialkg(path)
        catalog = corpus.derive_opendialkg_catalog(conversations)
    elif cfg.dataset == "canonical":
        conversations = corpus.load_canonical(Path(path) / "canonical.jsonl")
        catalog = corpus.load_catalog(Path(path) / "catalog.json")
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if not conversations:
        raise ValueError(f"empty dataset at {path}")
    return conversations, catalog


def _load_prepared(data_dir: Path):
    """Load a preprocess output directory."""
    for name in ("canonical.jsonl", "catalog.json", "kg.tsv"):
        if not (data_dir / name).exists():
            raise FileNotFoundError(
                f"{data_dir / name} missing; run `convrec preprocess` first")
    conversations = corpus.load_canonical(data_dir / "canonical.jsonl")
    catalog = corpus.load_catalog(data_dir / "catalog.json")
    graph = kgmod.load_triples(data_dir / "kg.tsv", catalog)
    return conversations, catalog, graph


def _split(conversations, split: Split):
    return [c for c in conversations if c.split is split]


def _build_model(cfg: RunConfig, vocab: Vocabulary, graph) -> CrsModel:
    torch.manual_seed(cfg.seed)
    model_cfg = cfg.model_config(
        base_vocab_size=vocab.base_size,
        item_vocab_size=len(vocab) - vocab.base_size,
        pad_id=vocab.pad_id, bos_id=vocab.bos_id, eos_id=vocab.eos_id)
    return CrsModel(model_cfg, graph)


def _seen_entities(example, catalog, graph) -> frozenset[int]:
    ids = []
    for item_id in example.context_items:
        name = catalog.item_to_entity.get(item_id)
        entity = graph.entity_index.get(name) if name else None
        if entity is not None:
            ids.append(entity)
    return frozenset(ids)


# --- commands ---

def cmd_preprocess(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if not cfg.data_path or not cfg.kg_path:
        raise ValueError("preprocess needs --data and --kg")
    conversations, catalog = _load_raw(cfg)
    graph = kgmod.load_triples(resolve_path(cfg.kg_path))
    linked = kgmod.link_catalog(catalog, graph.entity_names)
    items_masked = kgmod.apply_item_mask(graph, catalog)
    index = AliasIndex.from_kg(graph, catalog)
    if cfg.alias_path:
        extra = AliasIndex.from_tsv(resolve_path(cfg.alias_path))
        for surface, entities in extra.aliases.items():
            for entity in entities:
                index.add(surface, entity)
    mentions_added = kgmod.link_conversations(conversations, index)
    if cfg.dataset == "opendialkg":
        corpus.retag_item_mentions(conversations, catalog)
    out = resolve_path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_canonical(conversations, out / "canonical.jsonl")
    corpus.save_catalog(catalog, out / "catalog.json")
    with open(out / "kg.tsv", "w", encoding="utf-8") as handle:
        for head, rel, tail in graph.triples:
            handle.write(f"{graph.entity_names[head]}\t"
                         f"{graph.relation_names[rel]}\t"
                         f"{graph.entity_names[tail]}\n")
    index.save_tsv(out / "aliases.tsv")
    write_config(out / "config.txt", cfg)
    counts = {s.value: sum(1 for c in conversations if c.split is s)
              for s in Split}
    utterances = sum(len(c.utterances) for c in conversations)
    print(f"conversations={len(conversations)} utterances={utterances} "
          f"train={counts['train']} valid={counts['valid']} test={counts['test']} "
          f"entities={graph.num_entities} relations={graph.num_relations} "
          f"triples={len(graph.triples)} items={len(catalog.items)} "
          f"linked_items={linked} masked_items={items_masked} "
          f"linked_mentions={mentions_added} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    data_dir = resolve_path(cfg.data_path)
    conversations, catalog, graph = _load_prepared(data_dir)
    train_convs = _split(conversations, Split.TRAIN)
    vocab = Vocabulary.build(train_convs, catalog, cfg.min_count)
    examples = {
        split: build_examples(_split(conversations, split), catalog, vocab,
                              cfg.context_max_len, kg=graph,
                              include_text_entities=cfg.include_text_entities)
        for split in (Split.TRAIN, Split.VALID)}
    model = _build_model(cfg, vocab, graph)
    initial_step = 0
    if args.resume:
        payload = training.load_checkpoint(resolve_path(args.resume))
        model.load_section_state(payload["sections"])
        initial_step = payload["step"]
        logger.info("resumed from %s at step %d", args.resume, initial_step)
    out = resolve_path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", cfg)
    result = training.train(model, examples[Split.TRAIN], examples[Split.VALID],
                            vocab, catalog, graph, cfg.train_config(),
                            cfg.fusion(), out, config_payload=cfg.to_dict(),
                            initial_step=initial_step)
    status = "diverged" if result.diverged else "ok"
    print(f"{status} checkpoint={result.checkpoint_path} "
          f"best_recall@{cfg.selection_k}={result.best_recall:.2f} "
          f"best_epoch={result.best_epoch} steps={result.final_step}")
    return 1 if result.diverged else 0


def _eval_config(args) -> tuple:
    model, vocab, graph, catalog, stored = restore(resolve_path(args.checkpoint))
    base = config_from_payload(stored) if stored else RunConfig()
    cfg = load_config(args.config, _overrides(args), base=base)
    return model, vocab, graph, catalog, cfg


def _score_examples(model, examples, vocab, catalog, graph, cfg: RunConfig,
                    generate: bool):
    """Rank (and optionally generate) for every example."""
    fusion = cfg.fusion()
    decode_cfg = cfg.decode()
    item_index = build_item_index(graph, catalog)
    kmax = max(cfg.eval_ks() + [50])
    instances, pairs, rows = [], [], []
    model.eval()
    with torch.no_grad():
        for ex in examples:
            src = torch.tensor([ex.context_tokens], dtype=torch.long)
            dist = model.recommend(src, ex.history, fusion)
            exclude = (_seen_entities(ex, catalog, graph)
                       if cfg.exclude_seen else frozenset())
            ranked = top_k(dist, kmax, item_index, exclude)
            ranked_ids = [r.item_id for r in ranked]
            for gold in ex.target_items:
                if gold in catalog.item_to_entity:
                    instances.append(evaluation.RecEvalInstance(
                        ranked=ranked_ids, gold=gold,
                        history_length=len(ex.history)))
            if generate:
                bias = build_bias(dist, vocab, catalog, graph)
                hyp = model.generate(src, bias, decode_cfg)[0]
                text = corpus.decode_tokens(hyp.tokens, vocab, catalog)
                reference = corpus.decode_tokens(ex.target_tokens, vocab, catalog)
                pairs.append((text, reference))
                rows.append({
                    "context_id": f"{ex.conversation_id}:{ex.turn_index}",
                    "generated_text": text,
                    "ranked_items": [{"item_id": r.item_id, "name": r.name,
                                      "prob": r.prob} for r in ranked[:10]]})
    return instances, pairs, rows


def cmd_eval(args) -> int:
    model, vocab, graph, catalog, cfg = _eval_config(args)
    data_dir = resolve_path(cfg.data_path)
    conversations, catalog_disk, graph_disk = _load_prepared(data_dir)
    del catalog_disk, graph_disk  # checkpoint versions are authoritative
    split = Split(args.split)
    examples = build_examples(_split(conversations, split), catalog, vocab,
                              cfg.context_max_len, kg=graph,
                              include_text_entities=cfg.include_text_entities)
    if not examples:
        raise ValueError(f"no evaluable examples in split {split.value}")
    generate = not args.skip_generation
    instances, pairs, rows = _score_examples(model, examples, vocab, catalog,
                                             graph, cfg, generate)
    if not instances:
        raise ValueError("no recommendation instances (no linked target items)")
    metrics: dict = {"instances": len(instances), "examples": len(examples)}
    for k in cfg.eval_ks():
        metrics[f"recall_at_{k}"] = evaluation.recall_at_k(instances, k)
    for bucket, stats in evaluation.recall_by_history_length(instances, 50).items():
        metrics[f"recall_hist_{bucket}"] = stats.recall
        metrics[f"count_hist_{bucket}"] = stats.count
    out = resolve_path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if generate and pairs:
        hyps = [hyp for hyp, _ in pairs]
        for n in (2, 3, 4):
            metrics[f"dist_{n}"] = evaluation.dist_n(hyps, n)
        for n in (2, 4):
            metrics[f"bleu_{n}"] = evaluation.bleu_n(pairs, n)
        train_refs = [corpus.decode_tokens(ex.target_tokens, vocab, catalog)
                      for ex in build_examples(
                          _split(conversations, Split.TRAIN), catalog, vocab,
                          cfg.context_max_len, kg=graph,
                          include_text_entities=cfg.include_text_entities)]
        lm = evaluation.KneserNeyLM(order=4).fit(
            [t.lower().split() for t in train_refs])
        if any(h.split() for h in hyps):
            metrics["ppl"] = evaluation.ngram_ppl(hyps, lm)
        else:
            logger.warning("all generated responses empty; skipping ppl")
        evaluation.write_generations(out / "generations.jsonl", rows)
    evaluation.write_report(out / "report.txt", metrics)
    write_config(out / "config.txt", cfg)
    shown = {k: round(v, 2) for k, v in metrics.items()
             if k.startswith("recall_at_")}
    print(f"split={split.value} {shown} -> {out / 'report.txt'}")
    return 0


SWEEP_FIELDS = {"lambda": "decay", "mu": "mu", "length_penalty": "length_penalty"}


def cmd_sweep(args) -> int:
    model, vocab, graph, catalog, cfg = _eval_config(args)
    field = SWEEP_FIELDS[args.param]
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    if not grid:
        raise ValueError("empty sweep grid")
    data_dir = resolve_path(cfg.data_path)
    conversations, _, _ = _load_prepared(data_dir)
    split = Split(args.split)
    examples = build_examples(_split(conversations, split), catalog, vocab,
                              cfg.context_max_len, kg=graph,
                              include_text_entities=cfg.include_text_entities)
    generate = args.param == "length_penalty"
    out = resolve_path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{args.param}\trecall_at_1\trecall_at_50\tmean_len\tdist_2"]
    for value in grid:
        swept = dataclasses.replace(cfg, **{field: value})
        instances, pairs, _ = _score_examples(model, examples, vocab, catalog,
                                              graph, swept, generate)
        r1 = evaluation.recall_at_k(instances, 1)
        r50 = evaluation.recall_at_k(instances, 50)
        if generate and pairs:
            hyps = [hyp for hyp, _ in pairs]
            mean_len = sum(len(h.split()) for h in hyps) / len(hyps)
            d2 = evaluation.dist_n(hyps, 2)
            lines.append(f"{value}\t{r1:.4f}\t{r50:.4f}\t{mean_len:.2f}\t{d2:.2f}")
        else:
            lines.append(f"{value}\t{r1:.4f}\t{r50:.4f}\t\t")
    table = out / f"sweep_{args.param}.tsv"
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_config(out / "config.txt", cfg)
    print(f"rows={len(grid)} -> {table}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(checkpoint_path=resolve_path(args.checkpoint),
                    capacity=args.capacity,
                    sessions_path=resolve_path(args.sessions) if args.sessions
                    else None,
                    alias_path=resolve_path(args.aliases) if args.aliases
                    else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --- argument parsing ---

def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="key=value config file")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--dataset", choices=DATASETS)
    sp.add_argument("--lambda", dest="lam", type=float,
                    help="recency decay for time-aware attention")
    sp.add_argument("--mu", type=float, help="fusion weight on p_e")
    sp.add_argument("--gamma", type=float, help="recommendation loss weight")
    sp.add_argument("--beam", type=int, help="beam size")
    sp.add_argument("--groups", type=int, help="diverse beam groups")
    sp.add_argument("--length-penalty", dest="length_penalty", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--exclude-seen", dest="exclude_seen",
                    action="store_const", const=True, default=None,
                    help="drop items already mentioned in the context")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convrec",
        description="Knowledge-grounded conversational recommender")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="normalize a raw dataset + KG")
    _add_common(sp)
    sp.add_argument("--data", help="raw dataset file/dir")
    sp.add_argument("--kg", help="triple TSV file")
    sp.add_argument("--aliases", help="extra alias TSV")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--min-count", dest="min_count", type=int)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train a model on a preprocessed dir")
    _add_common(sp)
    sp.add_argument("--data", help="preprocess output directory")
    sp.add_argument("--out", help="run directory")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="preprocess output directory")
    sp.add_argument("--split", default="test",
                    choices=[s.value for s in Split])
    sp.add_argument("--out", help="report directory")
    sp.add_argument("--skip-generation", action="store_true",
                    help="recommendation metrics only")
    sp.add_argument("--strategy", choices=["greedy", "beam", "diverse_beam"])
    sp.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="grid-evaluate one hyperparameter")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data")
    sp.add_argument("--param", required=True, choices=sorted(SWEEP_FIELDS))
    sp.add_argument("--grid", required=True, help="comma-separated values")
    sp.add_argument("--split", default="test",
                    choices=[s.value for s in Split])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("serve", help="run the HTTP session service")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8080)
    sp.add_argument("--capacity", type=int, default=256)
    sp.add_argument("--sessions", help="append-only session log path")
    sp.add_argument("--aliases", help="extra alias TSV for live linking")
    sp.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
