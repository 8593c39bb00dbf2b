import json
import logging
import math
import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec import training
from convrec.backbone import BackboneConfig
from convrec.corpus import TrainingExample, build_examples
from convrec.model import CrsModel, ModelConfig, Variant
from convrec.recommender import FusionConfig
from convrec.training import (LossBreakdown, TrainConfig, collate,
                              example_cost, gen_loss, kg_from_payload,
                              kg_payload, load_checkpoint, lr_factor,
                              pack_batches, rec_loss, restore,
                              save_checkpoint, target_entity_ids, train)
from helpers import tiny_world


def gen_loss_reference(logits, targets, pad):
    """Literal per-position NLL loop, summed then averaged over the batch."""
    total = 0.0
    for i in range(targets.shape[0]):
        for t in range(targets.shape[1]):
            token = int(targets[i, t])
            if token == pad:
                continue
            row = torch.log_softmax(logits[i, t], dim=0)
            total -= float(row[token])
    return total / targets.shape[0]


def make_model(vocab, kg, variant=Variant.FULL, seed=0):
    torch.manual_seed(seed)
    backbone = BackboneConfig(
        base_vocab_size=vocab.item_block_start,
        item_vocab_size=len(vocab) - vocab.item_block_start,
        pad_id=vocab.pad_id, bos_id=vocab.bos_id, eos_id=vocab.eos_id,
        d_model=16, encoder_layers=1, decoder_layers=1, heads=2,
        ffn_dim=32, max_positions=64, dropout=0.0)
    cfg = ModelConfig(backbone=backbone, entity_dim=8, rgcn_layers=1,
                      variant=variant, seed=seed)
    return CrsModel(cfg, kg)


def world_examples():
    kg, catalog, vocab, convs = tiny_world()
    examples = build_examples(convs, catalog, vocab, max_len=64, kg=kg)
    return kg, catalog, vocab, examples


def quick_cfg(**kw):
    base = dict(epochs=2, gamma=1.0, lr_new=5e-3, lr_pretrained=5e-3,
                warmup_updates=2, max_tokens_per_batch=4096,
                update_frequency=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# --- generation loss ---

@settings(max_examples=60)
@given(st.integers(0, 10 ** 6))
def test_gen_loss_matches_reference_loop(seed):
    g = torch.Generator().manual_seed(seed)
    batch = int(torch.randint(1, 4, (1,), generator=g))
    length = int(torch.randint(1, 5, (1,), generator=g))
    vocab_size = int(torch.randint(4, 9, (1,), generator=g))
    logits = torch.randn(batch, length, vocab_size, generator=g,
                         dtype=torch.float64)
    targets = torch.randint(0, vocab_size, (batch, length), generator=g)
    got = float(gen_loss(logits, targets, pad_id=0))
    assert got == pytest.approx(gen_loss_reference(logits, targets, 0),
                                rel=1e-9, abs=1e-12)


def test_gen_loss_uniform_logits():
    logits = torch.zeros(2, 3, 7, dtype=torch.float64)
    targets = torch.ones(2, 3, dtype=torch.long)
    assert float(gen_loss(logits, targets, pad_id=0)) == \
        pytest.approx(3 * math.log(7), abs=1e-9)


def test_gen_loss_confident_model_near_zero():
    targets = torch.tensor([[1, 2, 3], [4, 5, 6]])
    logits = torch.zeros(2, 3, 8, dtype=torch.float64)
    logits.scatter_(-1, targets.unsqueeze(-1), 50.0)
    assert float(gen_loss(logits, targets, pad_id=0)) < 1e-8


def test_gen_loss_ignores_pad_positions():
    g = torch.Generator().manual_seed(4)
    logits = torch.randn(1, 4, 6, generator=g, dtype=torch.float64)
    padded = torch.tensor([[2, 3, 0, 0]])
    trimmed = float(gen_loss(logits[:, :2], padded[:, :2], pad_id=0))
    assert float(gen_loss(logits, padded, pad_id=0)) == \
        pytest.approx(trimmed, rel=1e-12)


def test_gen_loss_validation():
    logits = torch.zeros(2, 3, 5)
    with pytest.raises(ValueError):
        gen_loss(logits, torch.zeros(2, 2, dtype=torch.long), pad_id=0)
    with pytest.raises(ValueError):
        gen_loss(logits, torch.full((2, 3), 5, dtype=torch.long), pad_id=0)


# --- recommendation loss ---

MASK = torch.tensor([True, True, True, False, False])


def test_rec_loss_uniform_hand_value():
    # uniform over 3 supported entities, two heads, 3 targets, batch 2
    zeros = torch.zeros(2, 5)
    targets = [[0], [1, 2]]
    got = float(rec_loss(zeros, zeros.clone(), targets, MASK))
    assert got == pytest.approx(3 * math.log(3), rel=1e-6)


def test_rec_loss_single_head():
    zeros = torch.zeros(2, 5)
    targets = [[0], [1, 2]]
    got = float(rec_loss(zeros, None, targets, MASK))
    assert got == pytest.approx(1.5 * math.log(3), rel=1e-6)
    same = float(rec_loss(None, zeros, targets, MASK))
    assert same == pytest.approx(got, rel=1e-6)


def test_rec_loss_empty_targets_is_zero():
    zeros = torch.zeros(2, 5)
    assert float(rec_loss(zeros, zeros, [[], []], MASK)) == 0.0


def test_rec_loss_clamps_vanishing_probability(caplog):
    logits = torch.tensor([[60.0, 0.0, 0.0, 0.0, 0.0]])
    with caplog.at_level(logging.WARNING, logger="convrec.training"):
        got = float(rec_loss(logits, None, [[1]], MASK))
    assert got == pytest.approx(-math.log(1e-12), rel=1e-4)
    assert "clamped" in caplog.text


def test_rec_loss_validation():
    with pytest.raises(ValueError):
        rec_loss(None, None, [[0]], MASK)
    with pytest.raises(ValueError):
        rec_loss(torch.zeros(2, 5), None, [[0]], MASK)


def test_loss_breakdown_compose_and_finite():
    breakdown = LossBreakdown.compose(2.0, 3.0, gamma=0.5)
    assert breakdown.total == pytest.approx(3.5)
    assert breakdown.finite()
    assert not LossBreakdown(float("nan"), 0.0, float("nan")).finite()


# --- schedule ---

def test_lr_factor_hand_values():
    assert lr_factor(0, warmup=4, total_updates=10) == pytest.approx(0.25)
    assert lr_factor(3, 4, 10) == pytest.approx(1.0)
    assert lr_factor(4, 4, 10) == pytest.approx(1.0)
    assert lr_factor(7, 4, 10) == pytest.approx(0.5)
    assert lr_factor(9, 4, 10) == pytest.approx(1 / 6)
    assert lr_factor(10, 4, 10) == 0.0
    assert lr_factor(15, 4, 10) == 0.0


def test_lr_factor_short_runs_never_decay():
    assert lr_factor(10, warmup=20, total_updates=10) == pytest.approx(11 / 20)
    assert lr_factor(25, warmup=20, total_updates=10) == 1.0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_new=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(update_frequency=0)


# --- batching ---

def sized_example(n_ctx, n_tgt):
    return TrainingExample(context_tokens=[1] * n_ctx,
                           target_tokens=[1] * n_tgt,
                           target_items=[], history=[])


@settings(max_examples=80)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)),
                min_size=1, max_size=30),
       st.integers(8, 40))
def test_pack_batches_covers_in_order_under_cap(sizes, cap):
    examples = [sized_example(a, b) for a, b in sizes]
    batches = pack_batches(examples, cap)
    flat = [ex for group in batches for ex in group]
    assert flat == examples
    for group in batches:
        assert len(group) == 1 or \
            sum(example_cost(ex) for ex in group) <= cap


def test_pack_batches_oversized_example_rides_alone():
    examples = [sized_example(2, 2), sized_example(50, 50), sized_example(2, 2)]
    batches = pack_batches(examples, max_tokens=10)
    assert [len(b) for b in batches] == [1, 1, 1]


def test_pack_batches_seeded_shuffle():
    examples = [sized_example(n, 0) for n in range(1, 13)]
    first = pack_batches(examples, 30, random.Random(5))
    second = pack_batches(examples, 30, random.Random(5))
    assert first == second
    shuffled = [len(ex.context_tokens) for b in first for ex in b]
    assert sorted(shuffled) == list(range(1, 13))
    unshuffled = [len(ex.context_tokens)
                  for b in pack_batches(examples, 30) for ex in b]
    assert shuffled != unshuffled


def test_collate_layout():
    kg, catalog, vocab, _ = world_examples()
    ex1 = TrainingExample(context_tokens=[7, 8, 9], target_tokens=[5],
                          target_items=["101"], history=[3])
    ex2 = TrainingExample(context_tokens=[4], target_tokens=[5, 6, 7],
                          target_items=["102", "999"], history=[])
    batch = collate([ex1, ex2], vocab, catalog, kg)
    pad, bos, eos = vocab.pad_id, vocab.bos_id, vocab.eos_id
    assert batch.src.tolist() == [[7, 8, 9], [4, pad, pad]]
    assert batch.tgt_in.tolist() == [[bos, 5, pad, pad], [bos, 5, 6, 7]]
    assert batch.tgt_out.tolist() == [[5, eos, pad, pad], [5, 6, 7, eos]]
    assert batch.histories == [[3], []]
    assert batch.target_entities == [[0], [1]]


def test_target_entity_ids_skips_unlinked():
    kg, catalog, vocab, _ = world_examples()
    ex = TrainingExample(context_tokens=[1], target_tokens=[1],
                         target_items=["103", "nope"], history=[])
    assert target_entity_ids(ex, catalog, kg) == [2]


@pytest.mark.parametrize("variant", list(Variant))
def test_batch_losses_compose(variant):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg, variant=variant)
    batch = collate(examples, vocab, catalog, kg)
    cfg = quick_cfg(gamma=0.7)
    total, breakdown = training.batch_losses(model, batch, cfg,
                                             FusionConfig())
    assert breakdown.finite()
    assert breakdown.rec_loss > 0.0
    assert float(total.detach()) == pytest.approx(
        breakdown.gen_loss + 0.7 * breakdown.rec_loss, rel=1e-5)
    assert breakdown.total == pytest.approx(float(total.detach()), rel=1e-5)


# --- the training loop ---

def test_train_smoke(tmp_path):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg)
    cfg = quick_cfg(epochs=10)
    result = train(model, examples, examples, vocab, catalog, kg, cfg,
                   FusionConfig(), tmp_path, config_payload={"tag": "t"})
    assert result.checkpoint_path.exists()
    assert not result.diverged
    assert result.final_step == 10          # 1 packed batch per epoch
    assert result.best_recall == 100.0      # 3-item catalog inside top 50
    assert result.best_epoch == 1
    records = [json.loads(line)
               for line in result.log_path.read_text().splitlines()]
    assert len(records) == 10
    assert set(records[0]) == {"epoch", "step", "gen_loss", "rec_loss", "lr"}
    assert [r["step"] for r in records] == list(range(1, 11))
    assert records[-1]["gen_loss"] < records[0]["gen_loss"]
    assert result.history == records


def test_train_epochs_zero_saves_init_only(tmp_path):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    result = train(model, examples, [], vocab, catalog, kg,
                   quick_cfg(epochs=0), FusionConfig(), tmp_path)
    assert result.final_step == 0
    assert result.history == []
    restored, _, _, _, _ = restore(result.checkpoint_path)
    after = restored.state_dict()
    assert set(after) == set(before)
    for key, tensor in before.items():
        assert torch.equal(after[key], tensor), key


def test_train_requires_examples(tmp_path):
    kg, catalog, vocab, _ = world_examples()
    model = make_model(vocab, kg)
    with pytest.raises(ValueError):
        train(model, [], [], vocab, catalog, kg, quick_cfg(),
              FusionConfig(), tmp_path)


def test_train_is_seed_reproducible(tmp_path):
    kg, catalog, vocab, examples = world_examples()
    states = []
    histories = []
    for run in ("a", "b"):
        model = make_model(vocab, kg, seed=11)
        result = train(model, examples, examples, vocab, catalog, kg,
                       quick_cfg(epochs=3, seed=11), FusionConfig(),
                       tmp_path / run)
        states.append({k: v.clone() for k, v in model.state_dict().items()})
        histories.append(result.history)
    assert histories[0] == histories[1]
    for key in states[0]:
        assert torch.equal(states[0][key], states[1][key]), key


def test_train_divergence_keeps_last_good_checkpoint(tmp_path, monkeypatch):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg)
    bad = float("nan")

    def exploded(model_, batch_, cfg_, fusion_):
        return torch.tensor(bad), LossBreakdown(bad, bad, bad)

    monkeypatch.setattr(training, "batch_losses", exploded)
    result = train(model, examples, examples, vocab, catalog, kg,
                   quick_cfg(epochs=4), FusionConfig(), tmp_path)
    assert result.diverged
    assert result.final_step == 0
    assert result.history == []
    restored, _, _, _, _ = restore(result.checkpoint_path)
    for key, tensor in model.state_dict().items():
        assert torch.equal(restored.state_dict()[key], tensor), key


def test_train_initial_step_offsets_schedule_log(tmp_path):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg)
    result = train(model, examples, [], vocab, catalog, kg,
                   quick_cfg(epochs=1), FusionConfig(), tmp_path,
                   initial_step=10)
    assert result.final_step == 11
    assert result.history[0]["step"] == 11


# --- checkpoints ---

def test_kg_payload_round_trip():
    kg, _, _, _ = world_examples()
    clone = kg_from_payload(kg_payload(kg))
    assert clone.entity_names == kg.entity_names
    assert clone.relation_names == kg.relation_names
    assert clone.triples == kg.triples
    assert clone.item_mask == kg.item_mask
    assert clone.incoming == kg.incoming


def test_checkpoint_round_trip(tmp_path):
    kg, catalog, vocab, examples = world_examples()
    model = make_model(vocab, kg, seed=5)
    path = tmp_path / "checkpoint.pt"
    run_payload = {"dataset": "redial", "mu": 0.25}
    save_checkpoint(path, model, vocab, kg, catalog, run_payload,
                    step=7, epoch=3)
    payload = load_checkpoint(path)
    assert payload["step"] == 7 and payload["epoch"] == 3
    restored, vocab2, kg2, catalog2, run2 = restore(path)
    assert run2 == run_payload
    assert vocab2.base_tokens == vocab.base_tokens
    assert vocab2.item_tokens == vocab.item_tokens
    assert kg2.entity_names == kg.entity_names
    assert catalog2.items == catalog.items
    assert not restored.training
    for key, tensor in model.state_dict().items():
        assert torch.equal(restored.state_dict()[key], tensor), key
    model.eval()
    src = torch.tensor([examples[1].context_tokens], dtype=torch.long)
    with torch.no_grad():
        mine = model.recommend(src, examples[1].history, FusionConfig())
        theirs = restored.recommend(src, examples[1].history, FusionConfig())
    assert torch.equal(mine.probabilities, theirs.probabilities)


def test_load_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.pt"
    torch.save({"format_version": 99, "sections": {}}, path)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_load_checkpoint_reports_missing_sections(tmp_path):
    kg, catalog, vocab, _ = world_examples()
    model = make_model(vocab, kg)
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(path, model, vocab, kg, catalog, {}, step=0, epoch=0)
    payload = torch.load(path, weights_only=False)
    del payload["sections"]["graph_encoder"]
    torch.save(payload, path)
    with pytest.raises(ValueError, match="graph_encoder"):
        load_checkpoint(path)
