"""Corpus loading and normalization for conversational recommendation datasets.

Supports the ReDial release format (line-delimited JSON with "@<id>" item
mentions), the OpenDialKG release format (CSV with JSON-encoded message lists
and KG-walk annotations), and a canonical line-delimited internal format
documented in docs/data_formats.md.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
EOT_TOKEN = "<eot>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, EOT_TOKEN)

REDIAL_MENTION_RE = re.compile(r"@(\d+)")


class Speaker(str, Enum):
    SEEKER = "seeker"
    RECOMMENDER = "recommender"


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class Mention(NamedTuple):
    """A surface mention: `ref` is an item id or a canonical entity name."""

    ref: str
    start: int
    end: int


@dataclass
class Utterance:
    speaker: Speaker
    text: str
    item_mentions: list[Mention] = field(default_factory=list)
    entity_mentions: list[Mention] = field(default_factory=list)
    tokens: list[int] | None = None

    def validate_spans(self) -> None:
        for mention in list(self.item_mentions) + list(self.entity_mentions):
            if not (0 <= mention.start < mention.end <= len(self.text)):
                raise ValueError(f"mention span {mention} outside text bounds")
        spans = sorted((m.start, m.end) for m in self.item_mentions + self.entity_mentions)
        for (s1, e1), (s2, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise ValueError(f"overlapping mention spans at {s1}:{e1} and {s2}")


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance]
    split: Split = Split.TRAIN


@dataclass
class ItemCatalog:
    """Recommendable items: display names plus an optional link into the KG."""

    items: dict[str, str] = field(default_factory=dict)
    item_to_entity: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        linked = list(self.item_to_entity.values())
        if len(linked) != len(set(linked)):
            raise ValueError("item_to_entity must be injective")

    def link(self, item_id: str, entity_name: str) -> None:
        if entity_name in self.item_to_entity.values():
            raise ValueError(f"entity {entity_name!r} already linked to another item")
        self.item_to_entity[item_id] = entity_name


@dataclass
class Vocabulary:
    """Base word vocabulary extended with one token per catalog item.

    Item token ids form a contiguous block starting at ``len(base_tokens)`` so
    the generator's vocabulary bias can be expressed as [0; item-block].
    """

    base_tokens: dict[str, int]
    item_tokens: dict[str, int]

    def __post_init__(self):
        base = len(self.base_tokens)
        ids = sorted(self.item_tokens.values())
        if ids != list(range(base, base + len(ids))):
            raise ValueError("item token ids must be contiguous after the base block")
        if EOT_TOKEN not in self.base_tokens:
            raise ValueError("base vocabulary must contain the end-of-turn token")
        self._base_by_id = {i: t for t, i in self.base_tokens.items()}
        self._item_by_id = {i: t for t, i in self.item_tokens.items()}

    @property
    def base_size(self) -> int:
        return len(self.base_tokens)

    @property
    def item_block_start(self) -> int:
        return len(self.base_tokens)

    def __len__(self) -> int:
        return len(self.base_tokens) + len(self.item_tokens)

    @property
    def pad_id(self) -> int:
        return self.base_tokens[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.base_tokens[UNK_TOKEN]

    @property
    def bos_id(self) -> int:
        return self.base_tokens[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.base_tokens[EOS_TOKEN]

    @property
    def eot_id(self) -> int:
        return self.base_tokens[EOT_TOKEN]

    def is_item_token(self, token_id: int) -> bool:
        return token_id >= self.item_block_start

    def item_id_for_token(self, token_id: int) -> str:
        return self._item_by_id[token_id]

    @classmethod
    def build(cls, conversations: Iterable[Conversation], catalog: ItemCatalog,
              min_count: int = 1) -> "Vocabulary":
        """Build the base vocabulary from conversation text, then append items.

        Annotated item spans are excluded from the word counts so item names
        never leak sub-tokenized fragments into the base vocabulary.
        """
        counts: dict[str, int] = {}
        for conv in conversations:
            for utt in conv.utterances:
                for word in _words_outside_mentions(utt.text, utt.item_mentions):
                    counts[word] = counts.get(word, 0) + 1
        base = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
        for word in sorted(counts):
            if counts[word] >= min_count and word not in base:
                base[word] = len(base)
        items = {item_id: len(base) + i for i, item_id in enumerate(sorted(catalog.items))}
        return cls(base, items)

    def encode_word(self, word: str) -> int:
        return self.base_tokens.get(word, self.unk_id)

    def to_payload(self) -> dict:
        base_order = [self._base_by_id[i] for i in range(len(self.base_tokens))]
        item_order = [self._item_by_id[i] for i in sorted(self.item_tokens.values())]
        return {"base": base_order, "items": item_order}

    @classmethod
    def from_payload(cls, payload: dict) -> "Vocabulary":
        base = {tok: i for i, tok in enumerate(payload["base"])}
        items = {item: len(base) + i for i, item in enumerate(payload["items"])}
        return cls(base, items)


@dataclass
class TrainingExample:
    context_tokens: list[int]
    target_tokens: list[int]
    target_items: list[str]
    history: list[int]
    conversation_id: str = ""
    turn_index: int = -1
    context_items: list[str] = field(default_factory=list)


def tokenize_text(text: str) -> list[str]:
    """Whitespace tokenization; punctuation stays attached to its word."""
    return text.split()


def _words_outside_mentions(text: str, mentions: list[Mention]) -> list[str]:
    words = []
    cursor = 0
    for mention in sorted(mentions, key=lambda m: m.start):
        words.extend(tokenize_text(text[cursor:mention.start]))
        cursor = mention.end
    words.extend(tokenize_text(text[cursor:]))
    return words


def encode_utterance(utt: Utterance, vocab: Vocabulary) -> list[int]:
    """Token ids for one utterance; annotated item spans become single tokens."""
    ids: list[int] = []
    cursor = 0
    for mention in sorted(utt.item_mentions, key=lambda m: m.start):
        for word in tokenize_text(utt.text[cursor:mention.start]):
            ids.append(vocab.encode_word(word))
        if mention.ref in vocab.item_tokens:
            ids.append(vocab.item_tokens[mention.ref])
        else:
            for word in tokenize_text(utt.text[mention.start:mention.end]):
                ids.append(vocab.encode_word(word))
        cursor = mention.end
    for word in tokenize_text(utt.text[cursor:]):
        ids.append(vocab.encode_word(word))
    return ids


def decode_tokens(ids: Iterable[int], vocab: Vocabulary,
                  catalog: ItemCatalog | None = None, machine: bool = True) -> str:
    """Render token ids back to text.

    Item tokens become "@{item_id}" in machine mode, or the catalog display
    name otherwise. Special tokens other than the turn separator are dropped.
    """
    parts = []
    skip = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    for token_id in ids:
        if token_id in skip:
            continue
        if vocab.is_item_token(token_id):
            item_id = vocab.item_id_for_token(token_id)
            if machine or catalog is None or item_id not in catalog.items:
                parts.append(f"@{item_id}")
            else:
                parts.append(catalog.items[item_id])
        else:
            parts.append(vocab._base_by_id[token_id])
    return " ".join(parts)


def serialize_context(utterances: list[Utterance], vocab: Vocabulary) -> list[list[int]]:
    """Per-utterance token groups, each closed by the end-of-turn separator."""
    groups = []
    for utt in utterances:
        tokens = utt.tokens if utt.tokens is not None else encode_utterance(utt, vocab)
        groups.append(tokens + [vocab.eot_id])
    return groups


def truncate_context(groups: list[list[int]], max_len: int) -> list[int]:
    """Flatten utterance groups, dropping whole oldest utterances to fit.

    If the most recent utterance alone exceeds the budget, its oldest tokens
    are dropped so the length bound always holds.
    """
    kept = list(groups)
    total = sum(len(g) for g in kept)
    while total > max_len and len(kept) > 1:
        total -= len(kept.pop(0))
    flat = [tok for group in kept for tok in group]
    if len(flat) > max_len:
        flat = flat[-max_len:]
    return flat


def build_examples(conversations: Iterable[Conversation], catalog: ItemCatalog,
                   vocab: Vocabulary, max_len: int, kg=None,
                   include_text_entities: bool = True) -> list[TrainingExample]:
    """One training example per recommender turn with a non-empty context.

    The context is the concatenation of all prior utterances in order, each
    followed by the turn separator, truncated from the oldest side. `kg` (a
    ``convrec.kg.KnowledgeGraph``) resolves mention history into entity ids;
    without it the preference history is left empty.
    """
    examples = []
    for conv in conversations:
        groups = serialize_context(conv.utterances, vocab)
        for idx, utt in enumerate(conv.utterances):
            if utt.speaker is not Speaker.RECOMMENDER or idx == 0:
                continue
            target_tokens = groups[idx][:-1]
            if not target_tokens:
                continue
            context_tokens = truncate_context(groups[:idx], max_len)
            history = mention_history(conv.utterances[:idx], catalog, kg,
                                      include_text_entities=include_text_entities)
            context_items = [m.ref for u in conv.utterances[:idx]
                             for m in sorted(u.item_mentions, key=lambda m: m.start)]
            examples.append(TrainingExample(
                context_tokens=context_tokens,
                target_tokens=target_tokens,
                target_items=[m.ref for m in utt.item_mentions if m.ref in catalog.items],
                history=history,
                conversation_id=conv.id,
                turn_index=idx,
                context_items=context_items,
            ))
    return examples


def mention_history(utterances: list[Utterance], catalog: ItemCatalog, kg,
                    include_text_entities: bool = True,
                    dedup: bool = False) -> list[int]:
    """Entity-id history in appearance order; items without a KG link are ignored."""
    if kg is None:
        return []
    history: list[int] = []
    for utt in utterances:
        mentions = [(m, True) for m in utt.item_mentions]
        if include_text_entities:
            mentions += [(m, False) for m in utt.entity_mentions]
        mentions.sort(key=lambda pair: pair[0].start)
        for mention, is_item in mentions:
            name = catalog.item_to_entity.get(mention.ref) if is_item else mention.ref
            if name is None:
                continue
            entity_id = kg.entity_index.get(name)
            if entity_id is None:
                continue
            if dedup and entity_id in history:
                continue
            history.append(entity_id)
    return history


# ---------------------------------------------------------------------------
# ReDial release format
# ---------------------------------------------------------------------------

def load_redial(path: str | Path) -> list[Conversation]:
    """Parse ReDial line-delimited release records and assign 80/10/10 splits.

    Malformed records are skipped with a counted warning; "@id" patterns that
    do not resolve against the record's mention map stay as plain text.
    """
    conversations: list[Conversation] = []
    skipped = 0
    for line_no, line in enumerate(_iter_lines(path)):
        try:
            record = json.loads(line)
            conv = _parse_redial_record(record, fallback_id=str(line_no))
        except (ValueError, KeyError, TypeError) as exc:
            skipped += 1
            logger.warning("skipping malformed ReDial record %d: %s", line_no, exc)
            continue
        if conv is not None:
            conversations.append(conv)
    if skipped:
        logger.warning("skipped %d malformed ReDial records", skipped)
    assign_splits(conversations, train=0.8, valid=0.1)
    return conversations


def _parse_redial_record(record: dict, fallback_id: str) -> Conversation | None:
    messages = record["messages"]
    if not isinstance(messages, list) or len(messages) < 2:
        raise ValueError("record needs at least 2 messages")
    conv_id = str(record.get("conversationId", fallback_id))
    initiator = record.get("initiatorWorkerId")
    mention_map = record.get("movieMentions") or {}
    if not isinstance(mention_map, dict):
        mention_map = {}
    utterances = []
    for message in messages:
        text = str(message["text"])
        sender = message.get("senderWorkerId")
        speaker = Speaker.SEEKER if sender == initiator else Speaker.RECOMMENDER
        item_mentions = []
        for match in REDIAL_MENTION_RE.finditer(text):
            movie_id = match.group(1)
            if movie_id in mention_map:
                item_mentions.append(Mention(movie_id, match.start(), match.end()))
        utterances.append(Utterance(speaker=speaker, text=text, item_mentions=item_mentions))
    return Conversation(id=conv_id, utterances=utterances)


def build_redial_catalog(path: str | Path) -> ItemCatalog:
    """Collect the item catalog from every record's movie mention map."""
    items: dict[str, str] = {}
    for line in _iter_lines(path):
        try:
            record = json.loads(line)
        except ValueError:
            continue
        mention_map = record.get("movieMentions") or {}
        if not isinstance(mention_map, dict):
            continue
        for movie_id, name in mention_map.items():
            if name:
                items.setdefault(str(movie_id), str(name))
    return ItemCatalog(items=items)


# ---------------------------------------------------------------------------
# OpenDialKG release format
# ---------------------------------------------------------------------------

def load_opendialkg(path: str | Path) -> list[Conversation]:
    """Parse the OpenDialKG CSV release.

    KG-walk annotations ("metadata.path") attach entity mentions to the next
    chat message in which the entity name occurs. The published 75/15/15 split
    ratio overshoots 100%, so valid and test take 15% each and train keeps the
    remainder, matching the dataset's original 70/15/15 split.
    """
    conversations: list[Conversation] = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for row_no, row in enumerate(reader):
            try:
                conv = _parse_opendialkg_row(row, row_no)
            except (ValueError, KeyError, TypeError) as exc:
                skipped += 1
                logger.warning("skipping malformed OpenDialKG row %d: %s", row_no, exc)
                continue
            if conv is not None:
                conversations.append(conv)
    if skipped:
        logger.warning("skipped %d malformed OpenDialKG rows", skipped)
    assign_splits(conversations, train=0.7, valid=0.15)
    return conversations


def _parse_opendialkg_row(row: dict, row_no: int) -> Conversation | None:
    messages = json.loads(row["Messages"])
    if not isinstance(messages, list):
        raise ValueError("Messages must be a JSON list")
    first_chat_sender = next(
        (m.get("sender") for m in messages if m.get("type") == "chat"), None)
    utterances = []
    pending: list[str] = []
    for message in messages:
        pending.extend(_path_entities(message))
        if message.get("type") != "chat" or "message" not in message:
            continue
        text = str(message["message"])
        speaker = (Speaker.SEEKER if message.get("sender") == first_chat_sender
                   else Speaker.RECOMMENDER)
        entity_mentions = [Mention(name, s, e)
                           for name, s, e in find_name_spans(text, pending)]
        if entity_mentions:
            pending = []
        utterances.append(Utterance(speaker=speaker, text=text,
                                    entity_mentions=entity_mentions))
    if len(utterances) < 2:
        raise ValueError("conversation needs at least 2 chat messages")
    return Conversation(id=str(row_no), utterances=utterances)


def _path_entities(message: dict) -> list[str]:
    metadata = message.get("metadata")
    if not isinstance(metadata, dict):
        return []
    path = metadata.get("path")
    if not isinstance(path, list) or len(path) < 2 or not isinstance(path[1], list):
        return []
    names = []
    for triple in path[1]:
        if isinstance(triple, list) and len(triple) == 3:
            for endpoint in (triple[0], triple[2]):
                if endpoint and endpoint not in names:
                    names.append(str(endpoint))
    return names


def find_name_spans(text: str, names: Iterable[str]) -> list[tuple[str, int, int]]:
    """Locate case-insensitive occurrences of names, longest-first, non-overlapping."""
    lowered = text.lower()
    candidates = []
    for name in names:
        needle = name.lower()
        if not needle:
            continue
        start = lowered.find(needle)
        while start != -1:
            candidates.append((name, start, start + len(needle)))
            start = lowered.find(needle, start + 1)
    candidates.sort(key=lambda c: (-(c[2] - c[1]), c[1], c[0]))
    accepted: list[tuple[str, int, int]] = []
    for cand in candidates:
        if all(cand[2] <= a[1] or cand[1] >= a[2] for a in accepted):
            accepted.append(cand)
    accepted.sort(key=lambda c: c[1])
    return accepted


def derive_opendialkg_catalog(conversations: Iterable[Conversation]) -> ItemCatalog:
    """Item set = entities recommended (mentioned) in recommender turns."""
    catalog = ItemCatalog()
    for conv in conversations:
        for utt in conv.utterances:
            if utt.speaker is not Speaker.RECOMMENDER:
                continue
            for mention in utt.entity_mentions:
                if mention.ref not in catalog.items:
                    catalog.items[mention.ref] = mention.ref
                    catalog.item_to_entity[mention.ref] = mention.ref
    return catalog


def retag_item_mentions(conversations: Iterable[Conversation], catalog: ItemCatalog) -> None:
    """Move entity mentions of cataloged items into item_mentions, in place."""
    for conv in conversations:
        for utt in conv.utterances:
            remaining = []
            for mention in utt.entity_mentions:
                if mention.ref in catalog.items:
                    utt.item_mentions.append(mention)
                else:
                    remaining.append(mention)
            utt.item_mentions.sort(key=lambda m: m.start)
            utt.entity_mentions = remaining


# ---------------------------------------------------------------------------
# Canonical internal format
# ---------------------------------------------------------------------------

def assign_splits(conversations: list[Conversation], train: float, valid: float) -> None:
    n = len(conversations)
    train_end = int(n * train)
    valid_end = int(n * (train + valid))
    for i, conv in enumerate(conversations):
        if i < train_end:
            conv.split = Split.TRAIN
        elif i < valid_end:
            conv.split = Split.VALID
        else:
            conv.split = Split.TEST


def save_canonical(conversations: Iterable[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for conv in conversations:
            record = {
                "id": conv.id,
                "split": conv.split.value,
                "utterances": [
                    {
                        "speaker": utt.speaker.value,
                        "text": utt.text,
                        "item_mentions": [list(m) for m in utt.item_mentions],
                        "entity_mentions": [list(m) for m in utt.entity_mentions],
                    }
                    for utt in conv.utterances
                ],
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def load_canonical(path: str | Path) -> list[Conversation]:
    conversations = []
    for line in _iter_lines(path):
        record = json.loads(line)
        utterances = [
            Utterance(
                speaker=Speaker(u["speaker"]),
                text=u["text"],
                item_mentions=[Mention(*m) for m in u["item_mentions"]],
                entity_mentions=[Mention(*m) for m in u["entity_mentions"]],
            )
            for u in record["utterances"]
        ]
        conversations.append(Conversation(id=record["id"], utterances=utterances,
                                          split=Split(record["split"])))
    return conversations


def save_catalog(catalog: ItemCatalog, path: str | Path) -> None:
    payload = {"items": catalog.items, "item_to_entity": catalog.item_to_entity}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")


def load_catalog(path: str | Path) -> ItemCatalog:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ItemCatalog(items=payload["items"], item_to_entity=payload["item_to_entity"])


def _iter_lines(path: str | Path):
    path = Path(path)
    files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
    for file in files:
        with open(file, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    yield line
