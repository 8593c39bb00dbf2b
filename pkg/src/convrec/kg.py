"""Relational knowledge graph storage and alias-based entity linking."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import ItemCatalog, Mention, Utterance

SELF_LOOP_RELATION = "<self>"
INVERSE_SUFFIX = "^-1"

_NORM_RE = re.compile(r"[^0-9a-z]+")


def normalize_surface(text: str) -> str:
    """Lowercase and fold punctuation/whitespace runs to single spaces."""
    return _NORM_RE.sub(" ", text.lower()).strip()


@dataclass
class KnowledgeGraph:
    """Directed typed graph; a triple (e1, r, e2) sends e1's state into e2.

    Relation ids cover the base relations, optionally one inverse per base
    relation, and always a reserved trailing self-loop relation that carries
    no explicit triples.
    """

    entity_names: list[str]
    relation_names: list[str]
    triples: list[tuple[int, int, int]]
    item_mask: list[bool]
    entity_index: dict[str, int] = field(init=False)
    relation_index: dict[str, int] = field(init=False)
    # per relation: dst -> set of src entities whose messages flow into dst
    incoming: list[dict[int, set[int]]] = field(init=False)

    def __post_init__(self):
        self.entity_index = {name: i for i, name in enumerate(self.entity_names)}
        self.relation_index = {name: i for i, name in enumerate(self.relation_names)}
        if self.relation_names[-1] != SELF_LOOP_RELATION:
            raise ValueError("last relation must be the reserved self-loop")
        self.incoming = [dict() for _ in self.relation_names]
        for head, rel, tail in self.triples:
            self._add_edge(rel, src=head, dst=tail)
            inverse = self.relation_index.get(self.relation_names[rel] + INVERSE_SUFFIX)
            if inverse is not None:
                self._add_edge(inverse, src=tail, dst=head)

    def _add_edge(self, relation: int, src: int, dst: int) -> None:
        self.incoming[relation].setdefault(dst, set()).add(src)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def self_loop_relation(self) -> int:
        return len(self.relation_names) - 1

    def neighbors(self, entity: int, relation: int) -> set[int]:
        """Entities whose messages flow into `entity` under `relation`."""
        return self.incoming[relation].get(entity, set())

    def item_entity_ids(self) -> list[int]:
        return [i for i, flag in enumerate(self.item_mask) if flag]


def load_triples(path: str | Path, catalog: ItemCatalog | None = None,
                 add_inverse: bool = True) -> KnowledgeGraph:
    """Load tab-separated ⟨head, relation, tail⟩ lines into a KnowledgeGraph.

    Ids are assigned densely in order of first appearance; duplicate triples
    are dropped. The item mask marks entities reachable from the catalog's
    item_to_entity links.
    """
    entity_names: list[str] = []
    entity_index: dict[str, int] = {}
    relation_names: list[str] = []
    relation_index: dict[str, int] = {}
    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []

    def entity_id(name: str) -> int:
        if name not in entity_index:
            entity_index[name] = len(entity_names)
            entity_names.append(name)
        return entity_index[name]

    def relation_id(name: str) -> int:
        if name not in relation_index:
            relation_index[name] = len(relation_names)
            relation_names.append(name)
        return relation_index[name]

    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields, got {line!r}")
            head, relation, tail = (p.strip() for p in parts)
            triple = (entity_id(head), relation_id(relation), entity_id(tail))
            if triple not in seen:
                seen.add(triple)
                triples.append(triple)

    if add_inverse:
        for name in list(relation_names):
            relation_id(name + INVERSE_SUFFIX)
    relation_id(SELF_LOOP_RELATION)

    item_mask = [False] * len(entity_names)
    if catalog is not None:
        for entity_name in catalog.item_to_entity.values():
            idx = entity_index.get(entity_name)
            if idx is not None:
                item_mask[idx] = True

    return KnowledgeGraph(entity_names=entity_names, relation_names=relation_names,
                          triples=triples, item_mask=item_mask)


def link_catalog(catalog: ItemCatalog, kg_entity_names: Iterable[str],
                 overrides: dict[str, str] | None = None) -> int:
    """Fill catalog.item_to_entity by exact normalized-name matching.

    `overrides` maps item_id to entity name for hand-curated fixes. Returns
    the number of items linked. Items that match no entity stay unlinked and
    are ignored downstream.
    """
    by_norm: dict[str, str] = {}
    for name in kg_entity_names:
        by_norm.setdefault(normalize_surface(name), name)
    linked = 0
    claimed = set(catalog.item_to_entity.values())
    for item_id, display in catalog.items.items():
        if item_id in catalog.item_to_entity:
            linked += 1
            continue
        target = (overrides or {}).get(item_id) or by_norm.get(normalize_surface(display))
        if target is not None and target not in claimed:
            catalog.item_to_entity[item_id] = target
            claimed.add(target)
            linked += 1
    return linked


@dataclass
class AliasIndex:
    """Normalized surface form -> candidate entity names (deterministic order)."""

    aliases: dict[str, list[str]] = field(default_factory=dict)
    max_alias_words: int = field(init=False, default=0)

    def __post_init__(self):
        self.max_alias_words = max((len(k.split()) for k in self.aliases), default=0)

    def add(self, surface: str, entity_name: str) -> None:
        key = normalize_surface(surface)
        if not key:
            return
        bucket = self.aliases.setdefault(key, [])
        if entity_name not in bucket:
            bucket.append(entity_name)
            bucket.sort()
        self.max_alias_words = max(self.max_alias_words, len(key.split()))

    def lookup(self, surface: str) -> list[str]:
        return self.aliases.get(normalize_surface(surface), [])

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph, catalog: ItemCatalog | None = None) -> "AliasIndex":
        index = cls()
        for name in kg.entity_names:
            index.add(name, name)
        if catalog is not None:
            for item_id, display in catalog.items.items():
                entity = catalog.item_to_entity.get(item_id)
                if entity is not None:
                    index.add(display, entity)
        return index

    @classmethod
    def from_tsv(cls, path: str | Path) -> "AliasIndex":
        index = cls()
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                surface, entity = line.split("\t")[:2]
                index.add(surface, entity)
        return index

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for surface in sorted(self.aliases):
                for entity in self.aliases[surface]:
                    handle.write(f"{surface}\t{entity}\n")


_WORD_RE = re.compile(r"\S+")


def link_entities(utt: Utterance, index: AliasIndex) -> list[Mention]:
    """Alias-match entity mentions in an utterance.

    Longest match wins; overlaps resolved greedily with ties broken by the
    earliest span start, then the smallest entity name. Returns mentions in
    span order.
    """
    words = [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(utt.text)]
    candidates: list[tuple[int, int, str]] = []
    max_words = index.max_alias_words
    for i in range(len(words)):
        for width in range(min(max_words, len(words) - i), 0, -1):
            start = words[i][1]
            end = words[i + width - 1][2]
            matches = index.lookup(utt.text[start:end])
            if matches:
                candidates.append((start, end, matches[0]))
    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0], c[2]))
    accepted: list[tuple[int, int, str]] = []
    for cand in candidates:
        if all(cand[1] <= a[0] or cand[0] >= a[1] for a in accepted):
            accepted.append(cand)
    accepted.sort(key=lambda c: c[0])
    return [Mention(entity, start, end) for start, end, entity in accepted]


def apply_item_mask(kg: KnowledgeGraph, catalog: ItemCatalog) -> int:
    """Refresh the item mask after catalog linking; returns masked-in count."""
    for i in range(len(kg.item_mask)):
        kg.item_mask[i] = False
    for entity_name in catalog.item_to_entity.values():
        idx = kg.entity_index.get(entity_name)
        if idx is not None:
            kg.item_mask[idx] = True
    return sum(kg.item_mask)


def link_conversations(conversations, index: AliasIndex) -> int:
    """Attach alias-matched entity mentions to every utterance in place.

    Existing mentions win: new spans are dropped when they overlap an item
    mention or a previously attached entity mention. Returns mentions added.
    """
    added = 0
    for conv in conversations:
        for utt in conv.utterances:
            taken = [(m.start, m.end)
                     for m in list(utt.item_mentions) + list(utt.entity_mentions)]
            fresh = []
            for mention in link_entities(utt, index):
                if all(mention.end <= s or mention.start >= e for s, e in taken):
                    fresh.append(mention)
                    taken.append((mention.start, mention.end))
            if fresh:
                utt.entity_mentions = sorted(
                    list(utt.entity_mentions) + fresh, key=lambda m: m.start)
                added += len(fresh)
    return added
