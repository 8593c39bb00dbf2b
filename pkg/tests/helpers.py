"""Hand-built fixtures shared across the test modules.

The tiny world is three movies, one genre node and one actor, with inverse
relations materialized and the reserved self-loop appended last. Everything
is small enough to verify by hand.
"""

from convrec.corpus import (Conversation, ItemCatalog, Mention, Speaker,
                            Utterance, Vocabulary)
from convrec.kg import KnowledgeGraph


def utt(speaker: str, text: str, items=(), entities=()) -> Utterance:
    """Utterance with mentions anchored at the first occurrence of a substring."""
    u = Utterance(speaker=Speaker(speaker), text=text)
    for ref, surface in items:
        start = text.index(surface)
        u.item_mentions.append(Mention(ref, start, start + len(surface)))
    for name, surface in entities:
        start = text.index(surface)
        u.entity_mentions.append(Mention(name, start, start + len(surface)))
    u.validate_spans()
    return u


def tiny_kg() -> KnowledgeGraph:
    return KnowledgeGraph(
        entity_names=["Alpha (2000)", "Beta (2001)", "Gamma (2002)",
                      "space films", "Actor One"],
        relation_names=["has_genre", "starring",
                        "has_genre^-1", "starring^-1", "<self>"],
        triples=[(0, 0, 3), (1, 0, 3), (2, 1, 4), (0, 1, 4)],
        item_mask=[True, True, True, False, False])


def tiny_catalog() -> ItemCatalog:
    return ItemCatalog(
        items={"101": "Alpha (2000)", "102": "Beta (2001)",
               "103": "Gamma (2002)"},
        item_to_entity={"101": "Alpha (2000)", "102": "Beta (2001)",
                        "103": "Gamma (2002)"})


def tiny_conversations() -> list[Conversation]:
    return [
        Conversation(id="c1", utterances=[
            utt("seeker", "hi i liked Alpha (2000) a lot",
                items=[("101", "Alpha (2000)")]),
            utt("recommender", "then try Beta (2001) tonight",
                items=[("102", "Beta (2001)")]),
            utt("seeker", "anything with space films ?",
                entities=[("space films", "space films")]),
            utt("recommender", "sure , Gamma (2002) fits",
                items=[("103", "Gamma (2002)")]),
        ]),
        Conversation(id="c2", utterances=[
            utt("seeker", "hello i want a fun movie"),
            utt("recommender", "Alpha (2000) is fun",
                items=[("101", "Alpha (2000)")]),
        ]),
    ]


def tiny_vocab() -> Vocabulary:
    return Vocabulary.build(tiny_conversations(), tiny_catalog(), min_count=1)


def tiny_world():
    """(kg, catalog, vocab, conversations) quadruple used all over."""
    return tiny_kg(), tiny_catalog(), tiny_vocab(), tiny_conversations()
