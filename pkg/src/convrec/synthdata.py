"""Synthetic dialogue corpus in the ReDial release format, plus a matching KG.

The generator builds a genre-structured movie world and three conversation
shapes chosen to separate the models:

  recency   two mentions from different genres; the reply recommends the
            sequel of the LAST mention, with no genre words in the text
  coldstart no mentions at all, one genre keyword; the reply recommends the
            genre's flagship title
  keyword   one same-genre mention plus the keyword; flagship reply again

A recency-weighted entity model can solve the first shape (the knowledge
graph carries ``followed_by`` edges between sequel pairs), a context model
the second; neither alone covers everything.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

GENRES = ("space", "dragon", "noir", "heist", "romance",
          "zombie", "samurai", "pirate", "robot", "western")
ADJECTIVES = ("crimson", "silent", "golden", "broken", "electric",
              "midnight", "savage", "hidden", "frozen", "burning")

ITEM_ID_BASE = 100000


@dataclass
class SynthConfig:
    num_conversations: int = 500
    num_genres: int = 10
    items_per_genre: int = 30
    seed: int = 13
    greeting_rate: float = 0.3

    def __post_init__(self):
        if not 1 <= self.num_genres <= len(GENRES):
            raise ValueError(f"num_genres must be in [1, {len(GENRES)}]")
        if self.items_per_genre < 2 or self.items_per_genre % 2 != 0:
            raise ValueError("items_per_genre must be even and >= 2")


@dataclass
class SynthItem:
    item_id: str
    name: str
    genre: int
    index_in_genre: int


class SynthWorld:
    """Item universe with genre, actor, and sequel structure."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.items: list[SynthItem] = []
        for g in range(cfg.num_genres):
            for k in range(cfg.items_per_genre):
                global_idx = g * cfg.items_per_genre + k
                adj = ADJECTIVES[k % len(ADJECTIVES)]
                name = (f"{adj.title()} {GENRES[g].title()} {k + 1} "
                        f"({1980 + global_idx % 40})")
                self.items.append(SynthItem(
                    item_id=str(ITEM_ID_BASE + global_idx), name=name,
                    genre=g, index_in_genre=k))

    def genre_items(self, g: int) -> list[SynthItem]:
        n = self.cfg.items_per_genre
        return self.items[g * n:(g + 1) * n]

    def flagship(self, g: int) -> SynthItem:
        return self.genre_items(g)[0]

    def partner(self, item: SynthItem) -> SynthItem:
        # sequel pairs: indices (0, 1), (2, 3), ...
        return self.genre_items(item.genre)[item.index_in_genre ^ 1]

    def genre_entity(self, g: int) -> str:
        return f"{GENRES[g]} films"

    def actor_entity(self, g: int, j: int) -> str:
        return f"Actor {GENRES[g].title()} {j + 1}"

    def kg_lines(self) -> list[str]:
        lines = []
        for item in self.items:
            lines.append(f"{item.name}\thas_genre\t{self.genre_entity(item.genre)}")
            lines.append(f"{item.name}\tstarring\t"
                         f"{self.actor_entity(item.genre, item.index_in_genre % 5)}")
            if item.index_in_genre % 2 == 0:
                lines.append(f"{item.name}\tfollowed_by\t"
                             f"{self.partner(item).name}")
        return lines

    def alias_lines(self) -> list[str]:
        return [f"{GENRES[g]}\t{self.genre_entity(g)}"
                for g in range(self.cfg.num_genres)]


_RECENCY_OPENERS = ("i recently watched {a}",
                    "last week i saw {a}",
                    "so i finally got around to {a}")
_RECENCY_FOLLOWUPS = ("i also enjoyed {b} what should i see next",
                      "after that i put on {b} any suggestions",
                      "then {b} was even better what now")
_RECENCY_REPLIES = ("you should watch {t} next",
                    "then {t} is the obvious pick",
                    "go straight to {t} you will love it")
_COLDSTART_OPENERS = ("i am in the mood for something {kw} tonight",
                      "can you find me a good {kw} movie",
                      "looking for a {kw} film to watch")
_COLDSTART_REPLIES = ("try {t} it fits what you want",
                      "i recommend {t} for that",
                      "{t} is exactly that kind of film")
_KEYWORD_OPENERS = ("i loved {a} give me more {kw} stuff",
                    "{a} was great any other {kw} picks",
                    "more {kw} films like {a} please")
_KEYWORD_REPLIES = ("then {t} is the one to see",
                    "start with {t} it is the best of them",
                    "you cannot go wrong with {t}")
_GREETINGS = ("hello there", "hi i need a movie", "hey good evening")
_GREETING_REPLIES = ("hi happy to help", "hello what are you into",
                     "hey tell me what you like")


def _mention(item: SynthItem) -> str:
    return f"@{item.item_id}"


def generate_conversations(cfg: SynthConfig,
                           world: SynthWorld) -> list[dict]:
    """ReDial-release records; type mix recency/recency/coldstart/keyword."""
    rng = random.Random(cfg.seed)
    records = []
    message_id = 1
    for i in range(cfg.num_conversations):
        seeker_id = 1000 + i
        rec_id = 9000 + i
        mentions: dict[str, str] = {}
        turns: list[tuple[int, str]] = []

        def say(worker: int, text: str, *items: SynthItem) -> None:
            for item in items:
                mentions[item.item_id] = item.name
            turns.append((worker, text))

        if rng.random() < cfg.greeting_rate:
            say(seeker_id, rng.choice(_GREETINGS))
            say(rec_id, rng.choice(_GREETING_REPLIES))
        kind = i % 4
        if kind in (0, 1):  # recency
            g_a, g_b = rng.sample(range(cfg.num_genres), 2)
            a = rng.choice(world.genre_items(g_a))
            b = rng.choice(world.genre_items(g_b))
            target = world.partner(b)
            say(seeker_id, rng.choice(_RECENCY_OPENERS).format(a=_mention(a)), a)
            say(seeker_id, rng.choice(_RECENCY_FOLLOWUPS).format(b=_mention(b)), b)
            say(rec_id, rng.choice(_RECENCY_REPLIES).format(t=_mention(target)),
                target)
        elif kind == 2:  # cold start
            g = rng.randrange(cfg.num_genres)
            target = world.flagship(g)
            say(seeker_id, rng.choice(_COLDSTART_OPENERS).format(kw=GENRES[g]))
            say(rec_id, rng.choice(_COLDSTART_REPLIES).format(t=_mention(target)),
                target)
        else:  # keyword + same-genre mention
            g = rng.randrange(cfg.num_genres)
            a = rng.choice(world.genre_items(g)[1:])
            target = world.flagship(g)
            say(seeker_id, rng.choice(_KEYWORD_OPENERS).format(
                a=_mention(a), kw=GENRES[g]), a)
            say(rec_id, rng.choice(_KEYWORD_REPLIES).format(t=_mention(target)),
                target)
        messages = []
        for offset, (worker, text) in enumerate(turns):
            messages.append({"messageId": message_id, "text": text,
                             "timeOffset": offset * 15,
                             "senderWorkerId": worker})
            message_id += 1
        records.append({"conversationId": str(i + 1),
                        "initiatorWorkerId": seeker_id,
                        "respondentWorkerId": rec_id,
                        "movieMentions": mentions,
                        "messages": messages})
    return records


def write_corpus(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Writes redial.jsonl, kg.tsv, and aliases.tsv; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = SynthWorld(cfg)
    records = generate_conversations(cfg, world)
    paths = {"redial": out_dir / "redial.jsonl",
             "kg": out_dir / "kg.tsv",
             "aliases": out_dir / "aliases.tsv"}
    with open(paths["redial"], "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    paths["kg"].write_text("\n".join(world.kg_lines()) + "\n", encoding="utf-8")
    paths["aliases"].write_text("\n".join(world.alias_lines()) + "\n",
                                encoding="utf-8")
    return paths
