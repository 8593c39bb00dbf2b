"""HTTP session service exposing a trained checkpoint for live chats.

Sessions hold the conversation so far; the preference history is always
recomputed from the stored utterances, so replaying a transcript into a
fresh session reproduces identical responses. Per-session processing is
serialized with a lock; different sessions proceed concurrently. Sessions
are persisted as append-only JSONL events and reloaded on restart.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import RunConfig, config_from_payload
from .corpus import (Speaker, Utterance, decode_tokens, mention_history,
                     serialize_context, truncate_context)
from .generator import build_bias
from .kg import AliasIndex, link_entities
from .recommender import ColdStartPolicy, build_item_index, top_k
from .training import restore


@dataclass
class ReplyResult:
    response_text: str
    ranked_items: list[dict]
    entity_history: list[dict]
    debug: dict


class RecommenderEngine:
    """Checkpoint-backed pipeline: link -> history -> fuse -> bias -> decode."""

    def __init__(self, checkpoint_path: str | Path,
                 alias_path: str | Path | None = None):
        self.model, self.vocab, self.kg, self.catalog, stored = restore(
            checkpoint_path)
        self.cfg = config_from_payload(stored) if stored else RunConfig()
        self.fusion = self.cfg.fusion()
        self.decode_cfg = self.cfg.decode()
        self.item_index = build_item_index(self.kg, self.catalog)
        self.aliases = AliasIndex.from_kg(self.kg, self.catalog)
        if alias_path:
            extra = AliasIndex.from_tsv(alias_path)
            for surface, entities in extra.aliases.items():
                for entity in entities:
                    self.aliases.add(surface, entity)
        self._entity_to_item = {name: item_id for item_id, name
                                in self.catalog.item_to_entity.items()}

    def annotate(self, speaker: Speaker, text: str) -> Utterance:
        """Build an utterance with alias-linked item and entity mentions."""
        utt = Utterance(speaker=speaker, text=text)
        item_mentions, entity_mentions = [], []
        for mention in link_entities(utt, self.aliases):
            if mention.ref in self._entity_to_item:
                item_mentions.append(
                    mention._replace(ref=self._entity_to_item[mention.ref]))
            else:
                entity_mentions.append(mention)
        return Utterance(speaker=speaker, text=text,
                         item_mentions=item_mentions,
                         entity_mentions=entity_mentions)

    def history_view(self, utterances: list[Utterance]) -> list[dict]:
        history = mention_history(
            utterances, self.catalog, self.kg,
            include_text_entities=self.cfg.include_text_entities)
        return [{"entity_id": entity, "name": self.kg.entity_names[entity],
                 "position": i} for i, entity in enumerate(history)]

    def respond(self, utterances: list[Utterance]) -> ReplyResult:
        history = [h["entity_id"] for h in self.history_view(utterances)]
        groups = serialize_context(utterances, self.vocab)
        context = truncate_context(groups, self.cfg.context_max_len)
        src = torch.tensor([context], dtype=torch.long)
        cold = self.model.cfg.variant.uses_entity and len(history) == 0
        self.model.eval()
        with torch.no_grad():
            dist = self.model.recommend(src, history, self.fusion)
            seen = frozenset(h for h in history
                             if self.kg.item_mask[h]) if self.cfg.exclude_seen \
                else frozenset()
            ranked = top_k(dist, 10, self.item_index, seen)
            bias = build_bias(dist, self.vocab, self.catalog, self.kg)
            hyp = self.model.generate(src, bias, self.decode_cfg)[0]
        text = decode_tokens(hyp.tokens, self.vocab, self.catalog,
                             machine=False)
        if cold:
            branch = ("context_only"
                      if self.fusion.cold_start is ColdStartPolicy.CONTEXT_ONLY
                      else "uniform_entity")
        elif self.model.cfg.variant.uses_context and \
                self.model.cfg.variant.uses_entity:
            branch = "fused"
        elif self.model.cfg.variant.uses_entity:
            branch = "entity_only"
        else:
            branch = "context_only"
        return ReplyResult(
            response_text=text,
            ranked_items=[{"item_id": r.item_id, "name": r.name,
                           "prob": r.prob} for r in ranked],
            entity_history=self.history_view(utterances),
            debug={"cold_start": cold, "branch": branch})


@dataclass
class Session:
    id: str
    created: float
    updated: float
    utterances: list[Utterance] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory sessions with append-only JSONL persistence."""

    def __init__(self, engine: RecommenderEngine, capacity: int = 256,
                 path: str | Path | None = None):
        self.engine = engine
        self.capacity = capacity
        self.path = Path(path) if path else None
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._replay()

    def _append_event(self, event: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if event["event"] == "create":
                self.sessions[event["id"]] = Session(
                    id=event["id"], created=event["ts"], updated=event["ts"])
            elif event["event"] == "utterance":
                session = self.sessions.get(event["id"])
                if session is not None:
                    session.utterances.append(self.engine.annotate(
                        Speaker(event["speaker"]), event["text"]))
                    session.updated = event["ts"]

    def create(self) -> Session:
        with self._lock:
            if len(self.sessions) >= self.capacity:
                raise HTTPException(status_code=429,
                                    detail="session capacity exceeded")
            session_id = uuid.uuid4().hex
            now = time.time()
            session = Session(id=session_id, created=now, updated=now)
            self.sessions[session_id] = session
        self._append_event({"event": "create", "id": session_id, "ts": now})
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id}")
        return session

    def post_message(self, session_id: str, text: str) -> ReplyResult:
        session = self.get(session_id)
        with session.lock:
            now = time.time()
            session.utterances.append(
                self.engine.annotate(Speaker.SEEKER, text))
            self._append_event({"event": "utterance", "id": session_id,
                                "speaker": Speaker.SEEKER.value,
                                "text": text, "ts": now})
            result = self.engine.respond(session.utterances)
            session.utterances.append(
                self.engine.annotate(Speaker.RECOMMENDER,
                                     result.response_text))
            session.updated = time.time()
            self._append_event({"event": "utterance", "id": session_id,
                                "speaker": Speaker.RECOMMENDER.value,
                                "text": result.response_text,
                                "ts": session.updated})
        return result


class MessageIn(BaseModel):
    text: str = Field(min_length=1)


def build_app(checkpoint_path: str | Path | None = None, capacity: int = 256,
              sessions_path: str | Path | None = None,
              alias_path: str | Path | None = None,
              engine: RecommenderEngine | None = None) -> FastAPI:
    if engine is None:
        if checkpoint_path is None:
            raise ValueError("build_app needs a checkpoint or an engine")
        engine = RecommenderEngine(checkpoint_path, alias_path=alias_path)
    store = SessionStore(engine, capacity=capacity, path=sessions_path)
    app = FastAPI(title="convrec service")
    app.state.store = store

    @app.post("/api/sessions")
    def create_session() -> dict:
        return {"id": store.create().id}

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, message: MessageIn) -> dict:
        result = store.post_message(session_id, message.text)
        return {"response_text": result.response_text,
                "ranked_items": result.ranked_items,
                "entity_history": result.entity_history,
                "debug": result.debug}

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        session = store.get(session_id)
        return {"id": session.id, "created": session.created,
                "updated": session.updated,
                "utterances": [{"speaker": u.speaker.value, "text": u.text}
                               for u in session.utterances],
                "entity_history": engine.history_view(session.utterances)}

    @app.get("/api/health")
    def health() -> dict:
        cfg = engine.cfg
        return {"status": "ok", "sessions": len(store.sessions),
                "capacity": store.capacity,
                "config": {"lambda": cfg.decay, "mu": cfg.mu,
                           "gamma": cfg.gamma, "beam": cfg.beam,
                           "groups": cfg.groups,
                           "length_penalty": cfg.length_penalty,
                           "strategy": cfg.strategy,
                           "variant": cfg.variant}}

    return app
