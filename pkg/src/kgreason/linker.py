"""Topic-entity linking: mentions to the starting frontier."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from ._http import USER_AGENT, request_json
from .backend import KgBackend
from .graph import EntityId

logger = logging.getLogger(__name__)


class LinkingError(RuntimeError):
    """No mention could be linked to the graph."""


@dataclass(frozen=True)
class Provenance:
    mention: str
    method: str
    similarity: float


@dataclass
class TopicEntitySet:
    entities: list[EntityId] = field(default_factory=list)
    provenance: dict[str, Provenance] = field(default_factory=dict)
    unlinked: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, e: EntityId, prov: Provenance) -> None:
        if e.id not in self.provenance:
            self.entities.append(e)
            self.provenance[e.id] = prov

    def __len__(self) -> int:
        return len(self.entities)

    def to_json(self) -> dict:
        return {
            "entities": [e.id for e in self.entities],
            "provenance": {
                k: {"mention": p.mention, "method": p.method, "similarity": p.similarity}
                for k, p in self.provenance.items()
            },
            "unlinked": list(self.unlinked),
            "notes": list(self.notes),
        }


def link_exact(backend: KgBackend, mentions: Sequence[str]) -> TopicEntitySet:
    """Link each mention to every entity whose normalized label equals it."""
    if not mentions:
        raise ValueError("mentions must be non-empty")
    found: dict[str, tuple[EntityId, str]] = {}
    unlinked = []
    for m in mentions:
        hits = backend.lookup_by_label(m)
        if not hits:
            unlinked.append(m)
        for e in hits:
            # smallest mention wins so the result ignores mention order
            if e.id not in found or m < found[e.id][1]:
                found[e.id] = (e, m)
    if not found:
        raise LinkingError(f"no mention could be linked: {list(mentions)}")
    topics = TopicEntitySet(unlinked=sorted(set(unlinked)))
    # id order keeps the result independent of mention order
    for eid in sorted(found):
        e, m = found[eid]
        topics.add(e, Provenance(m, "exact", 1.0))
    return topics


class EmbedderPort(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Dot product of the L2-normalized vectors; 0 when either is all zeros."""
    if len(a) != len(b):
        raise ValueError("vectors differ in length")
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return math.fsum((x / na) * (y / nb) for x, y in zip(a, b))


def link_embedding(
    backend: KgBackend,
    mentions: Sequence[str],
    embedder: EmbedderPort,
    threshold: float = 0.6,
    top_m: int = 1,
) -> TopicEntitySet:
    """Link each mention to its ``top_m`` most similar entity labels above ``threshold``.

    Falls back to :func:`link_exact` when nothing clears the threshold.
    """
    if not mentions:
        raise ValueError("mentions must be non-empty")
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    universe = backend.label_universe()
    vectors = [(e, embedder.embed(e.display)) for e in universe]
    picked: dict[str, tuple[EntityId, str, float]] = {}
    unlinked = []
    for m in mentions:
        mv = embedder.embed(m)
        sims = sorted(((cosine(mv, v), e) for e, v in vectors), key=lambda p: (-p[0], p[1].id))
        kept = [(s, e) for s, e in sims if s >= threshold][:top_m]
        if not kept:
            unlinked.append(m)
        for s, e in kept:
            prev = picked.get(e.id)
            if prev is None or s > prev[2]:
                picked[e.id] = (e, m, s)
    if not picked:
        topics = link_exact(backend, mentions)
        topics.notes.append(f"embedding linking found nothing above {threshold}; fell back to exact")
        return topics
    topics = TopicEntitySet(unlinked=sorted(set(unlinked)))
    for eid in sorted(picked, key=lambda k: (-picked[k][2], k)):
        e, m, s = picked[eid]
        topics.add(e, Provenance(m, "embedding", s))
    return topics


class HttpEmbedder:
    """Embedder backed by an OpenAI-style ``/embeddings`` endpoint."""

    def __init__(self, base_url: str, model: str, timeout: float = 30.0, max_retries: int = 3,
                 api_key: str | None = None, session: requests.Session | None = None):
        url = base_url.rstrip("/")
        self.url = url if url.endswith("/embeddings") else url + "/embeddings"
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.api_key = api_key
        self.session = session or requests.Session()
        self._memo: dict[str, list[float]] = {}

    def embed(self, text: str) -> list[float]:
        if text in self._memo:
            return self._memo[text]
        headers = {"User-Agent": USER_AGENT}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body, _ = request_json(
            self.session, "POST", self.url, json={"model": self.model, "input": text},
            headers=headers, max_retries=self.max_retries, timeout=self.timeout,
        )
        try:
            vec = [float(x) for x in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise RuntimeError(f"malformed embeddings response: {str(body)[:200]}") from exc
        self._memo[text] = vec
        return vec
