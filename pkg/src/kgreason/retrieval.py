"""Iterative beam expansion of the topic entities into a question subgraph."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .backend import EntityCandidate, KgBackend, RelationCandidate
from .graph import Direction, EntityId, Literal, Triple, TripleObject
from .linker import TopicEntitySet
from .selector import Question, Selector, SelectorDecision

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "kgreason.trace/1"


@dataclass(frozen=True)
class ExpansionConfig:
    relation_width: int = 3
    entity_width: int = 10
    iterations: int = 2
    temperature: float = 0.4
    max_frontier: int = 64
    parallelism: int = 1

    def __post_init__(self):
        for name in ("relation_width", "entity_width", "iterations", "max_frontier", "parallelism"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")

    def snapshot(self) -> dict:
        doc = asdict(self)
        doc.pop("parallelism")
        return doc


@dataclass(frozen=True)
class TripleProvenance:
    iteration: int
    source: str
    relation_score: float
    entity_score: float


@dataclass
class KnowledgeSubgraph:
    topics: TopicEntitySet
    _triples: dict[tuple[str, str, str], tuple[Triple, TripleProvenance]] = field(default_factory=dict)

    def add(self, t: Triple, prov: TripleProvenance) -> None:
        self._triples.setdefault(t.as_tuple(), (t, prov))

    @property
    def triples(self) -> list[Triple]:
        """Triples in insertion order."""
        return [t for t, _ in self._triples.values()]

    def provenance(self, t: Triple) -> TripleProvenance:
        return self._triples[t.as_tuple()][1]

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, t: object) -> bool:
        return isinstance(t, Triple) and t.as_tuple() in self._triples

    def triple_set(self) -> frozenset[tuple[str, str, str]]:
        return frozenset(self._triples)

    def entity_ids(self) -> set[str]:
        out = set()
        for t in self.triples:
            out.add(t.subject.id)
            if isinstance(t.object, EntityId):
                out.add(t.object.id)
        return out

    def to_json(self) -> dict:
        rows = []
        for t, p in self._triples.values():
            obj: dict = {"id": t.object.id} if isinstance(t.object, EntityId) else {"literal": t.object.text}
            if isinstance(t.object, Literal) and t.object.datatype:
                obj["datatype"] = t.object.datatype
            obj["label"] = t.object.display
            rows.append({
                "subject": {"id": t.subject.id, "label": t.subject.display},
                "relation": {"id": t.relation.id, "label": t.relation.display},
                "object": obj,
                "provenance": asdict(p),
            })
        return {"topics": self.topics.to_json(), "triples": rows}


def subgraph_contains_entity(g: KnowledgeSubgraph, e: EntityId | Literal | str) -> bool:
    """True when ``e`` is the subject or object of some triple.

    A plain string matches an entity id or a literal's text.
    """
    for t in g.triples:
        if isinstance(e, EntityId):
            if t.subject.id == e.id or (isinstance(t.object, EntityId) and t.object.id == e.id):
                return True
        elif isinstance(e, Literal):
            if t.object == e:
                return True
        else:
            if t.subject.id == e:
                return True
            if isinstance(t.object, EntityId) and t.object.id == e:
                return True
            if isinstance(t.object, Literal) and t.object.text == e:
                return True
    return False


@dataclass
class RelationExpansion:
    item_id: str
    relation: str
    direction: Direction
    relation_score: float
    entity_candidates: list[str]
    decision: SelectorDecision

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "relation": self.relation,
            "direction": self.direction.value,
            "relation_score": self.relation_score,
            "entity_candidates": self.entity_candidates,
            "decision": self.decision.to_json(),
        }


@dataclass
class DecisionRecord:
    iteration: int
    entity: str
    relation_candidates: list[str]
    relation_decision: SelectorDecision
    expansions: list[RelationExpansion] = field(default_factory=list)

    @property
    def fallbacks(self) -> list[str]:
        notes = list(self.relation_decision.notes)
        for x in self.expansions:
            notes.extend(x.decision.notes)
        return notes

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "entity": self.entity,
            "relation_candidates": self.relation_candidates,
            "relation_decision": self.relation_decision.to_json(),
            "expansions": [x.to_json() for x in self.expansions],
            "fallbacks": self.fallbacks,
        }


@dataclass
class RetrievalTrace:
    question: Question
    topics: list[str]
    config: ExpansionConfig
    records: list[DecisionRecord] = field(default_factory=list)
    frontiers: list[list[str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    selector: str = ""
    backend: str = ""
    # wall-clock seconds; kept out of to_json() so replays stay byte-identical
    elapsed: float = 0.0

    def record_for(self, entity: str) -> DecisionRecord | None:
        for r in self.records:
            if r.entity == entity:
                return r
        return None

    def to_json(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "question": {"id": self.question.id, "text": self.question.text},
            "selector": self.selector,
            "backend": self.backend,
            "config": self.config.snapshot(),
            "topics": self.topics,
            "frontiers": self.frontiers,
            "records": [r.to_json() for r in self.records],
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RetrievalTrace":
        cfg = ExpansionConfig(**doc["config"])
        records = []
        for r in doc["records"]:
            exps = [
                RelationExpansion(
                    x["item_id"], x["relation"], Direction(x["direction"]), x["relation_score"],
                    list(x["entity_candidates"]), SelectorDecision.from_json(x["decision"]),
                )
                for x in r["expansions"]
            ]
            records.append(DecisionRecord(
                r["iteration"], r["entity"], list(r["relation_candidates"]),
                SelectorDecision.from_json(r["relation_decision"]), exps,
            ))
        q = Question(doc["question"]["id"], doc["question"]["text"])
        return cls(q, list(doc["topics"]), cfg, records, [list(f) for f in doc["frontiers"]],
                   list(doc.get("notes", [])), doc.get("selector", ""), doc.get("backend", ""))


class RetrievalError(RuntimeError):
    """Backend or selector failed mid-retrieval; ``partial`` holds what was built."""

    def __init__(self, message: str, partial: tuple[KnowledgeSubgraph, RetrievalTrace]):
        super().__init__(message)
        self.partial = partial


def _guard(decision: SelectorDecision, offered: Iterable[str], cap: int) -> SelectorDecision:
    """Drop unoffered ids and enforce the cap, whatever the selector returned."""
    offered = set(offered)
    kept = [(i, s) for i, s in decision.choices if i in offered][:cap]
    if len(kept) == len(decision.choices):
        return decision
    notes = decision.notes + (f"guard removed {len(decision.choices) - len(kept)} choice(s)",)
    return SelectorDecision.from_scores(kept, cap, decision.rationale, notes) if kept else SelectorDecision(
        (), decision.rationale, notes)


@dataclass
class _Expansion:
    record: DecisionRecord
    triples: list[tuple[Triple, TripleProvenance]]
    successors: list[tuple[EntityId, float]]


def _expand(
    backend: KgBackend, sel: Selector, q: Question, e: EntityId, n: int, cfg: ExpansionConfig
) -> _Expansion:
    rel_cands = backend.search_relations(e)
    by_item: dict[str, RelationCandidate] = {c.item_id: c for c in rel_cands}
    rdec = _guard(sel.filter_relations(q, e, rel_cands, cfg.relation_width), by_item, cfg.relation_width)
    record = DecisionRecord(n, e.id, sorted(by_item), rdec)
    triples = []
    successors = []
    for item, rscore in rdec.choices:
        c = by_item[item]
        ents = backend.search_entities(e, c.relation, c.direction)
        if c.direction is Direction.INCOMING:
            ents = {x for x in ents if isinstance(x.object, EntityId)}
        by_ent: dict[str, EntityCandidate] = {x.item_id: x for x in ents}
        edec = _guard(
            sel.filter_entities(q, e, c.relation, c.direction, ents, cfg.entity_width), by_ent, cfg.entity_width
        )
        record.expansions.append(RelationExpansion(item, c.relation.id, c.direction, rscore, sorted(by_ent), edec))
        for eitem, escore in edec.choices:
            obj: TripleObject = by_ent[eitem].object
            if c.direction is Direction.OUTGOING:
                t = Triple(e, c.relation, obj)
            else:
                t = Triple(obj, c.relation, e)  # type: ignore[arg-type]
            triples.append((t, TripleProvenance(n, e.id, rscore, escore)))
            if isinstance(obj, EntityId):
                successors.append((obj, escore))
    return _Expansion(record, triples, successors)


def retrieve_subgraph(
    backend: KgBackend,
    sel: Selector,
    q: Question,
    topics: TopicEntitySet,
    cfg: ExpansionConfig = ExpansionConfig(),
) -> tuple[KnowledgeSubgraph, RetrievalTrace]:
    """Grow the subgraph for ``q`` from ``topics`` over ``cfg.iterations`` rounds.

    Each round expands the whole current frontier in entity-id order: up to
    ``relation_width`` relations per entity, then up to ``entity_width``
    neighbours per relation. Selected neighbours that were never scheduled
    before form the next frontier. Outgoing picks are stored as
    ``e -> r -> e'`` and incoming picks as ``e' -> r -> e``.
    """
    if not topics.entities:
        raise ValueError("topics must be non-empty")
    started = time.perf_counter()
    g = KnowledgeSubgraph(topics)
    frontier = sorted({e.id: e for e in topics.entities}.values(), key=lambda e: e.id)
    trace = RetrievalTrace(
        q, [e.id for e in frontier], cfg,
        selector=getattr(sel, "name", type(sel).__name__), backend=getattr(backend, "name", type(backend).__name__),
    )
    trace.frontiers.append([e.id for e in frontier])
    scheduled = {e.id for e in frontier}
    pool = ThreadPoolExecutor(cfg.parallelism) if cfg.parallelism > 1 else None
    try:
        for n in range(1, cfg.iterations + 1):
            if not frontier:
                trace.notes.append(f"frontier empty before iteration {n}; stopped")
                break
            try:
                if pool is not None:
                    results = list(pool.map(lambda e: _expand(backend, sel, q, e, n, cfg), frontier))
                else:
                    results = [_expand(backend, sel, q, e, n, cfg) for e in frontier]
            except Exception as exc:
                trace.notes.append(f"iteration {n} failed: {type(exc).__name__}: {exc}")
                trace.elapsed = time.perf_counter() - started
                raise RetrievalError(str(exc), (g, trace)) from exc
            nxt: dict[str, tuple[EntityId, float]] = {}
            for res in results:
                trace.records.append(res.record)
                for t, prov in res.triples:
                    g.add(t, prov)
                for ent, score in res.successors:
                    if ent.id in scheduled:
                        continue
                    prev = nxt.get(ent.id)
                    if prev is None or score > prev[1]:
                        nxt[ent.id] = (ent, score)
            ranked = sorted(nxt.values(), key=lambda p: (-p[1], p[0].id))
            if len(ranked) > cfg.max_frontier:
                trace.notes.append(
                    f"iteration {n}: frontier truncated from {len(ranked)} to {cfg.max_frontier}"
                )
                ranked = ranked[: cfg.max_frontier]
            frontier = sorted((e for e, _ in ranked), key=lambda e: e.id)
            scheduled.update(e.id for e in frontier)
            trace.frontiers.append([e.id for e in frontier])
    finally:
        if pool is not None:
            pool.shutdown()
    trace.elapsed = time.perf_counter() - started
    return g, trace


class ReplaySelector(Selector):
    """Returns the decisions recorded in a trace, keyed by entity and relation."""

    name = "replay"

    def __init__(self, trace: RetrievalTrace):
        self._rel = {r.entity: r.relation_decision for r in trace.records}
        self._ent = {(r.entity, x.item_id): x.decision for r in trace.records for x in r.expansions}

    def filter_relations(self, q, e, candidates, k):
        return self._rel.get(e.id, SelectorDecision())

    def filter_entities(self, q, e, r, direction, candidates, i):
        item = r.id if direction is Direction.OUTGOING else "^" + r.id
        return self._ent.get((e.id, item), SelectorDecision())


def dump_json(doc: dict) -> str:
    """Stable serialization used for every JSON artifact."""
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=False) + "\n"


def trace_schema() -> dict:
    """The JSON schema bundled for run documents (subgraph plus trace)."""
    from importlib import resources

    return json.loads(resources.files("kgreason").joinpath("schemas", "trace.schema.json").read_text("utf-8"))
