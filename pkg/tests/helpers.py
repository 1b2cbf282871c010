"""Shared builders for retrieval and scoring tests."""

from __future__ import annotations

import random

from kgreason.backend import InMemoryBackend
from kgreason.graph import Direction, EntityId, InMemoryGraph, Literal
from kgreason.linker import Provenance, TopicEntitySet
from kgreason.retrieval import ExpansionConfig, retrieve_subgraph
from kgreason.selector import GoldPath, GoldStep, LexicalSelector, OraclePlan, OracleSelector, Question
from kgreason.synthetic import RandomSelector, random_graph

from oracles import undirected_distances


def topics_of(*ids: str) -> TopicEntitySet:
    t = TopicEntitySet()
    for i in ids:
        t.add(EntityId(i), Provenance(i, "given", 1.0))
    return t


def random_retrieval(seed: int, max_triples: int = 50, n_topics: int | None = None):
    """One random (graph, config, selector, topics) retrieval; returns everything needed to check it."""
    rng = random.Random(seed)
    n_triples = rng.randint(5, max_triples)
    graph = random_graph(seed, n_entities=rng.randint(4, 20), n_triples=n_triples,
                         n_relations=rng.randint(1, 5), literal_fraction=0.15)
    backend = InMemoryBackend(graph)
    cfg = ExpansionConfig(
        relation_width=rng.randint(1, 4), entity_width=rng.randint(1, 4), iterations=rng.randint(1, 3),
        max_frontier=rng.choice([2, 4, 64]),
    )
    ents = [e.id for e in graph.entities()]
    drawn = 1 if rng.random() < 0.7 else 2
    n_topics = drawn if n_topics is None else n_topics
    topics = topics_of(*rng.sample(ents, min(n_topics, len(ents))))
    sel = RandomSelector(seed) if rng.random() < 0.75 else LexicalSelector()
    q = Question(f"rand-{seed}", "which r1 of E003 relates to E007 via r2")
    g, trace = retrieve_subgraph(backend, sel, q, topics, cfg)
    return graph, backend, cfg, topics, g, trace


def plant_walk(graph: InMemoryGraph, rng: random.Random, length: int):
    """A simple random walk of ``length`` steps over either edge direction, distinct nodes only."""
    ents = [e.id for e in graph.entities()]
    for _ in range(50):
        start = rng.choice(ents)
        node, seen, steps = start, {start}, []
        for _ in range(length):
            options = []
            for d in (Direction.OUTGOING, Direction.INCOMING):
                for r, o in graph.neighbors(node, d):
                    if o.key not in seen and (isinstance(o, EntityId) or len(steps) == length - 1):
                        options.append((r.id, d, o))
            # one gold relation per (entity, direction) keeps branching within K = 1
            if not options:
                break
            r, d, o = rng.choice(sorted(options, key=lambda p: (p[0], p[1].value, p[2].key)))
            steps.append(GoldStep(r, d, o.key))
            seen.add(o.key)
            if isinstance(o, Literal):
                break
            node = o.id
        if len(steps) == length:
            return GoldPath(start, tuple(steps))
    return None


def oracle_for(q: Question, path: GoldPath) -> OracleSelector:
    return OracleSelector({q.id: OraclePlan((path,))})


def check_beam_invariants(graph, cfg, topics, g, trace):
    for rec in trace.records:
        assert len(rec.relation_decision.choices) <= cfg.relation_width
        for x in rec.expansions:
            assert len(x.decision.choices) <= cfg.entity_width
    expanded = [r.entity for r in trace.records]
    assert len(expanded) == len(set(expanded))
    assert {t.as_tuple() for t in g.triples} <= {t.as_tuple() for t in graph}
    dist = undirected_distances(
        [(t.subject.id, t.relation.id, t.object.key) for t in graph], [e.id for e in topics.entities])
    for t in g.triples:
        for node in (t.subject.id, t.object.key):
            assert dist.get(node, 10**6) <= cfg.iterations
