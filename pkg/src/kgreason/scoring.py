"""Path-probability bookkeeping over a retrieval trace.

A step is one (relation choice, entity choice) pair taken at an expanded
entity; its weight is relation score times entity score. The score of a
topic-rooted branch is the sum, over every selected path below it, of the
product of its step weights. A successor entity continues a path only when
it was expanded in the very next iteration and took at least one step there;
otherwise the path ends at it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .graph import RelationId
from .retrieval import DecisionRecord, ExpansionConfig, RelationExpansion, RetrievalTrace


class ScoringError(KeyError):
    pass


MASS_MODES = ("sum", "max")


def _agg(values: list[float], mass: str) -> float:
    if mass not in MASS_MODES:
        raise ValueError(f"mass must be one of {MASS_MODES}")
    if not values:
        return 0.0
    return math.fsum(values) if mass == "sum" else max(values)


def _index(trace: RetrievalTrace) -> dict[str, DecisionRecord]:
    return {r.entity: r for r in trace.records}


def _find(trace: RetrievalTrace, e, r) -> tuple[DecisionRecord, RelationExpansion]:
    eid = getattr(e, "id", e)
    rec = trace.record_for(eid)
    if rec is None:
        raise ScoringError(f"entity {eid!r} was never expanded")
    if isinstance(r, RelationId):
        matches = [x for x in rec.expansions if x.relation == r.id]
        if len(matches) > 1:
            raise ScoringError(f"relation {r.id!r} selected in both directions at {eid!r}; pass an item id")
    else:
        matches = [x for x in rec.expansions if x.item_id == r]
    if not matches:
        raise ScoringError(f"relation {getattr(r, 'id', r)!r} not selected at {eid!r}")
    return rec, matches[0]


def t1(trace: RetrievalTrace, e, r, mass: str = "sum") -> float:
    """Relation score times the entity mass chosen under it."""
    _, x = _find(trace, e, r)
    return x.relation_score * _agg([s for _, s in x.decision.choices], mass)


def _continuation(index, rec: DecisionRecord, item: str, mass: str) -> float:
    child = index.get(item)
    if child is None or child.iteration != rec.iteration + 1 or not any(x.decision.choices for x in child.expansions):
        return 1.0
    return math.fsum(_branch(index, child, x, mass) for x in child.expansions)


def _branch(index, rec: DecisionRecord, x: RelationExpansion, mass: str) -> float:
    terms = [es * _continuation(index, rec, item, mass) for item, es in x.decision.choices]
    return x.relation_score * _agg(terms, mass)


def t2(trace: RetrievalTrace, e, r, n: int | None = None, cfg: ExpansionConfig | None = None,
       mass: str = "sum") -> float:
    """Cumulative score of the branch leaving ``e`` through ``r``.

    ``n`` is the layer ``e`` sits in (0 for topic entities); when given it
    must agree with the trace.
    """
    rec, x = _find(trace, e, r)
    cfg = cfg or trace.config
    layer = rec.iteration - 1
    if n is not None and n != layer:
        raise ScoringError(f"entity {rec.entity!r} sits in layer {layer}, not {n}")
    if not 0 <= layer < cfg.iterations:
        raise ScoringError(f"layer {layer} outside 0..{cfg.iterations - 1}")
    return _branch(_index(trace), rec, x, mass)


@dataclass
class PathScore:
    steps: list[tuple[str, str, str]]
    product: float

    def to_json(self) -> dict:
        return {"steps": [list(s) for s in self.steps], "product": self.product}


@dataclass
class SubgraphScore:
    per_topic: dict[str, float] = field(default_factory=dict)
    per_branch: dict[str, dict[str, float]] = field(default_factory=dict)
    total: float = 0.0

    def to_json(self) -> dict:
        return {"total": self.total, "per_topic": self.per_topic, "per_branch": self.per_branch}


def subgraph_score(trace: RetrievalTrace, cfg: ExpansionConfig | None = None, mass: str = "sum") -> SubgraphScore:
    """Sum of branch scores over topic entities and their first-round relations."""
    index = _index(trace)
    score = SubgraphScore()
    for topic in trace.topics:
        rec = index.get(topic)
        branches = {}
        if rec is not None and rec.iteration == 1:
            for x in rec.expansions:
                branches[x.item_id] = _branch(index, rec, x, mass)
        score.per_branch[topic] = branches
        score.per_topic[topic] = math.fsum(branches.values())
    score.total = math.fsum(score.per_topic.values())
    return score


def path_breakdown(trace: RetrievalTrace) -> list[PathScore]:
    """Every selected topic-to-leaf path with its step-weight product."""
    index = _index(trace)
    out: list[PathScore] = []

    def walk(rec: DecisionRecord, prefix: list[tuple[str, str, str]], weight: float) -> None:
        for x in rec.expansions:
            for item, es in x.decision.choices:
                steps = prefix + [(rec.entity, x.item_id, item)]
                w = weight * x.relation_score * es
                child = index.get(item)
                if child is not None and child.iteration == rec.iteration + 1 and any(c.decision.choices for c in child.expansions):
                    walk(child, steps, w)
                else:
                    out.append(PathScore(steps, w))

    for topic in trace.topics:
        rec = index.get(topic)
        if rec is not None and rec.iteration == 1:
            walk(rec, [], 1.0)
    return out


def combined_answer_score(reasoning_confidence: float, sg: SubgraphScore | float) -> float:
    """Answer confidence times the retrieval prior of the subgraph."""
    total = sg.total if isinstance(sg, SubgraphScore) else float(sg)
    if not 0.0 <= reasoning_confidence <= 1.0:
        raise ValueError("reasoning confidence must lie in [0, 1]")
    if total < 0:
        raise ValueError("subgraph score must be non-negative")
    return reasoning_confidence * total
