"""Synthetic graphs with planted answer paths, and the selectors that probe them.

The planted-path suite makes the width/iteration trade-off testable offline:
every question's answer sits at the end of a gold chain, and a
:class:`NoisySelector` ranks ``gold_rank - 1`` decoy relations above the gold
relation at every on-path entity. Retrieval then needs a relation width of at
least ``gold_rank`` and at least ``path_length`` iterations.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field

from .evaluation import DatasetRecord
from .graph import Direction, EntityId, InMemoryGraph, Literal, RelationId, Triple, XSD
from .llm import LlmRequest, LlmResponse
from .selector import GoldPath, GoldStep, OraclePlan, Question, Selector, SelectorDecision, lexical_mentions

RELATION_POOL = (
    "founder", "capital", "spouse", "mayor", "employer", "author", "birthplace", "owner",
    "parent", "successor", "coach", "director", "member", "sponsor", "neighbor", "rival",
    "mentor", "architect", "publisher", "inventor", "governor", "curator", "pilot", "editor",
)


@dataclass
class PlantedSuite:
    graph: InMemoryGraph
    records: list[DatasetRecord]
    plans: dict[str, OraclePlan]
    decoys: dict[str, list[str]]
    chains: dict[str, tuple[str, list[str]]]
    path_length: int = 2
    gold_rank: int = 2

    def gold_triples(self, record_id: str) -> list[tuple[str, str, str]]:
        path = self.plans[record_id].paths[0]
        return [(src, st.relation, st.entity) for src, st in path.sources()]


def planted_path_suite(
    n_questions: int = 8,
    path_length: int = 2,
    distractors: int = 2,
    gold_rank: int = 2,
    seed: int = 0,
) -> PlantedSuite:
    """Build a graph of disjoint per-question neighbourhoods.

    Each on-path entity carries the gold relation, ``gold_rank - 1`` decoy
    relations and ``distractors`` further relations; decoy and distractor
    targets lead one hop further to fillers, never back onto the gold path.
    """
    if path_length < 1 or gold_rank < 1 or distractors < 0:
        raise ValueError("path_length and gold_rank must be >= 1, distractors >= 0")
    needed = path_length + path_length * (gold_rank - 1 + distractors) + 1
    if needed > len(RELATION_POOL):
        raise ValueError("not enough relation names for this configuration")
    rng = random.Random(seed)
    triples: list[Triple] = []
    labels: dict[str, str] = {}
    records, plans, decoys, chains = [], {}, {}, {}
    for qi in range(n_questions):
        names = rng.sample(RELATION_POOL, needed)
        gold_rels, names = names[:path_length], names[path_length:]
        filler_rel = names.pop()
        nodes = [f"q{qi}_n{j}" for j in range(path_length + 1)]
        labels[nodes[0]] = f"Topic {qi:03d}"
        for j in range(1, path_length):
            labels[nodes[j]] = f"Hop {qi:03d} {j}"
        labels[nodes[-1]] = f"Target {qi:03d}"
        steps = []
        for j in range(path_length):
            src = nodes[j]
            triples.append(Triple(EntityId(src), RelationId(gold_rels[j]), EntityId(nodes[j + 1])))
            steps.append(GoldStep(gold_rels[j], Direction.OUTGOING, nodes[j + 1]))
            decoy_rels = [names.pop() for _ in range(gold_rank - 1)]
            other_rels = [names.pop() for _ in range(distractors)]
            decoys[src] = decoy_rels
            for kind, rels in (("d", decoy_rels), ("x", other_rels)):
                for m, rel in enumerate(rels):
                    side = f"q{qi}_{kind}{j}_{m}"
                    labels[side] = f"Side {qi:03d} {kind}{j}{m}"
                    triples.append(Triple(EntityId(src), RelationId(rel), EntityId(side)))
                    filler = side + "_f"
                    labels[filler] = f"Filler {qi:03d} {kind}{j}{m}"
                    triples.append(Triple(EntityId(side), RelationId(filler_rel), EntityId(filler)))
        rid = f"planted-{qi:03d}"
        rel_labels = [r for r in gold_rels]
        # outermost relation first: "the capital of the founder of X"
        phrase = " of the ".join(reversed(rel_labels))
        text = f'What is the {phrase} of "{labels[nodes[0]]}"?'
        records.append(DatasetRecord(rid, text, [labels[nodes[-1]]]))
        plans[rid] = OraclePlan((GoldPath(nodes[0], tuple(steps)),), (labels[nodes[0]],))
        chains[text] = (labels[nodes[0]], rel_labels)
    graph = InMemoryGraph(triples, labels)
    return PlantedSuite(graph, records, plans, decoys, chains, path_length, gold_rank)


class NoisySelector(Selector):
    """Deterministic selector that prefers planted decoys over gold relations.

    On-path entities rank their decoys first and the gold relation right
    after; everything else follows in id order. Entity choices put gold
    entities first. Raw scores are ``1 / rank`` before normalization.
    """

    name = "noisy"

    def __init__(self, plans: dict[str, OraclePlan], decoys: dict[str, list[str]]):
        self.plans = plans
        self.decoys = decoys
        self._gold: dict[str, set[str]] = {}
        for plan in plans.values():
            for src, st in plan.gold_steps():
                item = st.relation if st.direction is Direction.OUTGOING else "^" + st.relation
                self._gold.setdefault(src, set()).add(item)
        self._gold_entities = {
            (src, st.relation, st.direction): st.entity for p in plans.values() for src, st in p.gold_steps()
        }

    def extract_topic_mentions(self, q: Question) -> list[str]:
        return lexical_mentions(q.text)

    def filter_relations(self, q, e, candidates, k):
        ids = {c.item_id for c in candidates}
        front = [d for d in self.decoys.get(e.id, []) if d in ids]
        front += sorted(i for i in self._gold.get(e.id, ()) if i in ids and i not in front)
        order = front + sorted(ids - set(front))
        return SelectorDecision.from_scores(((i, 1.0 / (n + 1)) for n, i in enumerate(order)), k)

    def filter_entities(self, q, e, r, direction, candidates, i):
        ids = {c.item_id for c in candidates}
        gold = self._gold_entities.get((e.id, r.id, direction))
        order = ([gold] if gold in ids else []) + sorted(ids - {gold})
        return SelectorDecision.from_scores(((x, 1.0 / (n + 1)) for n, x in enumerate(order)), i)


_TRIPLET_LINE = re.compile(r"^\((.+?) - (.+?) - (.+)\)$")


@dataclass
class ChainFollowingLlm:
    """Offline reasoning model that walks a known relation chain through the prompt's triplets.

    It only sees what the prompt shows, so it answers correctly exactly when
    the retrieved subgraph contains the whole chain.
    """

    chains: dict[str, tuple[str, list[str]]]
    calls: int = field(default=0)

    def complete(self, req: LlmRequest) -> LlmResponse:
        self.calls += 1
        user = next(c for r, c in reversed(req.messages) if r == "user")
        qm = re.search(r"^Question: (.+)$", user, re.MULTILINE)
        question = qm.group(1).strip() if qm else ""
        facts: dict[tuple[str, str], str] = {}
        for line in user.splitlines():
            m = _TRIPLET_LINE.match(line.strip())
            if m:
                facts.setdefault((m.group(1), m.group(2)), m.group(3))
        chain = self.chains.get(question)
        if chain is None:
            return LlmResponse("Answer: unknown\nOutput 1: unfamiliar question\nOutput 2:")
        node, rels = chain
        steps = []
        for rel in rels:
            nxt = facts.get((node, rel))
            if nxt is None:
                return LlmResponse(
                    f"Answer: unknown\nOutput 1: no triplet gives the {rel} of {node}\nOutput 2: "
                    + "->".join(steps)
                )
            steps.append(f"({node}-{rel}-{nxt})")
            node = nxt
        steps.append(f"({node})")
        return LlmResponse(f"Answer: {node}\nOutput 1: followed {len(rels)} triplets\nOutput 2: " + "->".join(steps))


def _unit(*parts: object) -> float:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


class RandomSelector(Selector):
    """Pseudo-random but pure selector: the same inputs always give the same decision.

    The number of choices is drawn in ``[0, cap]`` (relations at least one when
    candidates exist) and raw scores are uniform draws.
    """

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def with_seed(self, seed):
        return RandomSelector(seed if seed is not None else self.seed)

    def extract_topic_mentions(self, q):
        return lexical_mentions(q.text)

    def _pick(self, tag: str, ids: list[str], cap: int, allow_empty: bool) -> SelectorDecision:
        if not ids:
            return SelectorDecision()
        lo = 0 if allow_empty else 1
        count = lo + int(_unit(self.seed, tag, "count") * (min(cap, len(ids)) - lo + 1))
        ranked = sorted(ids, key=lambda i: _unit(self.seed, tag, i))[:count]
        return SelectorDecision.from_scores(((i, 0.05 + _unit(self.seed, tag, i, "s")) for i in ranked), cap)

    def filter_relations(self, q, e, candidates, k):
        return self._pick(f"{q.id}|{e.id}", sorted(c.item_id for c in candidates), k, False)

    def filter_entities(self, q, e, r, direction, candidates, i):
        return self._pick(f"{q.id}|{e.id}|{r.id}|{direction.value}", sorted(c.item_id for c in candidates), i, True)


def random_graph(seed: int, n_entities: int = 30, n_triples: int = 80, n_relations: int = 6,
                 literal_fraction: float = 0.1) -> InMemoryGraph:
    """Random multigraph-free triple set with a sprinkling of literal objects."""
    rng = random.Random(seed)
    ents = [f"E{j:03d}" for j in range(n_entities)]
    rels = [f"r{j}" for j in range(n_relations)]
    triples: set[Triple] = set()
    attempts = 0
    while len(triples) < n_triples and attempts < n_triples * 20:
        attempts += 1
        s = rng.choice(ents)
        r = rng.choice(rels)
        if rng.random() < literal_fraction:
            o = Literal(str(rng.randint(1000, 2030)), XSD + "integer")
        else:
            o = EntityId(rng.choice(ents))
        triples.add(Triple(EntityId(s), RelationId(r), o))
    return InMemoryGraph(sorted(triples, key=lambda t: t.as_tuple()))
