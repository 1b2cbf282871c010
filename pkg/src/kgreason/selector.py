"""Selectors: who decides which relations and entities the beam keeps.

Three implementations share one interface:

* :class:`LexicalSelector` ranks by token overlap with the question.
* :class:`OracleSelector` knows planted gold paths; used to bound retrieval.
* :class:`LlmSelector` asks a chat model and parses a scored JSON list.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backend import EntityCandidate, RelationCandidate
from .graph import Direction, EntityId, Literal, RelationId
from .llm import SELECTION_MAX_TOKENS, LlmClient, LlmRequest
from .prompts import load_prompt, render_prompt

logger = logging.getLogger(__name__)

MAX_MENTIONS = 8
_TOKEN_RE = re.compile(r"[^\W_]+")

STOPWORDS = frozenset(
    """a an and are as at be by did do does for from had has have how i if in is it its
    me my of on or so than that the their them then there these they this to was we
    were what when where which who whom whose why will with would you your now many
    much""".split()
)


class SelectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("question text must be non-empty")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


@dataclass(frozen=True)
class SelectorDecision:
    """Ranked shortlist: ``choices`` is ``((item_id, score), ...)``.

    Scores sum to one when there are choices; order is descending score,
    then ascending item id.
    """

    choices: tuple[tuple[str, float], ...] = ()
    rationale: str | None = None
    notes: tuple[str, ...] = ()

    @classmethod
    def from_scores(
        cls,
        scored: Iterable[tuple[str, float]],
        cap: int,
        rationale: str | None = None,
        notes: Sequence[str] = (),
    ) -> "SelectorDecision":
        ranked = sorted(scored, key=lambda p: (-p[1], p[0]))[:cap]
        total = math.fsum(s for _, s in ranked)
        if ranked and total > 0:
            choices = tuple((i, s / total) for i, s in ranked)
        elif ranked:
            choices = tuple((i, 1.0 / len(ranked)) for i, _ in ranked)
        else:
            choices = ()
        # renormalizing can reorder nothing, but ties must stay id-ascending
        choices = tuple(sorted(choices, key=lambda p: (-p[1], p[0])))
        return cls(choices, rationale, tuple(notes))

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.choices]

    @property
    def mass(self) -> float:
        return math.fsum(s for _, s in self.choices)

    def score_of(self, item_id: str) -> float:
        for i, s in self.choices:
            if i == item_id:
                return s
        return 0.0

    def check(self, offered: Iterable[str], cap: int) -> None:
        """Raise AssertionError when a type invariant is broken."""
        offered = set(offered)
        assert len(self.choices) <= cap, "cap exceeded"
        assert len(set(self.ids)) == len(self.ids), "duplicate choice"
        assert set(self.ids) <= offered, "choice was not offered"
        assert all(0.0 <= s <= 1.0 for _, s in self.choices), "score outside [0, 1]"
        if self.choices:
            assert abs(self.mass - 1.0) <= 1e-9, "scores do not sum to 1"
        assert list(self.choices) == sorted(self.choices, key=lambda p: (-p[1], p[0])), "bad order"

    def to_json(self) -> dict:
        doc: dict = {"choices": [[i, s] for i, s in self.choices]}
        if self.rationale:
            doc["rationale"] = self.rationale
        if self.notes:
            doc["notes"] = list(self.notes)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SelectorDecision":
        return cls(
            tuple((i, float(s)) for i, s in doc.get("choices", [])),
            doc.get("rationale"),
            tuple(doc.get("notes", ())),
        )


def tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.casefold()))


def lexical_score(question_text: str, item_label: str) -> float:
    """Jaccard overlap of the casefolded word sets (underscores split words)."""
    a, b = tokens(question_text), tokens(item_label)
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def relation_label(c: RelationCandidate) -> str:
    return c.relation.display


def entity_label(c: EntityCandidate) -> str:
    return c.object.display


def capitalized_spans(text: str) -> list[str]:
    """Quoted spans and maximal runs of capitalized words, in order of appearance."""
    spans: list[str] = []
    quoted = list(re.finditer(r'"([^"]+)"|“([^”]+)”', text))
    for m in quoted:
        spans.append((m.group(1) or m.group(2)).strip())
    rest = text
    for m in reversed(quoted):
        rest = rest[: m.start()] + " | " + rest[m.end():]
    words = re.findall(r"[\w'’.-]+|[^\w\s]", rest)
    run: list[str] = []
    linker_words = {"of", "de", "the", "and"}

    def flush():
        while run and run[-1].lower() in linker_words:
            run.pop()
        if run:
            spans.append(" ".join(run))
        run.clear()

    for w in words:
        w_clean = w.rstrip(".")
        if w_clean[:1].isupper() or (w_clean[:1].isdigit() and run):
            if not run and w_clean.lower() in STOPWORDS:
                continue
            run.append(w_clean)
        elif run and w_clean.lower() in linker_words:
            run.append(w_clean)
        else:
            flush()
    flush()
    return spans


def _dedupe(items: Iterable[str], limit: int = MAX_MENTIONS) -> list[str]:
    seen: set[str] = set()
    out = []
    for it in items:
        it = " ".join(it.split())
        key = it.casefold()
        if it and key not in seen:
            seen.add(key)
            out.append(it)
        if len(out) == limit:
            break
    return out


def lexical_mentions(text: str) -> list[str]:
    spans = _dedupe(capitalized_spans(text))
    if spans:
        return spans
    content = [w for w in re.findall(r"[^\W_]+", text) if w.casefold() not in STOPWORDS and len(w) > 2]
    spans = _dedupe(content)
    return spans or _dedupe([text.strip()])


class Selector:
    name = "base"

    def extract_topic_mentions(self, q: Question) -> list[str]:
        raise NotImplementedError

    def filter_relations(
        self, q: Question, e: EntityId, candidates: set[RelationCandidate], k: int
    ) -> SelectorDecision:
        raise NotImplementedError

    def filter_entities(
        self, q: Question, e: EntityId, r: RelationId, direction: Direction,
        candidates: set[EntityCandidate], i: int,
    ) -> SelectorDecision:
        raise NotImplementedError

    def with_seed(self, seed: int | None) -> "Selector":
        return self


def _check_width(n: int, name: str) -> None:
    if n < 1:
        raise ValueError(f"{name} must be >= 1")


class LexicalSelector(Selector):
    """Deterministic ranking by :func:`lexical_score` against the question."""

    name = "lexical"

    def extract_topic_mentions(self, q: Question) -> list[str]:
        return lexical_mentions(q.text)

    def filter_relations(self, q, e, candidates, k):
        _check_width(k, "k")
        return SelectorDecision.from_scores(
            ((c.item_id, lexical_score(q.text, relation_label(c))) for c in candidates), k
        )

    def filter_entities(self, q, e, r, direction, candidates, i):
        _check_width(i, "i")
        return SelectorDecision.from_scores(
            ((c.item_id, lexical_score(q.text, entity_label(c))) for c in candidates), i
        )


@dataclass(frozen=True)
class GoldStep:
    relation: str
    direction: Direction
    entity: str

    @property
    def target_key(self) -> str:
        return self.entity


@dataclass(frozen=True)
class GoldPath:
    """A planted chain ``start -r1-> e1 -r2-> e2 ...``; ``entity`` may be a literal key."""

    start: str
    steps: tuple[GoldStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("gold path must have at least one step")

    def sources(self) -> list[tuple[str, GoldStep]]:
        out = []
        src = self.start
        for st in self.steps:
            out.append((src, st))
            src = st.entity
        return out


@dataclass(frozen=True)
class OraclePlan:
    paths: tuple[GoldPath, ...]
    mentions: tuple[str, ...] = ()

    def gold_steps(self) -> list[tuple[str, GoldStep]]:
        return [pair for p in self.paths for pair in p.sources()]

    @classmethod
    def from_json(cls, doc: dict) -> "OraclePlan":
        paths = []
        for p in doc["paths"]:
            steps = tuple(GoldStep(s[0], Direction(s[1]), s[2]) for s in p["steps"])
            paths.append(GoldPath(p["start"], steps))
        return cls(tuple(paths), tuple(doc.get("mentions", ())))

    def to_json(self) -> dict:
        doc = {
            "paths": [
                {"start": p.start, "steps": [[s.relation, s.direction.value, s.entity] for s in p.steps]}
                for p in self.paths
            ]
        }
        if self.mentions:
            doc["mentions"] = list(self.mentions)
        return doc


def load_oracle_plans(path: str | Path) -> dict[str, OraclePlan]:
    """Read ``{question id or text: plan}`` from JSON."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: OraclePlan.from_json(v) for k, v in doc.items()}


class OracleSelector(Selector):
    """Selects exactly the planted gold steps, uniformly weighted.

    Relation decisions are padded with zero-scored off-path candidates up to
    ``min(k, |candidates|)``; off-path entities are never chosen, so padding
    adds no triples.
    """

    name = "oracle"

    def __init__(self, plans: dict[str, OraclePlan]):
        self.plans = dict(plans)

    def _plan(self, q: Question) -> OraclePlan | None:
        return self.plans.get(q.id) or self.plans.get(q.text)

    def extract_topic_mentions(self, q):
        plan = self._plan(q)
        if plan is None:
            raise SelectorError(f"oracle has no plan for question {q.id!r}")
        if plan.mentions:
            return list(plan.mentions)
        return _dedupe(p.start.replace("_", " ") for p in plan.paths)

    def filter_relations(self, q, e, candidates, k):
        _check_width(k, "k")
        plan = self._plan(q)
        if plan is None or not candidates:
            return SelectorDecision()
        gold = {
            (st.relation, st.direction) for src, st in plan.gold_steps() if src == e.id
        }
        on_path = sorted(c.item_id for c in candidates if (c.relation.id, c.direction) in gold)
        if not on_path:
            return SelectorDecision()
        on_path = on_path[:k]
        width = min(k, len(candidates))
        pad = sorted(c.item_id for c in candidates if c.item_id not in on_path)[: width - len(on_path)]
        scored = [(i, 1.0) for i in on_path] + [(i, 0.0) for i in pad]
        return SelectorDecision.from_scores(scored, width)

    def filter_entities(self, q, e, r, direction, candidates, i):
        _check_width(i, "i")
        plan = self._plan(q)
        if plan is None:
            return SelectorDecision()
        gold = {
            st.entity for src, st in plan.gold_steps()
            if src == e.id and st.relation == r.id and st.direction is direction
        }
        hits = sorted(c.item_id for c in candidates if c.item_id in gold)[:i]
        return SelectorDecision.from_scores(((h, 1.0) for h in hits), i)


def _find_json_array(text: str):
    start = text.find("[")
    end = text.rfind("]")
    if start < 0 or end < start:
        raise ValueError("no JSON array in reply")
    return json.loads(text[start : end + 1])


def parse_scored_reply(text: str, offered: set[str], cap: int) -> SelectorDecision:
    """Parse ``[{"id": ..., "score": ...}]``; scores are clipped to [0,1] and renormalized."""
    data = _find_json_array(text)
    if not isinstance(data, list):
        raise ValueError("reply is not a JSON array")
    scored: dict[str, float] = {}
    unknown = 0
    for item in data:
        if isinstance(item, str):
            item_id, score = item, 1.0
        elif isinstance(item, dict) and "id" in item:
            item_id = str(item["id"])
            try:
                score = float(item.get("score", 1.0))
            except (TypeError, ValueError):
                raise ValueError(f"non-numeric score for {item_id!r}")
            if math.isnan(score):
                raise ValueError(f"NaN score for {item_id!r}")
        else:
            raise ValueError(f"unexpected array element {item!r}")
        if item_id not in offered:
            unknown += 1
            continue
        scored[item_id] = max(scored.get(item_id, 0.0), min(1.0, max(0.0, score)))
    if data and not scored:
        raise ValueError("none of the returned ids were offered")
    notes = (f"dropped {unknown} unknown id(s)",) if unknown else ()
    return SelectorDecision.from_scores(scored.items(), cap, notes=notes)


def parse_mentions(text: str) -> list[str]:
    try:
        data = _find_json_array(text)
    except ValueError:
        data = None
    if isinstance(data, list) and all(isinstance(x, str) for x in data):
        items = data
    else:
        lines = [ln.strip(" -*\t") for ln in text.splitlines() if ln.strip()]
        if len(lines) == 1:
            items = re.split(r"[;,]", lines[0].split(":", 1)[-1])
        else:
            items = lines
        items = [it.strip().strip('"') for it in items]
    mentions = _dedupe(items)
    if not mentions:
        raise ValueError("no mentions in reply")
    return mentions


@dataclass
class LlmSelector(Selector):
    """Delegates every decision to a chat model.

    Replies that cannot be parsed get one corrective reprompt; a second
    failure falls back to lexical scoring and says so in the decision notes.
    """

    llm: LlmClient
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.4
    seed: int | None = None
    prompt_budget: int = 60
    template_dir: str | Path | None = None
    max_tokens: int = SELECTION_MAX_TOKENS
    name: str = field(default="llm", init=False)

    def with_seed(self, seed):
        return LlmSelector(
            self.llm, self.model, self.temperature, seed, self.prompt_budget, self.template_dir, self.max_tokens
        )

    def _ask(self, prompt: str, parse):
        messages = [("user", prompt)]
        reply = ""
        for attempt in range(2):
            req = LlmRequest(self.model, tuple(messages), self.temperature, self.max_tokens, self.seed)
            reply = self.llm.complete(req).content
            try:
                return parse(reply), attempt
            except ValueError as exc:
                problem = str(exc)
                logger.info("unparseable selector reply (%s); attempt %d", problem, attempt + 1)
                correction = render_prompt(load_prompt("format_correction.txt", self.template_dir), problem=problem)
                messages = messages + [("assistant", reply), ("user", correction)]
        return None, 2

    def extract_topic_mentions(self, q):
        prompt = render_prompt(load_prompt("extraction.txt", self.template_dir), ("question",), question=q.text)
        mentions, _ = self._ask(prompt, parse_mentions)
        if mentions is None:
            raise SelectorError("topic extraction reply unparseable after one reprompt")
        return mentions

    def _prune(self, q: Question, labelled: list[tuple[str, str]]) -> tuple[list[tuple[str, str]], list[str]]:
        if len(labelled) <= self.prompt_budget:
            return labelled, []
        ranked = sorted(labelled, key=lambda p: (-lexical_score(q.text, p[1]), p[0]))
        return ranked[: self.prompt_budget], [f"pruned {len(labelled)}->{self.prompt_budget} by lexical score"]

    def _decide(self, q, template_name, labelled, cap, **values) -> SelectorDecision:
        if not labelled:
            return SelectorDecision()
        shown, notes = self._prune(q, sorted(labelled))
        offered = {i for i, _ in shown}
        listing = "\n".join(f"- {i}: {lab}" for i, lab in shown)
        prompt = render_prompt(
            load_prompt(template_name, self.template_dir), ("question", "candidates", "k"),
            question=q.text, candidates=listing, k=cap, **values,
        )
        decision, attempts = self._ask(prompt, lambda text: parse_scored_reply(text, offered, cap))
        if decision is None:
            notes.append("fallback:lexical after unparseable replies")
            return SelectorDecision.from_scores(
                ((i, lexical_score(q.text, lab)) for i, lab in shown), cap, notes=notes
            )
        if attempts:
            notes.append("reprompted once")
        return SelectorDecision(decision.choices, decision.rationale, tuple(notes) + decision.notes)

    def filter_relations(self, q, e, candidates, k):
        _check_width(k, "k")
        labelled = []
        for c in candidates:
            arrow = f"{e.display} -> ?" if c.direction is Direction.OUTGOING else f"? -> {e.display}"
            labelled.append((c.item_id, f"{relation_label(c)} ({arrow})"))
        return self._decide(q, "relation_filter.txt", labelled, k, entity=e.display)

    def filter_entities(self, q, e, r, direction, candidates, i):
        _check_width(i, "i")
        labelled = []
        for c in candidates:
            lab = entity_label(c)
            if isinstance(c.object, Literal):
                lab += " (value)"
            labelled.append((c.item_id, lab))
        return self._decide(q, "entity_filter.txt", labelled, i, entity=e.display, relation=r.display)


def extract_topic_mentions(sel: Selector, q: Question) -> list[str]:
    return sel.extract_topic_mentions(q)


def filter_relations(sel: Selector, q: Question, e: EntityId, candidates: set[RelationCandidate], k: int):
    return sel.filter_relations(q, e, candidates, k)


def filter_entities(sel, q, e, r, direction, candidates, i):
    return sel.filter_entities(q, e, r, direction, candidates, i)
