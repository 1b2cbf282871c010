"""Reasoning over the retrieved subgraph and parsing the model's reply.

Replies follow the three-part layout::

    Answer: People Power Party
    Output 1: <explanation>
    Output 2: (South Korea-head of government-Yoon Suk Yeol)->...->(People Power Party)

Path steps are checked against the subgraph; steps the model added from its
own knowledge are flagged, never merged into the subgraph.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .graph import EntityId, Literal, Triple
from .llm import REASONING_MAX_TOKENS, LlmClient, LlmRequest
from .prompts import load_prompt, render_prompt
from .retrieval import KnowledgeSubgraph
from .scoring import SubgraphScore, combined_answer_score
from .selector import Question

EMPTY_SENTINEL = "(no retrieved knowledge)"

_ANSWER_RE = re.compile(r"Answer\s*:", re.IGNORECASE)
_OUT1_RE = re.compile(r"Output\s*1\s*:", re.IGNORECASE)
_OUT2_RE = re.compile(r"Output\s*2\s*:", re.IGNORECASE)
_CONF_RE = re.compile(r"^[ \t]*Confidence\s*:\s*([0-9]*\.?[0-9]+)[ \t]*$", re.IGNORECASE | re.MULTILINE)
_DASH_RE = re.compile(r"\s*-\s*")
_WS_RE = re.compile(r"\s+")


class ReasoningError(RuntimeError):
    pass


class AnswerParseError(ValueError):
    pass


@dataclass(frozen=True)
class PathStep:
    text: str
    parts: tuple[str, ...]
    parenthesized: bool = True

    def render(self) -> str:
        return f"({self.text})" if self.parenthesized else self.text


@dataclass
class Answer:
    answer_text: str
    explanation: str = ""
    path: list[PathStep] = field(default_factory=list)
    path_in_subgraph: list[bool] = field(default_factory=list)
    combined_score: float = 0.0
    reasoning_confidence: float | None = None

    def to_json(self) -> dict:
        flags = self.path_in_subgraph or [False] * len(self.path)
        return {
            "answer": self.answer_text,
            "explanation": self.explanation,
            "path": [
                {"step": s.text, "parts": list(s.parts), "in_subgraph": f} for s, f in zip(self.path, flags)
            ],
            "combined_score": self.combined_score,
            "reasoning_confidence": self.reasoning_confidence,
        }


@dataclass(frozen=True)
class ReasoningPrompt:
    system: str
    user: str
    triplet_lines: tuple[str, ...]


def _triple_labels(triples: list[Triple]) -> dict[str, str]:
    """Display text per entity id, appending the id where labels collide."""
    owners: dict[str, set[str]] = defaultdict(set)
    ents: dict[str, EntityId] = {}
    for t in triples:
        for e in (t.subject, t.object):
            if isinstance(e, EntityId):
                ents[e.id] = e
                owners[e.display].add(e.id)
            else:
                owners[e.text].add('"')
    return {
        eid: (e.display if len(owners[e.display]) == 1 else f"{e.display} [{eid}]") for eid, e in ents.items()
    }


def _relation_labels(triples: list[Triple]) -> dict[str, str]:
    owners: dict[str, set[str]] = defaultdict(set)
    for t in triples:
        owners[t.relation.display].add(t.relation.id)
    return {
        t.relation.id: (t.relation.display if len(owners[t.relation.display]) == 1
                        else f"{t.relation.display} [{t.relation.id}]")
        for t in triples
    }


def render_triplets(g: KnowledgeSubgraph) -> list[str]:
    triples = g.triples
    ent = _triple_labels(triples)
    rel = _relation_labels(triples)
    lines = []
    for t in triples:
        obj = t.object.text if isinstance(t.object, Literal) else ent[t.object.id]
        lines.append(f"({ent[t.subject.id]} - {rel[t.relation.id]} - {obj})")
    return lines


def build_reasoning_prompt(
    q: Question, g: KnowledgeSubgraph, template_dir: str | Path | None = None
) -> ReasoningPrompt:
    lines = render_triplets(g)
    block = "\n".join(lines) if lines else EMPTY_SENTINEL
    user = render_prompt(
        load_prompt("reasoning_user.txt", template_dir), ("question", "triplets"),
        question=q.text, triplets=block,
    )
    system = load_prompt("reasoning_system.txt", template_dir).strip()
    return ReasoningPrompt(system, user, tuple(lines))


def _canon(text: str) -> str:
    return _DASH_RE.sub("-", _WS_RE.sub(" ", text).strip())


def _split_parts(inner: str) -> tuple[str, ...]:
    if " - " in inner:
        return tuple(p.strip() for p in inner.split(" - ", 2))
    return tuple(p.strip() for p in inner.split("-", 2))


def _parse_path(chain: str) -> list[PathStep]:
    chain = chain.strip()
    if not chain:
        return []
    steps = []
    for unit in chain.split("->"):
        unit = unit.strip().rstrip(".").strip()
        if not unit:
            continue
        m = re.fullmatch(r"\((.*)\)", unit, re.DOTALL)
        inner = (m.group(1) if m else unit).strip()
        steps.append(PathStep(inner, _split_parts(inner), bool(m)))
    return steps


def parse_answer(reply: str) -> Answer:
    """Split a reply into its labelled sections."""
    m = _ANSWER_RE.search(reply)
    if m is None:
        raise AnswerParseError("no 'Answer:' line in reply")
    conf = None
    cm = _CONF_RE.search(reply)
    if cm:
        conf = min(1.0, max(0.0, float(cm.group(1))))
        reply = reply[: cm.start()] + reply[cm.end():]
        m = _ANSWER_RE.search(reply)
    rest = reply[m.end():]
    o1 = _OUT1_RE.search(rest)
    o2 = _OUT2_RE.search(rest)
    nl = rest.find("\n")
    ends = [p for p in (o1.start() if o1 else -1, o2.start() if o2 else -1, nl) if p >= 0]
    answer = rest[: min(ends)] if ends else rest
    answer = answer.strip()
    if not answer:
        raise AnswerParseError("empty answer")
    explanation = ""
    if o1:
        stop = o2.start() if o2 and o2.start() > o1.end() else len(rest)
        explanation = rest[o1.end(): stop].strip()
    path = _parse_path(rest[o2.end():]) if o2 else []
    return Answer(answer, explanation, path, reasoning_confidence=conf)


def render_reply(answer: str, explanation: str, path: list[str]) -> str:
    """Inverse of :func:`parse_answer` for well-formed inputs."""
    chain = "->".join(f"({p})" for p in path)
    return f"Answer: {answer}\nOutput 1: {explanation}\nOutput 2: {chain}."


def _forms(e) -> set[str]:
    if isinstance(e, Literal):
        return {e.text}
    return {e.id, e.display, f"{e.display} [{e.id}]"}


def match_step(step: PathStep, g: KnowledgeSubgraph) -> Triple | None:
    """The triple of ``g`` a path step names, tolerant only to label/id and whitespace."""
    target = _canon(step.text)
    for t in g.triples:
        rel_forms = {t.relation.id, t.relation.display, f"{t.relation.display} [{t.relation.id}]"}
        for s in _forms(t.subject):
            for r in rel_forms:
                for o in _forms(t.object):
                    if _canon(f"{s}-{r}-{o}") == target:
                        return t
    return None


def flag_path(answer: Answer, g: KnowledgeSubgraph) -> list[bool]:
    return [match_step(s, g) is not None for s in answer.path]


def reason(
    llm: LlmClient,
    q: Question,
    g: KnowledgeSubgraph,
    sg: SubgraphScore,
    template_dir: str | Path | None = None,
    model: str = "gpt-3.5-turbo",
    temperature: float = 0.0,
    max_tokens: int = REASONING_MAX_TOKENS,
    seed: int | None = None,
) -> Answer:
    """Ask the reasoning model once (plus one corrective reprompt) and score the answer."""
    prompt = build_reasoning_prompt(q, g, template_dir)
    messages = [("system", prompt.system), ("user", prompt.user)]
    answer = None
    for attempt in range(2):
        reply = llm.complete(LlmRequest(model, tuple(messages), temperature, max_tokens, seed)).content
        try:
            answer = parse_answer(reply)
            break
        except AnswerParseError:
            if attempt == 1:
                raise ReasoningError("reasoning reply unparseable after one reprompt")
            correction = load_prompt("reasoning_correction.txt", template_dir).strip()
            messages += [("assistant", reply), ("user", correction)]
    assert answer is not None
    answer.path_in_subgraph = flag_path(answer, g)
    conf = answer.reasoning_confidence if answer.reasoning_confidence is not None else 1.0
    answer.combined_score = combined_answer_score(conf, sg)
    return answer
