"""The per-question pipeline, from topic linking to the final answer."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .backend import KgBackend
from .linker import EmbedderPort, LinkingError, TopicEntitySet, link_embedding, link_exact
from .llm import LlmClient
from .reasoner import Answer, reason
from .retrieval import TRACE_SCHEMA, ExpansionConfig, KnowledgeSubgraph, RetrievalError, RetrievalTrace, retrieve_subgraph
from .scoring import SubgraphScore, path_breakdown, subgraph_score
from .selector import Question, Selector


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, partial: "QuestionRun | None" = None):
        super().__init__(message)
        self.stage = stage
        self.partial = partial


@dataclass
class QuestionRun:
    question: Question
    mentions: list[str] = field(default_factory=list)
    topics: TopicEntitySet | None = None
    subgraph: KnowledgeSubgraph | None = None
    trace: RetrievalTrace | None = None
    score: SubgraphScore | None = None
    answer: Answer | None = None

    def to_json(self, include_paths: bool = True) -> dict:
        doc: dict = {
            "schema": TRACE_SCHEMA,
            "question": {"id": self.question.id, "text": self.question.text},
            "mentions": self.mentions,
            "topics": self.topics.to_json() if self.topics else None,
            "subgraph": self.subgraph.to_json()["triples"] if self.subgraph is not None else [],
            "trace": self.trace.to_json() if self.trace is not None else None,
        }
        if self.score is not None:
            scores = self.score.to_json()
            if include_paths and self.trace is not None:
                scores["paths"] = [p.to_json() for p in path_breakdown(self.trace)]
            doc["scores"] = scores
        if self.answer is not None:
            doc["answer"] = self.answer.to_json()
        return doc


@dataclass
class Pipeline:
    backend: KgBackend
    selector: Selector
    llm: LlmClient | None = None
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    linking: str = "exact"
    embedder: EmbedderPort | None = None
    link_threshold: float = 0.6
    link_top_m: int = 1
    template_dir: str | Path | None = None
    model: str = "gpt-3.5-turbo"
    reasoning_temperature: float = 0.0
    seed: int | None = None
    mass: str = "sum"

    def __post_init__(self):
        if self.linking not in ("exact", "embedding"):
            raise ValueError(f"unknown linking method {self.linking!r}")
        if self.linking == "embedding" and self.embedder is None:
            raise ValueError("embedding linking needs an embedder")

    @property
    def selector_name(self) -> str:
        return getattr(self.selector, "name", type(self.selector).__name__)

    @property
    def backend_name(self) -> str:
        return getattr(self.backend, "name", type(self.backend).__name__)

    def with_overrides(self, expansion: ExpansionConfig | None = None, seed: int | None = None) -> "Pipeline":
        return replace(
            self,
            expansion=expansion or self.expansion,
            seed=seed if seed is not None else self.seed,
            selector=self.selector.with_seed(seed) if seed is not None else self.selector,
        )

    def snapshot(self) -> dict:
        return {
            "expansion": self.expansion.snapshot(),
            "linking": self.linking,
            "link_threshold": self.link_threshold,
            "link_top_m": self.link_top_m,
            "model": self.model,
            "reasoning_temperature": self.reasoning_temperature,
            "seed": self.seed,
            "mass": self.mass,
        }

    def link(self, run: QuestionRun) -> None:
        try:
            run.mentions = self.selector.extract_topic_mentions(run.question)
        except Exception as exc:
            raise PipelineError("extraction", str(exc), run) from exc
        if not run.mentions:
            raise PipelineError("initialization", "no topic mentions extracted", run)
        try:
            if self.linking == "embedding":
                run.topics = link_embedding(
                    self.backend, run.mentions, self.embedder, self.link_threshold, self.link_top_m
                )
            else:
                run.topics = link_exact(self.backend, run.mentions)
        except LinkingError as exc:
            raise PipelineError("initialization", str(exc), run) from exc

    def retrieve(self, q: Question, topics: TopicEntitySet | None = None) -> QuestionRun:
        run = QuestionRun(q)
        if topics is None:
            self.link(run)
        else:
            run.topics = topics
        try:
            run.subgraph, run.trace = retrieve_subgraph(self.backend, self.selector, q, run.topics, self.expansion)
        except RetrievalError as exc:
            run.subgraph, run.trace = exc.partial
            raise PipelineError("retrieval", str(exc), run) from exc
        run.score = subgraph_score(run.trace, self.expansion, self.mass)
        return run

    def answer(self, q: Question, topics: TopicEntitySet | None = None) -> QuestionRun:
        if self.llm is None:
            raise PipelineError("reasoning", "no reasoning model configured")
        run = self.retrieve(q, topics)
        try:
            run.answer = reason(
                self.llm, q, run.subgraph, run.score, self.template_dir, self.model,
                self.reasoning_temperature, seed=self.seed,
            )
        except Exception as exc:
            raise PipelineError("reasoning", str(exc), run) from exc
        return run
