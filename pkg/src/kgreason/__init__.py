"""LLM-guided beam search over knowledge graphs with traceable reasoning."""

from __future__ import annotations

__version__ = "0.1.0"

from .graph import Direction, EntityId, InMemoryGraph, Literal, RelationId, Triple, load_tsv  # noqa: E402
from .backend import InMemoryBackend, KgEndpointConfig, SparqlBackend  # noqa: E402
from .retrieval import ExpansionConfig, KnowledgeSubgraph, RetrievalTrace, retrieve_subgraph  # noqa: E402
from .scoring import subgraph_score  # noqa: E402
from .selector import LexicalSelector, OracleSelector, Question, SelectorDecision  # noqa: E402
from .pipeline import Pipeline, PipelineError  # noqa: E402

__all__ = [
    "Direction", "EntityId", "ExpansionConfig", "InMemoryBackend", "InMemoryGraph", "KgEndpointConfig",
    "KnowledgeSubgraph", "LexicalSelector", "Literal", "OracleSelector", "Pipeline", "PipelineError",
    "Question", "RelationId", "RetrievalTrace", "SelectorDecision", "SparqlBackend", "Triple",
    "load_tsv", "retrieve_subgraph", "subgraph_score",
]
