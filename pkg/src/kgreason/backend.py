"""Uniform knowledge-graph query interface: relation search and entity search.

Two backends implement it: :class:`InMemoryBackend` over an
:class:`~kgreason.graph.InMemoryGraph` and :class:`SparqlBackend`, which
renders query templates against a SPARQL HTTP endpoint.
"""

from __future__ import annotations

import enum
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import requests

from ._http import USER_AGENT, TransportError, request_json
from .graph import (
    Direction,
    EntityId,
    InMemoryGraph,
    Literal,
    RelationId,
    TripleObject,
    default_label,
    load_labels,
    normalize_label,
)

logger = logging.getLogger(__name__)

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
SPARQL_JSON = "application/sparql-results+json"


class TemplateKind(str, enum.Enum):
    RELATION_SEARCH = "relation_search"
    ENTITY_SEARCH = "entity_search"
    LABEL = "label"
    ENTITY_BY_LABEL = "entity_by_label"


_REQUIRED = {
    TemplateKind.RELATION_SEARCH: {"entity"},
    TemplateKind.ENTITY_SEARCH: {"entity", "relation"},
    TemplateKind.LABEL: {"entity"},
    TemplateKind.ENTITY_BY_LABEL: {"label"},
}


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class QueryTemplate:
    kind: TemplateKind
    text: str

    def __post_init__(self):
        missing = _REQUIRED[self.kind] - self.placeholders
        if missing:
            raise TemplateError(f"{self.kind.value} template lacks placeholder(s): {', '.join(sorted(missing))}")

    @property
    def placeholders(self) -> set[str]:
        return set(PLACEHOLDER_RE.findall(self.text))


def render_query(template: QueryTemplate | str, bindings: dict[str, str]) -> str:
    """Substitute every ``{name}`` placeholder; nothing else is touched."""
    text = template.text if isinstance(template, QueryTemplate) else template
    for name in PLACEHOLDER_RE.findall(text):
        if name not in bindings:
            raise TemplateError(f"no binding for placeholder '{name}'")
    return PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], text)


@dataclass(frozen=True)
class RelationCandidate:
    relation: RelationId
    direction: Direction

    @property
    def item_id(self) -> str:
        # '^' marks an inverse step, as in SPARQL property paths
        if self.direction is Direction.OUTGOING:
            return self.relation.id
        return "^" + self.relation.id

    def sort_key(self) -> tuple[str, str]:
        return (self.relation.id, self.direction.value)


@dataclass(frozen=True)
class EntityCandidate:
    object: TripleObject

    @property
    def item_id(self) -> str:
        return self.object.key

    @property
    def is_literal(self) -> bool:
        return isinstance(self.object, Literal)


class KgBackend(Protocol):
    name: str

    def search_relations(self, e: EntityId) -> set[RelationCandidate]: ...

    def search_entities(self, e: EntityId, r: RelationId, direction: Direction) -> set[EntityCandidate]: ...

    def lookup_by_label(self, label: str) -> set[EntityId]: ...

    def label_universe(self) -> list[EntityId]: ...

    def entity(self, entity_id: str) -> EntityId | None: ...


def sr_search_relations(backend: KgBackend, e: EntityId) -> set[RelationCandidate]:
    return backend.search_relations(e)


def se_search_entities(backend: KgBackend, e: EntityId, r: RelationId, direction: Direction) -> set[EntityCandidate]:
    return backend.search_entities(e, r, direction)


class InMemoryBackend:
    name = "memory"

    def __init__(self, graph: InMemoryGraph):
        self.graph = graph

    def search_relations(self, e: EntityId) -> set[RelationCandidate]:
        found = set()
        for direction in (Direction.OUTGOING, Direction.INCOMING):
            found.update(RelationCandidate(r, direction) for r, _ in self.graph.neighbors(e, direction))
        return found

    def search_entities(self, e: EntityId, r: RelationId, direction: Direction) -> set[EntityCandidate]:
        return {EntityCandidate(o) for rel, o in self.graph.neighbors(e, direction) if rel.id == r.id}

    def lookup_by_label(self, label: str) -> set[EntityId]:
        return self.graph.lookup_by_label(label)

    def label_universe(self) -> list[EntityId]:
        return self.graph.entities()

    def entity(self, entity_id: str) -> EntityId | None:
        return self.graph.entity(entity_id)


TEMPLATE_FILES = {
    (TemplateKind.RELATION_SEARCH, Direction.OUTGOING): "relation_outgoing.rq",
    (TemplateKind.RELATION_SEARCH, Direction.INCOMING): "relation_incoming.rq",
    (TemplateKind.ENTITY_SEARCH, Direction.OUTGOING): "entity_outgoing.rq",
    (TemplateKind.ENTITY_SEARCH, Direction.INCOMING): "entity_incoming.rq",
    (TemplateKind.LABEL, None): "label.rq",
    (TemplateKind.ENTITY_BY_LABEL, None): "entity_by_label.rq",
}

TemplateSet = dict[tuple[TemplateKind, "Direction | None"], QueryTemplate]


def load_templates(directory: str | Path | None = None, preset: str = "generic") -> TemplateSet:
    """Read query templates from ``directory`` or a bundled preset.

    Search templates are required; label templates are optional.
    """
    templates: TemplateSet = {}
    for (kind, direction), fname in TEMPLATE_FILES.items():
        if directory is not None:
            path = Path(directory) / fname
            text = path.read_text(encoding="utf-8") if path.exists() else None
        else:
            res = resources.files("kgreason").joinpath("templates", "sparql", preset, fname)
            text = res.read_text(encoding="utf-8") if res.is_file() else None
        if text is None:
            if kind in (TemplateKind.RELATION_SEARCH, TemplateKind.ENTITY_SEARCH):
                raise TemplateError(f"missing template file {fname}")
            continue
        templates[(kind, direction)] = QueryTemplate(kind, text)
    return templates


# namespaces that pair with each bundled template preset: (entity, relation, relation label)
PRESET_NAMESPACES: dict[str, tuple[str, str, str | None]] = {
    "generic": ("", "", None),
    "wikidata": (
        "http://www.wikidata.org/entity/",
        "http://www.wikidata.org/prop/direct/",
        "http://www.wikidata.org/entity/",
    ),
}


@dataclass
class KgEndpointConfig:
    base_url: str
    timeout: float = 30.0
    max_retries: int = 3
    templates: TemplateSet = field(default_factory=lambda: load_templates())
    entity_namespace: str = ""
    relation_namespace: str = ""
    # namespace used when asking the label template about a relation
    relation_label_namespace: str | None = None
    max_candidates: int = 200
    max_in_flight: int = 4
    method: str = "GET"
    backoff: float = 0.5
    label_dump: str | None = None
    bearer_token_env: str | None = "KGREASON_SPARQL_TOKEN"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


class SparqlError(TransportError):
    pass


def sparql_execute(
    cfg: KgEndpointConfig, query: str, session: requests.Session | None = None
) -> list[dict[str, dict]]:
    """Run ``query`` and return result rows as ``{variable: binding}`` dicts."""
    session = session or requests.Session()
    headers = {"Accept": SPARQL_JSON, "User-Agent": USER_AGENT}
    token = os.environ.get(cfg.bearer_token_env) if cfg.bearer_token_env else None
    if token:
        headers["Authorization"] = f"Bearer {token}"
    if cfg.method.upper() == "POST":
        kwargs = {"data": {"query": query}}
    else:
        kwargs = {"params": {"query": query}}
    try:
        body, _ = request_json(
            session, cfg.method.upper(), cfg.base_url, headers=headers,
            max_retries=cfg.max_retries, timeout=cfg.timeout, backoff=cfg.backoff, **kwargs,
        )
    except TransportError as exc:
        raise SparqlError(str(exc), exc.status, exc.attempts) from exc
    try:
        rows = body["results"]["bindings"]
    except (KeyError, TypeError) as exc:
        raise SparqlError(f"response is not SPARQL JSON results: {str(body)[:200]}") from exc
    if not isinstance(rows, list):
        raise SparqlError("results.bindings is not a list")
    return rows


class SparqlBackend:
    """Templates-driven client for a SPARQL endpoint.

    Ids are namespace-relative: ``Q884`` with entity namespace
    ``http://www.wikidata.org/entity/`` is sent as the full IRI.
    """

    name = "sparql"

    def __init__(self, cfg: KgEndpointConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(cfg.max_in_flight)
        self._labels: dict[str, str | None] = {}
        self._labels_lock = threading.Lock()
        self._dump: dict[str, str] | None = load_labels(cfg.label_dump) if cfg.label_dump else None

    def _execute(self, query: str) -> list[dict[str, dict]]:
        with self._gate:
            return sparql_execute(self.cfg, query, self.session)

    def _query(self, kind: TemplateKind, direction: Direction | None, **bindings: str) -> list[dict[str, dict]]:
        template = self.cfg.templates.get((kind, direction))
        if template is None:
            raise TemplateError(f"no {kind.value} template configured")
        bindings.setdefault("direction", direction.value if direction else "")
        bindings.setdefault("entity_namespace", self.cfg.entity_namespace)
        bindings.setdefault("relation_namespace", self.cfg.relation_namespace)
        return self._execute(render_query(template, bindings))

    @staticmethod
    def _to_iri(ident: str, namespace: str) -> str:
        if not namespace or "://" in ident:
            return ident
        return namespace + ident

    @staticmethod
    def _from_iri(iri: str, namespace: str) -> str:
        if namespace and iri.startswith(namespace) and len(iri) > len(namespace):
            return iri[len(namespace):]
        return iri

    def _binding_to_object(self, b: dict) -> TripleObject | None:
        kind = b.get("type")
        value = b.get("value")
        if value is None:
            raise SparqlError(f"binding without value: {b}")
        if kind == "uri":
            return self._entity(self._from_iri(value, self.cfg.entity_namespace))
        if kind == "bnode":
            return self._entity("_:" + value)
        if kind in ("literal", "typed-literal"):
            return Literal(value, b.get("datatype"))
        raise SparqlError(f"unknown binding type {kind!r}")

    def _fetch_label(self, iri: str) -> str | None:
        if (TemplateKind.LABEL, None) not in self.cfg.templates:
            return None
        try:
            rows = self._query(TemplateKind.LABEL, None, entity=iri)
        except SparqlError as exc:
            logger.warning("label lookup for %s failed: %s", iri, exc)
            return None
        labels = sorted(r["label"]["value"] for r in rows if "label" in r)
        return labels[0] if labels else None

    def _label(self, key: str, iri: str) -> str | None:
        with self._labels_lock:
            if key in self._labels:
                return self._labels[key]
        label = self._dump.get(key) if self._dump else None
        if label is None:
            label = self._fetch_label(iri)
        with self._labels_lock:
            self._labels[key] = label
        return label

    def _entity(self, ident: str) -> EntityId:
        label = self._label("e:" + ident, self._to_iri(ident, self.cfg.entity_namespace))
        return EntityId(ident, label or default_label(ident))

    def _relation(self, ident: str) -> RelationId:
        ns = self.cfg.relation_label_namespace
        iri = self._to_iri(ident, ns if ns is not None else self.cfg.relation_namespace)
        label = self._label("r:" + ident, iri)
        return RelationId(ident, label or default_label(ident))

    def search_relations(self, e: EntityId) -> set[RelationCandidate]:
        iri = self._to_iri(e.id, self.cfg.entity_namespace)
        pairs: set[tuple[str, Direction]] = set()
        for direction in (Direction.OUTGOING, Direction.INCOMING):
            for row in self._query(TemplateKind.RELATION_SEARCH, direction, entity=iri):
                b = row.get("relation")
                if b is None or b.get("type") != "uri":
                    continue
                pairs.add((self._from_iri(b["value"], self.cfg.relation_namespace), direction))
        kept = sorted(pairs, key=lambda p: (p[0], p[1].value))[: self.cfg.max_candidates]
        if len(kept) < len(pairs):
            logger.info("truncated %d relation candidates of %s to %d", len(pairs), e.id, len(kept))
        return {RelationCandidate(self._relation(rid), d) for rid, d in kept}

    def search_entities(self, e: EntityId, r: RelationId, direction: Direction) -> set[EntityCandidate]:
        rows = self._query(
            TemplateKind.ENTITY_SEARCH, direction,
            entity=self._to_iri(e.id, self.cfg.entity_namespace),
            relation=self._to_iri(r.id, self.cfg.relation_namespace),
        )
        raw = {}
        for row in rows:
            b = row.get("entity")
            if b is None:
                continue
            if direction is Direction.INCOMING and b.get("type") not in ("uri", "bnode"):
                continue
            raw[(b.get("type"), b["value"], b.get("datatype"))] = b
        keys = sorted(raw, key=lambda k: (k[1], k[0] or "", k[2] or ""))[: self.cfg.max_candidates]
        out = set()
        for k in keys:
            obj = self._binding_to_object(raw[k])
            if obj is not None:
                out.add(EntityCandidate(obj))
        return out

    def lookup_by_label(self, label: str) -> set[EntityId]:
        wanted = normalize_label(label)
        if self._dump is not None:
            return {self._entity(i) for i, lab in self._dump.items() if normalize_label(lab) == wanted}
        if (TemplateKind.ENTITY_BY_LABEL, None) not in self.cfg.templates:
            return set()
        text = " ".join(label.replace("_", " ").split())
        escaped = text.replace("\\", "\\\\").replace('"', '\\"')
        rows = self._query(TemplateKind.ENTITY_BY_LABEL, None, label=escaped)
        return {
            self._entity(self._from_iri(r["entity"]["value"], self.cfg.entity_namespace))
            for r in rows
            if r.get("entity", {}).get("type") == "uri"
        }

    def label_universe(self) -> list[EntityId]:
        if self._dump is None:
            raise TemplateError("embedding linking over SPARQL needs a label dump file")
        return [EntityId(i, lab) for i, lab in sorted(self._dump.items())]

    def entity(self, entity_id: str) -> EntityId | None:
        return self._entity(entity_id)
