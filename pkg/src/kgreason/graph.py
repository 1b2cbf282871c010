"""Graph value types and the in-memory triple store."""

from __future__ import annotations

import enum
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Union

XSD = "http://www.w3.org/2001/XMLSchema#"

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATETIME_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?$"
)
_INTEGER_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")
_QUOTED_RE = re.compile(r'^"(.*)"(?:\^\^<?([^<>]+)>?)?$', re.DOTALL)
_WS_RE = re.compile(r"\s+")


class GraphFormatError(ValueError):
    """A triple or label file line could not be parsed."""

    def __init__(self, path: str | Path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def normalize_label(text: str) -> str:
    """Casefold and collapse whitespace, treating underscores as spaces."""
    return _WS_RE.sub(" ", text.replace("_", " ")).strip().casefold()


def default_label(identifier: str) -> str:
    return identifier.replace("_", " ")


@dataclass(frozen=True)
class EntityId:
    id: str
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("entity id must be non-empty")

    @property
    def display(self) -> str:
        return self.label if self.label else self.id

    @property
    def key(self) -> str:
        return self.id


@dataclass(frozen=True)
class RelationId:
    id: str
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("relation id must be non-empty")

    @property
    def display(self) -> str:
        return self.label if self.label else self.id


@dataclass(frozen=True)
class Literal:
    """A terminal triple object such as a date or a number."""

    text: str
    datatype: str | None = None

    @property
    def display(self) -> str:
        return self.text

    @property
    def key(self) -> str:
        # entity ids never start with a double quote, so keys cannot collide
        if self.datatype:
            return f'"{self.text}"^^{self.datatype}'
        return f'"{self.text}"'


TripleObject = Union[EntityId, Literal]


class Direction(str, enum.Enum):
    OUTGOING = "out"
    INCOMING = "in"

    @property
    def flipped(self) -> "Direction":
        return Direction.INCOMING if self is Direction.OUTGOING else Direction.OUTGOING


@dataclass(frozen=True)
class Triple:
    subject: EntityId
    relation: RelationId
    object: TripleObject

    def __post_init__(self):
        if isinstance(self.object, Literal) and self.object.text == "" and self.object.datatype is None:
            raise ValueError("literal object must be non-empty")

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.subject.id, self.relation.id, self.object.key)


def object_key(obj: TripleObject) -> str:
    return obj.key


def parse_object(field_text: str) -> TripleObject:
    """Classify a TSV object field as Literal or Entity."""
    m = _QUOTED_RE.match(field_text)
    if m:
        return Literal(m.group(1), m.group(2))
    if _DATETIME_RE.match(field_text):
        return Literal(field_text, XSD + "dateTime")
    if _DATE_RE.match(field_text):
        return Literal(field_text, XSD + "date")
    if _INTEGER_RE.match(field_text):
        return Literal(field_text, XSD + "integer")
    if _DECIMAL_RE.match(field_text):
        return Literal(field_text, XSD + "decimal")
    return EntityId(field_text)


class InMemoryGraph:
    """Set of triples indexed by direction and by label.

    The graph is built once and not mutated afterwards, so concurrent reads
    need no locking.
    """

    def __init__(self, triples: Iterable[Triple] = (), labels: dict[str, str] | None = None):
        self._labels = dict(labels or {})
        self._entities: dict[str, EntityId] = {}
        self._relations: dict[str, RelationId] = {}
        self._triples: dict[tuple[str, str, str], Triple] = {}
        self._forward: dict[str, dict[str, dict[str, TripleObject]]] = defaultdict(lambda: defaultdict(dict))
        self._reverse: dict[str, dict[str, dict[str, EntityId]]] = defaultdict(lambda: defaultdict(dict))
        self._label_index: dict[str, set[str]] = defaultdict(set)
        for t in triples:
            self._add(t)

    def _entity(self, ent: EntityId) -> EntityId:
        known = self._entities.get(ent.id)
        if known is None:
            label = self._labels.get(ent.id) or ent.label or default_label(ent.id)
            known = EntityId(ent.id, label)
            self._entities[ent.id] = known
            self._label_index[normalize_label(label)].add(ent.id)
        return known

    def _relation(self, rel: RelationId) -> RelationId:
        known = self._relations.get(rel.id)
        if known is None:
            label = self._labels.get(rel.id) or rel.label or default_label(rel.id)
            known = RelationId(rel.id, label)
            self._relations[rel.id] = known
        return known

    def _add(self, t: Triple) -> None:
        if t.as_tuple() in self._triples:
            return
        s = self._entity(t.subject)
        r = self._relation(t.relation)
        o = self._entity(t.object) if isinstance(t.object, EntityId) else t.object
        t = Triple(s, r, o)
        self._triples[t.as_tuple()] = t
        self._forward[s.id][r.id][o.key] = o
        if isinstance(o, EntityId):
            self._reverse[o.id][r.id][s.id] = s

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples.values())

    def __contains__(self, t: object) -> bool:
        return isinstance(t, Triple) and t.as_tuple() in self._triples

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InMemoryGraph):
            return NotImplemented
        return self._triples.keys() == other._triples.keys()

    @property
    def triples(self) -> frozenset[Triple]:
        return frozenset(self._triples.values())

    def entities(self) -> list[EntityId]:
        return [self._entities[k] for k in sorted(self._entities)]

    def entity(self, entity_id: str) -> EntityId | None:
        return self._entities.get(entity_id)

    def relation(self, relation_id: str) -> RelationId | None:
        return self._relations.get(relation_id)

    def neighbors(self, e: EntityId | str, direction: Direction) -> set[tuple[RelationId, TripleObject]]:
        eid = e.id if isinstance(e, EntityId) else e
        out: set[tuple[RelationId, TripleObject]] = set()
        if direction is Direction.OUTGOING:
            for rid, objs in self._forward.get(eid, {}).items():
                out.update((self._relations[rid], o) for o in objs.values())
        else:
            for rid, subs in self._reverse.get(eid, {}).items():
                out.update((self._relations[rid], s) for s in subs.values())
        return out

    def lookup_by_label(self, label: str) -> set[EntityId]:
        return {self._entities[i] for i in self._label_index.get(normalize_label(label), ())}


def neighbors(g: InMemoryGraph, e: EntityId | str, direction: Direction) -> set[tuple[RelationId, TripleObject]]:
    return g.neighbors(e, direction)


def lookup_by_label(g: InMemoryGraph, label: str) -> set[EntityId]:
    return g.lookup_by_label(label)


def _data_lines(path: Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def load_labels(path: str | Path) -> dict[str, str]:
    """Read an ``id<TAB>label`` file."""
    path = Path(path)
    labels: dict[str, str] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise GraphFormatError(path, lineno, "expected 'id<TAB>label'")
        labels[parts[0]] = parts[1].strip()
    return labels


def load_tsv(path: str | Path, labels_path: str | Path | None = None) -> InMemoryGraph:
    """Load ``subject<TAB>relation<TAB>object`` lines into a graph.

    Duplicate lines collapse. Objects that are double-quoted, ISO-8601
    dates/datetimes or decimal numbers become literals; everything else is
    an entity id.
    """
    path = Path(path)
    triples = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        s, r, o = (p.strip() for p in parts)
        if not (s and r and o):
            raise GraphFormatError(path, lineno, "empty field")
        try:
            triples.append(Triple(EntityId(s), RelationId(r), parse_object(o)))
        except ValueError as exc:
            raise GraphFormatError(path, lineno, str(exc)) from exc
    labels = load_labels(labels_path) if labels_path else None
    return InMemoryGraph(triples, labels)
