"""Local HTTP stubs: a SPARQL endpoint over rdflib and a chat-completions server."""

from __future__ import annotations

import json
import re
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import rdflib

from kgreason.graph import EntityId, InMemoryGraph, Literal

ENTITY_NS = "http://example.org/entity/"
RELATION_NS = "http://example.org/relation/"
RDFS_LABEL = rdflib.RDFS.label


def to_rdflib(graph: InMemoryGraph) -> rdflib.Graph:
    """Same triples as ``graph``, with entity and relation labels as rdfs:label."""
    rdflib.NORMALIZE_LITERALS = False  # keep lexical forms such as ...T00:00:00Z
    g = rdflib.Graph()
    for t in graph:
        s = rdflib.URIRef(ENTITY_NS + t.subject.id)
        p = rdflib.URIRef(RELATION_NS + t.relation.id)
        if isinstance(t.object, EntityId):
            o = rdflib.URIRef(ENTITY_NS + t.object.id)
            g.add((o, RDFS_LABEL, rdflib.Literal(t.object.display)))
        else:
            dt = rdflib.URIRef(t.object.datatype) if t.object.datatype else None
            o = rdflib.Literal(t.object.text, datatype=dt)
        g.add((s, p, o))
        g.add((s, RDFS_LABEL, rdflib.Literal(t.subject.display)))
        g.add((p, RDFS_LABEL, rdflib.Literal(t.relation.display)))
    return g


class _Server(ThreadingHTTPServer):
    daemon_threads = True


@contextmanager
def serve(handler_cls):
    server = _Server(("127.0.0.1", 0), handler_cls)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", server
    finally:
        server.shutdown()
        server.server_close()


def sparql_handler(graph: rdflib.Graph, script: list[int] | None = None, log: list[dict] | None = None):
    """Handler answering SPARQL over ``graph``; ``script`` lists status codes to emit first."""
    lock = threading.Lock()
    pending = list(script or [])

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _answer(self, query: str):
            if log is not None:
                log.append({"method": self.command, "query": query, "headers": dict(self.headers)})
            with lock:
                status = pending.pop(0) if pending else 200
            if status != 200:
                self.send_response(status)
                self.end_headers()
                self.wfile.write(b"busy")
                return
            with lock:
                result = graph.query(query)
                body = result.serialize(format="json")
            self.send_response(200)
            self.send_header("Content-Type", "application/sparql-results+json")
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            qs = parse_qs(urlparse(self.path).query)
            self._answer(qs["query"][0])

        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            form = parse_qs(self.rfile.read(n).decode("utf-8"))
            self._answer(form["query"][0])

    return Handler


def chat_handler(reply_fn, script: list[int] | None = None, log: list[dict] | None = None):
    """Chat-completions stub; ``reply_fn(body) -> str`` computes the assistant text."""
    lock = threading.Lock()
    pending = list(script or [])

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(n))
            if log is not None:
                with lock:
                    log.append({"path": self.path, "body": body, "headers": dict(self.headers)})
            with lock:
                status = pending.pop(0) if pending else 200
            if status != 200:
                self.send_response(status)
                self.end_headers()
                self.wfile.write(b'{"error": "try later"}')
                return
            text = reply_fn(body)
            doc = {
                "id": "stub",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 3, "total_tokens": 10},
            }
            data = json.dumps(doc).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


def literal_of(text: str, datatype: str | None = None) -> Literal:
    return Literal(text, datatype)


_LISTING = re.compile(r"^- (\S+?): ", re.MULTILINE)
TOY_MENTIONS = {"dog": ["Bluey"], "South Korea": ["South Korea"]}
TOY_RELATIONS = {"head_of_government", "member_of_political_party", "date_of_birth", "date_of_death"}


def toy_chat_reply(replies: dict[str, str]):
    """Deterministic stand-in for both model roles on the toy graph.

    Selection prompts keep only candidates on the gold paths; reasoning
    prompts replay ``replies`` keyed by question text.
    """

    def reply(body: dict) -> str:
        user = body["messages"][-1]["content"]
        if "JSON array of strings" in user:
            for needle, mentions in TOY_MENTIONS.items():
                if needle in user:
                    return json.dumps(mentions)
            return "[]"
        ids = _LISTING.findall(user)
        if "relations are attached" in user:
            keep = [i for i in ids if i in TOY_RELATIONS]
            return json.dumps([{"id": i, "score": 1 / len(keep)} for i in keep])
        if "we reached these" in user:
            return json.dumps([{"id": i, "score": 1 / len(ids)} for i in ids])
        for question, text in replies.items():
            if question in user:
                return text
        return "Answer: unknown"

    return reply
