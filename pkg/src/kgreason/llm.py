"""Chat-completions transport with an on-disk replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from ._http import USER_AGENT, TransportError, request_json

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
SELECTION_MAX_TOKENS = 1024
REASONING_MAX_TOKENS = 2048


class LlmError(RuntimeError):
    pass


@dataclass(frozen=True)
class LlmRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = SELECTION_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def canonical(self) -> bytes:
        doc = [self.model, [[r, c] for r, c in self.messages], self.temperature, self.seed, self.max_tokens]
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    def cache_key(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def payload(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


def cache_key(req: LlmRequest) -> str:
    return req.cache_key()


@dataclass(frozen=True)
class LlmResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempts: int = 1
    cached: bool = False


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    stored_bytes: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.hits, self.misses, self.stored_bytes)


class LlmClient(Protocol):
    def complete(self, req: LlmRequest) -> LlmResponse: ...


def parse_chat_response(body: dict) -> LlmResponse:
    try:
        choice = body["choices"][0]
        content = choice["message"].get("content")
        finish = choice.get("finish_reason") or "stop"
    except (KeyError, IndexError, TypeError, AttributeError) as exc:
        raise LlmError(f"malformed chat completion: {str(body)[:200]}") from exc
    if content is None and finish == "stop":
        raise LlmError("completion finished normally but carried no content")
    usage = body.get("usage") or {}
    return LlmResponse(
        content=content or "",
        finish_reason=finish,
        prompt_tokens=int(usage.get("prompt_tokens") or 0),
        completion_tokens=int(usage.get("completion_tokens") or 0),
    )


class LlmGateway:
    """HTTP client for a chat-completions endpoint.

    Every successful response is stored as one JSON file named by the
    request's SHA-256 key, so a warm cache replays a run without touching the
    network. Identical concurrent requests share one network call.
    """

    def __init__(
        self,
        base_url: str,
        *,
        cache_dir: str | Path | None = None,
        api_key_env: str = "KGREASON_LLM_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        url = base_url.rstrip("/")
        self.url = url if url.endswith("/chat/completions") else url + "/chat/completions"
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.stats = CacheStats()
        self.network_attempts = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self._memory: dict[str, dict] = {}
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def _path(self, key: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / key[:2] / f"{key}.json"

    def _load(self, key: str) -> dict | None:
        if self.cache_dir is None:
            return self._memory.get(key)
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            logger.warning("ignoring unreadable cache entry %s", path)
            return None

    def _store(self, key: str, req: LlmRequest, resp: LlmResponse) -> None:
        doc = {"key": key, "request": req.payload(), "response": asdict(resp)}
        data = json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True).encode("utf-8")
        if self.cache_dir is None:
            self._memory[key] = doc
        else:
            path = self._path(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        with self._lock:
            self.stats.stored_bytes += len(data)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def complete(self, req: LlmRequest) -> LlmResponse:
        key = req.cache_key()
        with self._key_lock(key):
            doc = self._load(key)
            if doc is not None:
                with self._lock:
                    self.stats.hits += 1
                fields = dict(doc["response"], cached=True)
                return LlmResponse(**fields)
            with self._lock:
                self.stats.misses += 1
            resp = self._call(req)
            self._store(key, req, resp)
            return resp

    def _call(self, req: LlmRequest) -> LlmResponse:
        headers = {"Content-Type": "application/json", "User-Agent": USER_AGENT}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        with self._gate:
            try:
                body, attempts = request_json(
                    self.session, "POST", self.url, json=req.payload(), headers=headers,
                    max_retries=self.max_retries, timeout=self.timeout, backoff=self.backoff,
                )
            except TransportError as exc:
                with self._lock:
                    self.network_attempts += exc.attempts
                raise
        with self._lock:
            self.network_attempts += attempts
        resp = parse_chat_response(body)
        with self._lock:
            self.prompt_tokens += resp.prompt_tokens
            self.completion_tokens += resp.completion_tokens
        return LlmResponse(
            content=resp.content, finish_reason=resp.finish_reason,
            prompt_tokens=resp.prompt_tokens, completion_tokens=resp.completion_tokens,
            attempts=attempts,
        )

    def cache_stats(self) -> tuple[int, int, int]:
        return self.stats.as_tuple()

    def clear_cache(self) -> int:
        """Delete every stored response and return how many were removed."""
        if self.cache_dir is None:
            n = len(self._memory)
            self._memory.clear()
            return n
        if not self.cache_dir.exists():
            return 0
        n = sum(1 for _ in self.cache_dir.glob("*/*.json"))
        shutil.rmtree(self.cache_dir)
        return n


def disk_cache_usage(cache_dir: str | Path) -> tuple[int, int]:
    """(entries, bytes) stored under ``cache_dir``."""
    files = list(Path(cache_dir).glob("*/*.json")) if Path(cache_dir).exists() else []
    return len(files), sum(f.stat().st_size for f in files)


def clear_disk_cache(cache_dir: str | Path) -> int:
    files = list(Path(cache_dir).glob("*/*.json")) if Path(cache_dir).exists() else []
    for f in files:
        f.unlink()
    for d in Path(cache_dir).glob("*/") if Path(cache_dir).exists() else []:
        if d.is_dir() and not any(d.iterdir()):
            d.rmdir()
    return len(files)


def cache_stats(gw: LlmGateway) -> tuple[int, int, int]:
    return gw.cache_stats()


def complete(gw: LlmClient, req: LlmRequest) -> LlmResponse:
    return gw.complete(req)


@dataclass
class ScriptedLlm:
    """Offline stand-in for a gateway.

    Each rule pairs a substring with a reply; the first rule whose substring
    occurs in the last user message answers. ``fn`` rules may compute the
    reply from the request instead.
    """

    rules: Sequence[tuple[str, str | Callable[[LlmRequest], str]]] = ()
    default: str | None = None
    calls: list[LlmRequest] = field(default_factory=list)

    def complete(self, req: LlmRequest) -> LlmResponse:
        self.calls.append(req)
        last_user = next((c for r, c in reversed(req.messages) if r == "user"), "")
        for needle, reply in self.rules:
            if needle in last_user:
                text = reply(req) if callable(reply) else reply
                return LlmResponse(content=text)
        if self.default is None:
            raise LlmError("no scripted reply matches the request")
        return LlmResponse(content=self.default)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlm":
        """Load ``[{"match": ..., "reply": ...}, ...]`` (optionally with a ``default``)."""
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(doc, dict):
            rules, default = doc.get("rules", []), doc.get("default")
        else:
            rules, default = doc, None
        return cls([(r["match"], r["reply"]) for r in rules], default)
