"""Retrying JSON-over-HTTP helper shared by all remote clients."""

from __future__ import annotations

import logging
import time
from typing import Any

import requests

logger = logging.getLogger(__name__)

USER_AGENT = "kgreason/0.1 (knowledge-graph question answering research tool)"
RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


class TransportError(RuntimeError):
    """Request failed and will not be retried further."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


def request_json(
    session: requests.Session,
    method: str,
    url: str,
    *,
    max_retries: int,
    timeout: float,
    backoff: float = 0.5,
    **kwargs: Any,
) -> tuple[Any, int]:
    """Send a request, retrying transient failures with exponential backoff.

    Returns the decoded JSON body and the number of attempts made.
    """
    attempts = 0
    last: str = ""
    status: int | None = None
    while attempts <= max_retries:
        if attempts:
            time.sleep(backoff * 2 ** (attempts - 1))
        attempts += 1
        try:
            resp = session.request(method, url, timeout=timeout, **kwargs)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last, status = f"{type(exc).__name__}: {exc}", None
            logger.debug("attempt %d to %s failed: %s", attempts, url, last)
            continue
        status = resp.status_code
        if status in RETRYABLE_STATUS:
            last = f"HTTP {status}"
            logger.debug("attempt %d to %s got %s", attempts, url, status)
            continue
        if status >= 400:
            raise TransportError(f"HTTP {status} from {url}: {resp.text[:200]}", status, attempts)
        try:
            return resp.json(), attempts
        except ValueError as exc:
            raise TransportError(f"malformed JSON from {url}: {exc}", status, attempts) from exc
    raise TransportError(f"giving up on {url} after {attempts} attempts ({last})", status, attempts)
