"""Chat-completion backends.

Two production-shaped implementations share one contract:

* :class:`HttpChatBackend` speaks the standard chat-completions wire protocol
  (``POST {base_url}/chat/completions``) with bearer auth and bounded
  exponential-backoff retries on transport failures.
* :class:`ScriptedBackend` replays canned completions keyed by
  ``(template id, digest of the rendered user content)`` — never by call
  order — so concurrent runs stay byte-deterministic in tests.

Callers attach a :class:`CallMeta` describing which pipeline stage is asking
and any structured stage data. Live backends ignore it entirely; scripted and
synthetic backends key on it.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import requests

__all__ = [
    "ChatMessage",
    "CompletionParams",
    "CallMeta",
    "Backend",
    "BackendError",
    "TransportError",
    "FixtureMissError",
    "HttpChatBackend",
    "ScriptedBackend",
    "user_content_digest",
    "ENV_API_KEY",
    "ENV_BASE_URL",
    "ENV_MODEL",
]

ENV_API_KEY = "BRANCH_API_KEY"
ENV_BASE_URL = "BRANCH_BASE_URL"
ENV_MODEL = "BRANCH_MODEL"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class CompletionParams:
    model: Optional[str] = None
    temperature: float = 0.7
    max_tokens: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CallMeta:
    """Stage identity plus structured stage data for non-live backends."""

    template_id: str
    payload: Mapping[str, Any] = field(default_factory=dict)


class BackendError(Exception):
    """Unrecoverable backend failure."""


class TransportError(BackendError):
    """HTTP failure after retries; carries the last status when known."""

    def __init__(self, message: str, status: Optional[int] = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class FixtureMissError(BackendError):
    """Scripted backend asked for an exchange the scenario never defined."""


class Backend(Protocol):
    max_concurrency: int

    def complete(
        self,
        messages: Sequence[ChatMessage],
        params: CompletionParams,
        meta: Optional[CallMeta] = None,
    ) -> str: ...


def user_content_digest(messages: Sequence[ChatMessage]) -> str:
    """SHA-256 over the concatenated user-role contents of a prompt."""
    h = hashlib.sha256()
    for m in messages:
        if m.role == "user":
            h.update(m.content.encode("utf-8"))
            h.update(b"\x00")
    return h.hexdigest()


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class HttpChatBackend:
    """Live backend over the chat-completions HTTP protocol."""

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: Optional[str] = None,
        max_concurrency: int = 4,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        if not self.base_url:
            raise BackendError(f"no base url configured (set {ENV_BASE_URL})")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.max_concurrency = max_concurrency
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_concurrency)
        self.call_count = 0
        self._lock = threading.Lock()

    def complete(self, messages, params, meta=None):
        body: Dict[str, Any] = {
            "model": params.model or self.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"

        last_exc: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    with self._lock:
                        self.call_count += 1
                    resp = self._session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = TransportError(f"transport failure: {exc}")
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                last_exc = TransportError(
                    f"retryable status {resp.status_code}", resp.status_code, resp.text
                )
                continue
            if resp.status_code != 200:
                raise TransportError(
                    f"chat completion failed with status {resp.status_code}",
                    resp.status_code,
                    resp.text,
                )
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise TransportError(f"malformed completion response: {exc}", 200, resp.text)
        raise last_exc  # type: ignore[misc]


class ScriptedBackend:
    """Deterministic fixture backend for tests and golden transcripts.

    Each fixture entry maps ``(template_id, digest)`` to a sequence of
    responses: successive calls with the same key walk the sequence and then
    stick on its last element, which is how a scenario scripts a malformed
    completion followed by a clean retry. Lookups never depend on global call
    order, so interleaving across keys cannot change any transcript.
    """

    def __init__(self, max_concurrency: int = 4):
        self.max_concurrency = max_concurrency
        self._entries: Dict[Tuple[str, str], List[str]] = {}
        self._positions: Dict[Tuple[str, str], int] = {}
        self._lock = threading.Lock()
        self.call_count = 0

    def add(self, template_id: str, user_content, responses) -> None:
        """Register responses for a prompt.

        ``user_content`` is either the rendered user text (digested here) or
        an already-computed digest from a recorded scenario file.
        """
        if isinstance(responses, str):
            responses = [responses]
        digest = (
            user_content
            if _looks_like_digest(user_content)
            else user_content_digest([ChatMessage("user", user_content)])
        )
        self._entries[(template_id, digest)] = list(responses)

    def complete(self, messages, params, meta=None):
        if meta is None:
            raise FixtureMissError("scripted backend requires CallMeta with a template id")
        key = (meta.template_id, user_content_digest(messages))
        with self._lock:
            self.call_count += 1
            responses = self._entries.get(key)
            if responses is None:
                raise FixtureMissError(
                    f"no fixture for template {meta.template_id!r} digest {key[1][:12]}…"
                )
            pos = self._positions.get(key, 0)
            self._positions[key] = pos + 1
        return responses[min(pos, len(responses) - 1)]

    def reset(self) -> None:
        """Rewind all per-key sequences (new logical run, same scenario)."""
        with self._lock:
            self._positions.clear()

    # -- scenario (de)serialization ------------------------------------

    def to_json(self) -> dict:
        return {
            "entries": [
                {"template": t, "digest": d, "responses": r}
                for (t, d), r in sorted(self._entries.items())
            ]
        }

    @classmethod
    def from_json(cls, doc: dict, max_concurrency: int = 4) -> "ScriptedBackend":
        backend = cls(max_concurrency=max_concurrency)
        for entry in doc["entries"]:
            backend._entries[(entry["template"], entry["digest"])] = list(entry["responses"])
        return backend

    @classmethod
    def from_file(cls, path, max_concurrency: int = 4) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), max_concurrency=max_concurrency)


def _looks_like_digest(s: str) -> bool:
    return len(s) == 64 and all(c in "0123456789abcdef" for c in s)
