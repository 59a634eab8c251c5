"""Chat-completion clients: an HTTP client for OpenAI-compatible servers
and a scripted mock that replays canned responses for offline runs.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

ROLES = ("system", "user", "assistant")
DEFAULT_MAX_TOKENS = 2048


class LLMError(RuntimeError):
    pass


class FixturesExhausted(LLMError):
    pass


class FixtureLoadError(LLMError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must not be empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple
    temperature: float = 0.7
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def to_payload(self) -> dict:
        return {
            "model": self.model_name,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


class HTTPChatClient:
    """Client for a ``/chat/completions`` style endpoint.

    Connection errors, timeouts, 429 and 5xx responses are retried with
    exponential backoff; anything else fails immediately.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, model: str | None = None,
                 max_retries: int = 3, backoff: float = 1.0, timeout: float = 120.0, session=None):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        if not self.endpoint:
            raise LLMError("no endpoint given and LLM_ENDPOINT is unset")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.model = model or os.environ.get("LLM_MODEL", "")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()

    def _url(self) -> str:
        url = self.endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        return url

    def complete(self, req: CompletionRequest) -> str:
        payload = req.to_payload()
        if not payload["model"]:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(self._url(), json=payload, headers=headers, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _parse_completion(resp.text)
        raise LLMError(f"retries exhausted ({last})")


def _parse_completion(text: str) -> str:
    try:
        body = json.loads(text)
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise LLMError(f"malformed completion response: {exc}") from exc
    if not isinstance(content, str):
        raise LLMError("malformed completion response: content is not text")
    return content


@dataclass
class ScriptedLLM:
    """Replays ``responses`` in order regardless of the request."""

    responses: list
    requests: list = field(default_factory=list)
    cursor: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def capacity(self) -> int:
        return len(self.responses)

    @property
    def remaining(self) -> int:
        return len(self.responses) - self.cursor

    def skip(self, n: int) -> None:
        """Advance the cursor without serving, used when resuming a run."""
        with self._lock:
            self.cursor = min(self.cursor + n, len(self.responses))

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            self.requests.append(req)
            if self.cursor >= len(self.responses):
                raise FixturesExhausted(f"all {len(self.responses)} scripted responses used")
            out = self.responses[self.cursor]
            self.cursor += 1
            return out


def mock_from_fixture(path: str | Path) -> ScriptedLLM:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FixtureLoadError(f"cannot read fixture {path}: {exc}") from exc
    except ValueError as exc:
        raise FixtureLoadError(f"fixture {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise FixtureLoadError(f"fixture {path} must be a JSON array of strings")
    return ScriptedLLM(list(data))
