"""Chat-completion backends: an HTTP client and a deterministic scripted stand-in."""

from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Union
from urllib.parse import urlparse

import httpx

from .chunker import count_units
from .errors import (
    BackendError,
    ConfigError,
    MalformedResponse,
    RemoteStatus,
    ScriptExhausted,
    Timeout,
    TransportError,
)

log = logging.getLogger(__name__)

# indirection so tests can observe the schedule without sleeping
_sleep = time.sleep

_client: httpx.Client | None = None
_client_lock = threading.Lock()


def _http() -> httpx.Client:
    """One pooled client for the process; building a client per call costs tens of ms."""
    global _client
    with _client_lock:
        if _client is None:
            _client = httpx.Client()
        return _client


@dataclass
class ChatRequest:
    system: str
    user: str
    role: str | None = None
    temperature: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self):
        if not self.user:
            raise ValueError("chat request user text must be non-empty")

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}" if self.system else self.user


@dataclass
class ChatResponse:
    text: str
    input_units: int
    output_units: int
    latency_ms: float
    attempts: int = 1


Responder = Union[str, BaseException, Callable[[ChatRequest], str]]


@dataclass
class Rule:
    """One scripted reply. ``role`` and ``pattern`` (a substring of the full
    prompt) must both match when set; ``repeat`` keeps the rule alive after use."""

    response: Responder
    role: str | None = None
    pattern: str | None = None
    repeat: bool = False
    used: bool = field(default=False, compare=False)

    def matches(self, request: ChatRequest) -> bool:
        if self.used and not self.repeat:
            return False
        if self.role is not None and self.role != request.role:
            return False
        return self.pattern is None or self.pattern in request.text


class ScriptedBackend:
    """Replays rule-matched responses and keeps a full transcript."""

    def __init__(self, rules: list[Rule]):
        self.rules = list(rules)
        self.transcript: list[tuple[str | None, ChatRequest, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def queue(cls, *responses: Responder, role: str | None = None) -> "ScriptedBackend":
        return cls([Rule(r, role=role) for r in responses])

    def reply(self, request: ChatRequest) -> str:
        with self._lock:
            for rule in self.rules:
                if rule.matches(request):
                    rule.used = True
                    break
            else:
                raise ScriptExhausted(f"no scripted rule matches a {request.role or 'untagged'} request")
            response = rule.response
            if isinstance(response, BaseException):
                self.transcript.append((request.role, request, f"<raised {type(response).__name__}>"))
                raise response
            text = response(request) if callable(response) else response
            self.transcript.append((request.role, request, text))
            return text

    @property
    def roles(self) -> list[str | None]:
        return [role for role, _, _ in self.transcript]


@dataclass
class BackendSpec:
    kind: str = "http"
    endpoint: str | None = None
    model: str | None = None
    temperature: float = 0.0
    max_output_units: int = 1024
    timeout: float = 120.0
    retries: int = 3
    backoff_ms: float = 500.0
    jitter: float = 0.1
    api_key_env: str | None = None
    script: ScriptedBackend | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("http", "scripted"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model):
            raise ConfigError("http backends need both endpoint and model")
        if self.kind == "scripted" and self.script is None:
            raise ConfigError("scripted backends need a script")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.retries < 0 or not 0 <= self.jitter < 1:
            raise ConfigError("retries must be >= 0 and jitter in [0, 1)")

    def key_variable(self) -> str:
        """Environment variable holding the API key for this endpoint's host."""
        if self.api_key_env:
            return self.api_key_env
        host = urlparse(self.endpoint or "").hostname or "default"
        return "GATEDCHAIN_API_KEY_" + re.sub(r"[^A-Za-z0-9]", "_", host).upper()

    def describe(self) -> dict:
        """Secret-free summary for traces and config digests."""
        if self.kind == "scripted":
            return {"kind": "scripted"}
        return {
            "kind": "http",
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "max_output_units": self.max_output_units,
        }


def script_backend(rules: list[Rule]) -> BackendSpec:
    return BackendSpec(kind="scripted", script=ScriptedBackend(rules))


def backoff_delay(spec: BackendSpec, attempt: int, rng: random.Random | None = None) -> float:
    """Seconds to wait after failed attempt number ``attempt`` (0-based)."""
    base = spec.backoff_ms / 1000.0 * (2**attempt)
    if spec.jitter:
        base *= 1.0 + (rng or random).uniform(-spec.jitter, spec.jitter)
    return base


def complete(spec: BackendSpec, request: ChatRequest) -> ChatResponse:
    if spec.kind == "scripted":
        start = time.perf_counter()
        text = spec.script.reply(request)
        latency = (time.perf_counter() - start) * 1000
        return ChatResponse(text, count_units(request.text), count_units(text), latency)
    return _complete_http(spec, request)


def _complete_http(spec: BackendSpec, request: ChatRequest) -> ChatResponse:
    url = spec.endpoint.rstrip("/") + "/chat/completions"
    messages = []
    if request.system:
        messages.append({"role": "system", "content": request.system})
    messages.append({"role": "user", "content": request.user})
    body = {
        "model": spec.model,
        "messages": messages,
        "temperature": spec.temperature,
        "max_tokens": request.max_tokens or spec.max_output_units,
    }
    headers = {}
    key = os.environ.get(spec.key_variable())
    if key:
        headers["Authorization"] = f"Bearer {key}"

    start = time.perf_counter()
    last: BackendError | None = None
    for attempt in range(spec.retries + 1):
        if attempt:
            delay = backoff_delay(spec, attempt - 1)
            log.warning("retrying %s in %.3fs after %s", url, delay, last)
            _sleep(delay)
        try:
            resp = _http().post(url, json=body, headers=headers, timeout=spec.timeout)
        except httpx.TimeoutException as exc:
            last = Timeout(f"request to {url} timed out: {exc}", attempts=attempt + 1)
            continue
        except httpx.TransportError as exc:
            last = TransportError(f"transport failure for {url}: {exc}", attempts=attempt + 1)
            continue
        if resp.status_code >= 500:
            last = RemoteStatus(resp.status_code, resp.text, attempts=attempt + 1)
            continue
        if resp.status_code >= 400:
            raise RemoteStatus(resp.status_code, resp.text, attempts=attempt + 1)
        return _parse_completion(resp, request, attempt + 1, start)
    raise last


def _parse_completion(resp: httpx.Response, request: ChatRequest, attempts: int, start: float) -> ChatResponse:
    try:
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"response lacks choices[0].message.content: {exc}", attempts=attempts)
    if not isinstance(text, str):
        raise MalformedResponse("completion content is not a string", attempts=attempts)
    usage = payload.get("usage") or {}
    latency = (time.perf_counter() - start) * 1000
    return ChatResponse(
        text,
        usage.get("prompt_tokens", count_units(request.text)),
        usage.get("completion_tokens", count_units(text)),
        latency,
        attempts,
    )
