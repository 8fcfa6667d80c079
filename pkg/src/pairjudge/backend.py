"""Chat-completion backends: HTTP client, response cache, rate limiting, mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from pairjudge import prompts

logger = logging.getLogger(__name__)

ROLES = ("system", "user")


class BackendError(RuntimeError):
    """Base class for failures talking to a model backend."""

    retryable = False


class TransportError(BackendError):
    retryable = True


class BackendTimeout(BackendError):
    retryable = True


class ProtocolError(BackendError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body[:200]}")

    @property
    def retryable(self) -> bool:
        return self.status == 429 or self.status >= 500


class UnscriptedRequest(BackendError):
    """A mock received a request it has no reply for."""


class BackendConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    name: str
    model_id: str
    base_url: str = ""
    api_key_env: str | None = None
    temperature: float = 0.0
    max_tokens: int = 512
    requests_per_minute: int = 60
    timeout: float = 60.0
    retry_limit: int = 3
    max_prompt_chars: int | None = None
    provider: str = "http"
    mock: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise BackendConfigError("backend name is empty")
        if not self.model_id:
            raise BackendConfigError(f"backend {self.name!r}: model_id is empty")
        if self.temperature < 0:
            raise BackendConfigError(f"backend {self.name!r}: temperature must be >= 0")
        if self.max_tokens <= 0 or self.requests_per_minute <= 0:
            raise BackendConfigError(f"backend {self.name!r}: max_tokens and requests_per_minute must be positive")
        if self.retry_limit < 0 or self.timeout <= 0:
            raise BackendConfigError(f"backend {self.name!r}: bad retry_limit or timeout")
        if self.provider not in ("http", "mock"):
            raise BackendConfigError(f"backend {self.name!r}: provider must be 'http' or 'mock'")
        if self.provider == "http" and not self.base_url:
            raise BackendConfigError(f"backend {self.name!r}: base_url is required for http backends")
        if self.provider == "mock" and not self.mock:
            raise BackendConfigError(f"backend {self.name!r}: mock behaviour is required for mock backends")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model_id": self.model_id,
            "base_url": self.base_url,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "requests_per_minute": self.requests_per_minute,
            "timeout": self.timeout,
            "retry_limit": self.retry_limit,
            "max_prompt_chars": self.max_prompt_chars,
            "provider": self.provider,
            "mock": self.mock,
        }


@dataclass(frozen=True)
class CompletionRequest:
    backend_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float
    max_tokens: int
    model_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("a completion request needs at least one user message")
        bad = [role for role, _ in self.messages if role not in ROLES]
        if bad:
            raise ValueError(f"unsupported message role {bad[0]!r}")

    @property
    def last_user(self) -> str:
        return [c for r, c in self.messages if r == "user"][-1]

    def canonical(self) -> dict:
        return {
            "backend_name": self.backend_name,
            "max_tokens": int(self.max_tokens),
            "messages": [{"content": c, "role": r} for r, c in self.messages],
            "model_id": self.model_id,
            "temperature": float(self.temperature),
        }


@dataclass(frozen=True)
class CompletionResult:
    text: str
    request_digest: str
    backend_name: str
    latency: float = 0.0
    from_cache: bool = False
    retries: int = 0


def cache_key(request: CompletionRequest) -> str:
    """SHA-256 of the request serialized as sorted-key compact JSON."""
    payload = json.dumps(request.canonical(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Directory of ``<digest>.json`` files, each holding request and response."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> str | None:
        try:
            with open(self._path(digest), encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except (FileNotFoundError, json.JSONDecodeError, KeyError):
            return None

    def put(self, digest: str, request: CompletionRequest, text: str) -> None:
        body = json.dumps({"request": request.canonical(), "response": text}, ensure_ascii=False, sort_keys=True)
        # write-then-rename keeps concurrent writers of one key idempotent
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(body)
        os.replace(tmp, self._path(digest))

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


class RateLimiter:
    """Sliding-window limiter: at most ``limit`` admissions per ``window`` seconds."""

    def __init__(self, limit: int, window: float = 60.0, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.limit = limit
        self.window = window
        self.clock = clock
        self.sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()
        self.admitted: list[float] = []

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                while self._stamps and self._stamps[0] <= now - self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    self.admitted.append(now)
                    return
                wait = self._stamps[0] + self.window - now
            self.sleep(max(wait, 1e-3))


class Backend:
    """Shared completion logic; subclasses provide ``_call``."""

    def __init__(self, config: BackendConfig, cache: ResponseCache | None = None, *,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep,
                 backoff: float = 1.0):
        self.config = config
        self.cache = cache
        self.sleep = sleep
        self.backoff = backoff
        self.limiter = RateLimiter(config.requests_per_minute, clock=clock, sleep=sleep)
        self._lock = threading.Lock()
        self.live_calls = 0
        self.cache_hits = 0

    @property
    def name(self) -> str:
        return self.config.name

    def request(self, prompt_text: str, system: str | None = None) -> CompletionRequest:
        messages = [("system", system)] if system else []
        messages.append(("user", prompt_text))
        return CompletionRequest(
            backend_name=self.config.name,
            messages=tuple(messages),
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
            model_id=self.config.model_id,
        )

    def complete(self, request: CompletionRequest) -> CompletionResult:
        digest = cache_key(request)
        start = time.monotonic()
        if self.cache is not None:
            cached = self.cache.get(digest)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return CompletionResult(cached, digest, self.name, time.monotonic() - start, from_cache=True)
        retries = 0
        while True:
            self.limiter.acquire()
            with self._lock:
                self.live_calls += 1
            try:
                text = self._call(request)
                break
            except BackendError as exc:
                if not exc.retryable or retries >= self.config.retry_limit:
                    raise
                retries += 1
                delay = self.backoff * 2 ** (retries - 1)
                logger.warning("%s: %s; retry %d/%d in %.1fs", self.name, exc, retries,
                               self.config.retry_limit, delay)
                self.sleep(delay)
        if self.cache is not None:
            self.cache.put(digest, request, text)
        return CompletionResult(text, digest, self.name, time.monotonic() - start, from_cache=False, retries=retries)

    def _call(self, request: CompletionRequest) -> str:
        raise NotImplementedError


class HTTPBackend(Backend):
    """POSTs ``{model, messages, temperature, max_tokens}`` to ``<base_url>/chat/completions``."""

    def __init__(self, config: BackendConfig, cache: ResponseCache | None = None, *,
                 transport: httpx.BaseTransport | None = None, **kwargs):
        super().__init__(config, cache, **kwargs)
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise BackendConfigError(
                    f"backend {self.name!r}: environment variable {self.config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _call(self, request: CompletionRequest) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.config.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self._client.post(url, json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"{self.name}: request timed out ({exc})") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        if resp.status_code // 100 != 2:
            raise ProtocolError(resp.status_code, resp.text)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProtocolError(resp.status_code, "malformed completion body: " + resp.text) from None

    def close(self) -> None:
        self._client.close()


# --- mocks -------------------------------------------------------------------

_ANSWERS_RE = re.compile(
    re.escape(prompts.ANSWER_1_START) + r"\n(.*?)\n" + re.escape(prompts.ANSWER_1_END) + r".*?"
    + re.escape(prompts.ANSWER_2_START) + r"\n(.*?)\n" + re.escape(prompts.ANSWER_2_END),
    re.S,
)


def extract_answers(prompt_text: str) -> tuple[str, str]:
    """Recover (answer_1, answer_2) from a judge prompt built with the default body."""
    m = _ANSWERS_RE.search(prompt_text)
    if not m:
        raise UnscriptedRequest("judge mock could not locate the two answers in the prompt")
    return m.group(1), m.group(2)


def _verdict_reply(token: str) -> str:
    explanation = {
        "A": "Assistant A's summary is more faithful and relevant to the source.",
        "B": "Assistant B's summary is more faithful and relevant to the source.",
        "C": "Both summaries are of comparable quality.",
    }[token]
    return f"{explanation} [[{token}]]"


def _content_scorer(spec: dict) -> Callable[[str], object]:
    prefer = spec.get("prefer", "hash")
    if prefer == "hash":
        # lower digest wins
        return lambda text: -int(hashlib.sha256(text.encode("utf-8")).hexdigest(), 16)
    if prefer == "longer":
        return len
    if prefer == "shorter":
        return lambda text: -len(text)
    if prefer == "scores":
        scores = spec["scores"]

        def score(text: str):
            if text not in scores:
                raise UnscriptedRequest(f"no content score for summary {text[:40]!r}")
            return scores[text]
        return score
    raise BackendConfigError(f"unknown content preference {prefer!r}")


def content_preference(spec: dict, first: str, second: str) -> str:
    """Which text a content judge built from ``spec`` prefers: 'first', 'second' or 'tie'."""
    score = _content_scorer(spec)
    a, b = score(first), score(second)
    if a == b:
        return "tie"
    return "first" if a > b else "second"


def _build_reply_fn(spec: dict) -> Callable[[CompletionRequest], str]:
    behavior = spec.get("behavior")
    if behavior == "constant":
        reply = spec["reply"]
        return lambda request: reply

    if behavior == "echo":
        words = int(spec.get("words", 12))
        skip = int(spec.get("skip_lines", 1))
        prefix = spec.get("prefix", "")

        def echo(request):
            body = "\n".join(request.last_user.split("\n")[skip:]) or request.last_user
            return prefix + " ".join(body.split()[:words])
        return echo

    if behavior == "scripted":
        by_digest = dict(spec.get("by_digest", {}))
        rules = list(spec.get("rules", []))

        def scripted(request):
            digest = cache_key(request)
            if digest in by_digest:
                return by_digest[digest]
            for rule in rules:
                if rule["contains"] in request.last_user:
                    return rule["reply"]
            raise UnscriptedRequest(f"unscripted request {digest[:12]}")
        return scripted

    if behavior == "sequence":
        replies = list(spec["replies"])
        lock = threading.Lock()
        state = {"i": 0}

        def sequence(request):
            with lock:
                i = state["i"]
                state["i"] += 1
            if i >= len(replies):
                raise UnscriptedRequest(f"sequence mock exhausted after {len(replies)} replies")
            return replies[i]
        return sequence

    if behavior == "position_biased":
        token = spec.get("token", "A")
        return lambda request: _verdict_reply(token)

    if behavior == "lookup":
        table = spec["table"]
        if isinstance(table, list):
            table = {(row["answer_1"], row["answer_2"]): row["verdict"] for row in table}

        def lookup(request):
            key = extract_answers(request.last_user)
            if key not in table:
                raise UnscriptedRequest("lookup judge has no entry for this answer pair")
            return _verdict_reply(table[key])
        return lookup

    if behavior == "content":
        _content_scorer(spec)

        def content(request):
            first, second = extract_answers(request.last_user)
            pref = content_preference(spec, first, second)
            return _verdict_reply({"first": "A", "second": "B", "tie": "C"}[pref])
        return content

    if behavior == "failing":
        failures = int(spec["failures"])
        inner = _build_reply_fn(spec["then"]) if "then" in spec else None
        kind = spec.get("error", "transport")
        lock = threading.Lock()
        state = {"n": 0}

        def failing(request):
            with lock:
                state["n"] += 1
                n = state["n"]
            if n <= failures:
                if kind == "timeout":
                    raise BackendTimeout("mock timeout")
                if kind == "protocol":
                    raise ProtocolError(int(spec.get("status", 503)), "mock failure")
                raise TransportError("mock transport failure")
            if inner is None:
                raise TransportError("mock transport failure")
            return inner(request)
        return failing

    raise BackendConfigError(f"unknown mock behavior {behavior!r}")


class MockBackend(Backend):
    """Offline backend whose replies come from a behaviour description."""

    def __init__(self, config: BackendConfig, cache: ResponseCache | None = None, *,
                 reply: Callable[[CompletionRequest], str] | None = None, **kwargs):
        super().__init__(config, cache, **kwargs)
        self.spec = config.mock or {}
        self._reply = reply or _build_reply_fn(self.spec)
        self.delay = float(self.spec.get("delay", 0.0))
        self.seen: list[CompletionRequest] = []

    def _call(self, request: CompletionRequest) -> str:
        with self._lock:
            self.seen.append(request)
        if self.delay:
            time.sleep(self.delay)
        return self._reply(request)


def make_mock(behavior: dict, name: str = "mock", model_id: str | None = None,
              cache: ResponseCache | None = None, **overrides) -> MockBackend:
    """Build a mock backend from a behaviour dict, e.g. ``{"behavior": "constant", "reply": "x"}``.

    Supported behaviours: ``constant``, ``echo``, ``scripted``, ``sequence``,
    ``position_biased``, ``lookup``, ``content`` and ``failing``.
    """
    backend_kwargs = {k: overrides.pop(k) for k in ("clock", "sleep", "backoff") if k in overrides}
    backend_kwargs.setdefault("backoff", 0.0)
    overrides.setdefault("requests_per_minute", 1_000_000)
    config = BackendConfig(name=name, model_id=model_id or f"mock/{name}", provider="mock",
                           mock=dict(behavior), **overrides)
    return MockBackend(config, cache, **backend_kwargs)


def build_backend(config: BackendConfig, cache: ResponseCache | None = None, **kwargs) -> Backend:
    if config.provider == "mock":
        kwargs.setdefault("backoff", 0.0)
        return MockBackend(config, cache, **kwargs)
    return HTTPBackend(config, cache, **kwargs)
