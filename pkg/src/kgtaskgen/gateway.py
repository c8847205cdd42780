"""LLM access: a chat-completions HTTP client with retries and a deterministic offline mock."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Protocol

from .errors import ConfigError, GatewayError, ProtocolError, ProviderError, TransportError
from .jsonutil import canonical_json
from .tokens import tokenize

logger = logging.getLogger(__name__)

PURPOSES = (
    "caption",
    "doc_task",
    "web_task",
    "judge_answer",
    "judge_trajectory",
    "quality",
    "link_filter",
    "answer",
)
ROLES = ("system", "user")
DRAFT_MARKER = "DRAFT JSON:"

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "Gateway",
    "GatewayError",
    "HttpGateway",
    "Message",
    "MockGateway",
    "ProviderConfig",
    "Usage",
    "make_gateway",
]


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    images: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    model: str = ""
    temperature: float = 0.1
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a chat request needs at least one user message")

    @classmethod
    def user(cls, text: str, *, system: str | None = None, images: tuple[str, ...] = (), **kwargs) -> ChatRequest:
        messages = [Message("system", system)] if system else []
        messages.append(Message("user", text, tuple(images)))
        return cls(tuple(messages), **kwargs)

    @property
    def user_text(self) -> str:
        return "\n\n".join(m.content for m in self.messages if m.role == "user")

    def digest(self) -> str:
        body = [[m.role, m.content] for m in self.messages]
        return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()

    def with_extra_user(self, text: str) -> ChatRequest:
        return ChatRequest((*self.messages, Message("user", text)), self.model, self.temperature, self.max_tokens)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class Usage:
    """Additive request/token counters; safe to share across threads."""

    requests: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, response: ChatResponse) -> None:
        with self._lock:
            self.requests += 1
            self.prompt_tokens += max(0, response.prompt_tokens)
            self.completion_tokens += max(0, response.completion_tokens)

    def as_dict(self) -> dict[str, int]:
        return {
            "requests": self.requests,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


class Gateway(Protocol):
    usage: Usage

    def complete(self, request: ChatRequest, purpose: str) -> ChatResponse: ...


# -- HTTP mode -----------------------------------------------------------------


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    api_key_env: str = "LLM_API_KEY"
    model: str = ""
    timeout: float = 60.0
    retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    requests_per_minute: int | None = None
    temperature: float | None = None  # overrides the per-request value when set

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ConfigError("gateway.endpoint is required in HTTP mode")
        if self.retries < 0 or self.timeout <= 0 or self.backoff_base < 0 or self.max_in_flight < 1:
            raise ConfigError("gateway retries/timeout/backoff/max_in_flight out of range")


# (url, body, headers, timeout) -> (status, response body); raises TimeoutError / OSError on transport failure
Transport = Callable[[str, bytes, Mapping[str, str], float], tuple[int, bytes]]


def urllib_transport(url: str, body: bytes, headers: Mapping[str, str], timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, headers=dict(headers), method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def scrub(text: str, secrets: tuple[str, ...]) -> str:
    for secret in secrets:
        if secret:
            text = text.replace(secret, "***")
    return text


class SecretScrubber(logging.Filter):
    """Logging filter that masks secret values in formatted records."""

    def __init__(self, secrets: tuple[str, ...]):
        super().__init__()
        self.secrets = secrets

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        clean = scrub(message, self.secrets)
        if clean != message:
            record.msg, record.args = clean, None
        return True


class _RateLimiter:
    def __init__(self, per_minute: int | None, clock: Callable[[], float], sleep: Callable[[float], None]):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self.stamps: deque[float] = deque()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        if not self.per_minute:
            return
        while True:
            with self.lock:
                now = self.clock()
                while self.stamps and now - self.stamps[0] >= 60.0:
                    self.stamps.popleft()
                if len(self.stamps) < self.per_minute:
                    self.stamps.append(now)
                    return
                wait = 60.0 - (now - self.stamps[0])
            self.sleep(wait)


class HttpGateway:
    """Chat-completions client. Retries 429/5xx/timeouts with exponential backoff."""

    def __init__(
        self,
        config: ProviderConfig,
        transport: Transport | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        env: Mapping[str, str] | None = None,
    ):
        self.config = config
        self.transport = transport or urllib_transport
        self.sleep = sleep
        self.usage = Usage()
        self._key = (env if env is not None else os.environ).get(config.api_key_env, "")
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._limiter = _RateLimiter(config.requests_per_minute, clock, sleep)
        logger.addFilter(SecretScrubber((self._key,)))

    def __repr__(self) -> str:
        return f"HttpGateway(endpoint={self.config.endpoint!r}, model={self.config.model!r})"

    def _body(self, request: ChatRequest) -> bytes:
        messages = []
        for m in request.messages:
            if m.images:
                content = [{"type": "text", "text": m.content}]
                content += [{"type": "image_url", "image_url": {"url": f"file://{p}"}} for p in m.images]
            else:
                content = m.content
            messages.append({"role": m.role, "content": content})
        payload = {
            "model": request.model or self.config.model,
            "messages": messages,
            "temperature": request.temperature if self.config.temperature is None else self.config.temperature,
            "max_tokens": request.max_tokens,
        }
        return json.dumps(payload).encode("utf-8")

    def complete(self, request: ChatRequest, purpose: str) -> ChatResponse:
        body = self._body(request)
        headers = {"Content-Type": "application/json"}
        if self._key:
            headers["Authorization"] = f"Bearer {self._key}"
        secrets = (self._key,)
        last_error = "no attempt made"
        with self._slots:
            for attempt in range(self.config.retries + 1):
                if attempt:
                    self.sleep(self.config.backoff_base * 2 ** (attempt - 1))
                self._limiter.acquire()
                try:
                    status, raw = self.transport(self.config.endpoint, body, headers, self.config.timeout)
                except (TimeoutError, OSError) as exc:
                    last_error = scrub(f"transport failure: {exc}", secrets)
                    logger.warning("%s request attempt %d failed: %s", purpose, attempt + 1, last_error)
                    continue
                if status == 429 or 500 <= status < 600:
                    last_error = f"HTTP {status}"
                    logger.warning("%s request attempt %d got %s", purpose, attempt + 1, last_error)
                    continue
                text = scrub(raw.decode("utf-8", errors="replace"), secrets)
                if not 200 <= status < 300:
                    raise ProviderError(f"provider returned HTTP {status}: {text[:500]}", status)
                response = self._parse(text)
                self.usage.add(response)
                return response
        raise TransportError(f"gave up after {self.config.retries + 1} attempts: {last_error}")

    @staticmethod
    def _parse(text: str) -> ChatResponse:
        try:
            data = json.loads(text)
            content = data["choices"][0]["message"]["content"]
            usage = data.get("usage") or {}
            if not isinstance(content, str):
                raise TypeError("content is not a string")
            return ChatResponse(content, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"unexpected response shape: {exc}") from exc


# -- mock mode -----------------------------------------------------------------

MockHandler = Callable[[ChatRequest, random.Random], str]


def _section(text: str, label: str, stop: str | None = None) -> str:
    start = text.find(label)
    if start < 0:
        return ""
    start += len(label)
    end = text.find(stop, start) if stop else -1
    return text[start:end if end >= 0 else None].strip()


def _mock_caption(request: ChatRequest, rng: random.Random) -> str:
    words = tokenize(_section(request.user_text, "Figure metadata:") or request.user_text)
    return "Figure showing " + " ".join(words[:16]) if words else "Figure without description"


def _mock_draft_echo(request: ChatRequest, rng: random.Random) -> str:
    draft = _section(request.user_text, DRAFT_MARKER)
    return draft or "{}"


def _mock_judge_answer(request: ChatRequest, rng: random.Random) -> str:
    from .metrics import token_f1

    text = request.user_text
    gold = _section(text, "GOLD STANDARD ANSWER:", "\nGENERATED ANSWER:")
    pred = _section(text, "GENERATED ANSWER:", "\n\nRate the generated answer")
    f1 = round(token_f1(pred, gold), 4)
    relevance = 1.0 if pred else 0.0
    return json.dumps({"answer_quality": f1, "relevance": relevance, "completeness": f1})


def _mock_judge_trajectory(request: ChatRequest, rng: random.Random) -> str:
    text = request.user_text
    success = re.search(r"^- Success: (\S+)", text, re.MULTILINE)
    error = re.search(r"^- Error message: (.*)$", text, re.MULTILINE)
    completed = bool(success and success.group(1) == "True") and (error is None or error.group(1).strip() == "None")
    verdict = {
        "task_completed": completed,
        "confidence": 0.8,
        "reasoning": "actions recorded as successful" if completed else "execution reported failure",
        "missing_actions": [],
        "final_state_analysis": _section(text, "Current page title:", "\n") or "Unknown",
    }
    return json.dumps(verdict)


def _mock_quality(request: ChatRequest, rng: random.Random) -> str:
    scores = {k: round(0.7 + 0.3 * rng.random(), 3) for k in ("clarity", "relevance", "completeness")}
    return json.dumps(scores)


def _mock_link_filter(request: ChatRequest, rng: random.Random) -> str:
    return json.dumps({"score": round(rng.random(), 3)})


def _mock_answer(request: ChatRequest, rng: random.Random) -> str:
    context = _section(request.user_text, "[1]", "\n[2]")
    if not context:
        context = _section(request.user_text, "[1]", "\n\nQUESTION:")
    return context.split("\n\nQUESTION:")[0].strip()


MOCK_HANDLERS: dict[str, MockHandler] = {
    "caption": _mock_caption,
    "doc_task": _mock_draft_echo,
    "web_task": _mock_draft_echo,
    "judge_answer": _mock_judge_answer,
    "judge_trajectory": _mock_judge_trajectory,
    "quality": _mock_quality,
    "link_filter": _mock_link_filter,
    "answer": _mock_answer,
}


class MockGateway:
    """Deterministic offline gateway.

    The response is a pure function of (seed, purpose, request digest). Per-purpose
    overrides may be fixed strings, callables, or lists consumed in order (handy for
    scripting failures in tests).
    """

    def __init__(self, seed: int = 0, responses: Mapping[str, str | MockHandler | list[str]] | None = None):
        self.seed = seed
        self.responses = dict(responses or {})
        self.usage = Usage()
        self.calls: list[tuple[str, ChatRequest]] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest, purpose: str) -> ChatResponse:
        if purpose not in PURPOSES:
            raise GatewayError(f"unknown request purpose {purpose!r}")
        key = f"{self.seed}\x00{purpose}\x00{request.digest()}"
        rng = random.Random(int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big"))
        with self._lock:
            self.calls.append((purpose, request))
            override = self.responses.get(purpose)
            if isinstance(override, list):
                override = override.pop(0) if override else None
        if override is None:
            text = MOCK_HANDLERS[purpose](request, rng)
        elif callable(override):
            text = override(request, rng)
        else:
            text = override
        if isinstance(text, Exception):
            raise text
        response = ChatResponse(text, len(tokenize(request.user_text)), len(tokenize(text)))
        self.usage.add(response)
        return response


def make_gateway(settings: Mapping[str, object]) -> MockGateway | HttpGateway:
    """Build a gateway from the ``[gateway]`` config table."""
    if settings.get("mock", True):
        return MockGateway(seed=int(settings.get("seed", 0)))
    config = ProviderConfig(
        endpoint=str(settings.get("endpoint", "")),
        api_key_env=str(settings.get("api_key_env", "LLM_API_KEY")),
        model=str(settings.get("model", "")),
        timeout=float(settings.get("timeout", 60.0)),
        retries=int(settings.get("retries", 3)),
        backoff_base=float(settings.get("backoff_base", 0.5)),
        max_in_flight=int(settings.get("max_in_flight", 4)),
        requests_per_minute=settings.get("requests_per_minute") or None,
        temperature=float(settings["temperature"]) if "temperature" in settings else None,
    )
    return HttpGateway(config)

