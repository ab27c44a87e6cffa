"""Provider-agnostic chat-completion gateway.

Every model call in the pipeline goes through :class:`LlmGateway`, which adds:

- retries with exponential backoff on transport/throttle failures,
- a content-addressed on-disk response cache (resumable runs),
- token and latency accounting,
- per-provider in-flight and request-rate ceilings,
- optional request/token budgets.

Providers implement a single ``send`` method. Two are shipped: an
OpenAI-compatible HTTP provider and a scripted provider for offline runs,
keyed by prompt hash with substring-rule and default fallbacks.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, TypeVar

import requests

from .errors import BudgetExceeded, MalformedOutput, ProviderRejected, ProviderUnreachable

log = logging.getLogger(__name__)

DEFAULT_DECODE_PARAMS = {"temperature": 0.0, "max_output_tokens": 1024}

REASK_REMINDER = "Return only the requested object, with no extra text."


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request. ``decode_params`` is passed through opaquely."""

    model_id: str
    system_text: str
    user_text: str
    decode_params: dict = field(default_factory=lambda: dict(DEFAULT_DECODE_PARAMS))
    expect_structured: bool = False

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not self.user_text:
            raise ValueError("user_text must be non-empty")

    def cache_key(self) -> str:
        """Content hash over (model_id, system_text, user_text, decode_params)."""
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "system_text": self.system_text,
                "user_text": self.user_text,
                "decode_params": dict(sorted(self.decode_params.items())),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_appended(self, extra: str) -> "ChatRequest":
        """New request with *extra* appended to the user text (re-ask helper)."""
        return ChatRequest(
            model_id=self.model_id,
            system_text=self.system_text,
            user_text=self.user_text.rstrip() + "\n\n" + extra,
            decode_params=self.decode_params,
            expect_structured=self.expect_structured,
        )


@dataclass
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    attempts: int
    cache_hit: bool
    cache_key: str = ""  # content address of the request that produced this


@dataclass
class Budget:
    """Caps enforced before each provider call. ``None`` means unlimited."""

    max_requests: Optional[int] = None
    max_total_tokens: Optional[int] = None
    requests_used: int = 0
    tokens_used: int = 0

    def check(self) -> None:
        if self.max_requests is not None and self.requests_used >= self.max_requests:
            raise BudgetExceeded(f"request cap {self.max_requests} reached")
        if self.max_total_tokens is not None and self.tokens_used >= self.max_total_tokens:
            raise BudgetExceeded(f"token cap {self.max_total_tokens} reached")

    def spend(self, tokens: int) -> None:
        self.requests_used += 1
        self.tokens_used += tokens


@dataclass
class ProviderResult:
    text: str
    input_tokens: Optional[int] = None
    output_tokens: Optional[int] = None


class ThrottledError(Exception):
    """Internal: retryable provider condition (throttle or 5xx)."""


class Provider(Protocol):
    name: str

    def send(self, req: ChatRequest) -> ProviderResult: ...


class OpenAIChatProvider:
    """OpenAI-compatible ``/chat/completions`` endpoint.

    Credentials come from the environment variable named by ``api_key_env``;
    the key itself is never stored in config files.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        name: str = "openai",
        timeout_s: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.name = name
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def send(self, req: ChatRequest) -> ProviderResult:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        decode = dict(req.decode_params)
        body: dict[str, Any] = {
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": decode.pop("temperature", 0.0),
            "max_tokens": decode.pop("max_output_tokens", 1024),
        }
        body.update(decode)  # opaque passthrough (e.g. provider-specific toggles)
        try:
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise ThrottledError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ThrottledError(f"status {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderRejected(f"{self.name} returned status {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderRejected(f"unexpected response shape: {exc}") from exc
        usage = data.get("usage") or {}
        return ProviderResult(
            text=text or "",
            input_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
        )


class ScriptedProvider:
    """Deterministic offline responder.

    Lookup order per request: exact prompt-hash match in ``responses``, then
    the first ``rules`` entry whose ``contains`` strings all occur in the
    prompt, then ``default``. Token counts are whitespace-word counts.

    Script shape (JSON/YAML-friendly)::

        {"responses": {"<sha256>": "text", ...},
         "rules": [{"contains": ["needle", ...], "response": "text"}, ...],
         "default": "text"}
    """

    def __init__(self, script: Optional[dict] = None, name: str = "scripted"):
        script = script or {}
        self.name = name
        self.responses: dict[str, str] = dict(script.get("responses") or {})
        self.rules: list[dict] = list(script.get("rules") or [])
        self.default: Optional[str] = script.get("default")
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, name: str = "scripted") -> "ScriptedProvider":
        raw = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(raw), name=name)

    def add_response(self, req: ChatRequest, text: str) -> None:
        self.responses[req.cache_key()] = text

    def add_rule(self, contains, response: str) -> None:
        if isinstance(contains, str):
            contains = [contains]
        self.rules.append({"contains": list(contains), "response": response})

    def _lookup(self, req: ChatRequest) -> str:
        key = req.cache_key()
        if key in self.responses:
            return self.responses[key]
        prompt = req.system_text + "\n" + req.user_text
        for rule in self.rules:
            needles = rule.get("contains") or []
            if isinstance(needles, str):
                needles = [needles]
            if all(n in prompt for n in needles):
                return rule["response"]
        if self.default is not None:
            return self.default
        raise ProviderRejected(f"scripted provider has no response for request {key[:12]}")

    def send(self, req: ChatRequest) -> ProviderResult:
        self.calls.append(req)
        text = self._lookup(req)
        return ProviderResult(
            text=text,
            input_tokens=whitespace_tokens(req.system_text) + whitespace_tokens(req.user_text),
            output_tokens=whitespace_tokens(text),
        )


class FlakyProvider:
    """Wraps a provider, failing with a throttle error for the first *n* calls.

    Test helper for retry behavior; lives here so downstream suites can reuse it.
    """

    def __init__(self, inner: Provider, failures: int):
        self.inner = inner
        self.name = getattr(inner, "name", "flaky")
        self.remaining_failures = failures

    def send(self, req: ChatRequest) -> ProviderResult:
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise ThrottledError("scripted throttle")
        return self.inner.send(req)


class LlmGateway:
    """Retry/cache/accounting wrapper around a provider."""

    def __init__(
        self,
        provider: Provider,
        cache_dir: Optional[str | Path] = None,
        max_retries: int = 3,
        backoff_s: float = 0.2,
        max_inflight: int = 8,
        rate_per_s: Optional[float] = None,
        budget: Optional[Budget] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.budget = budget
        self._sleep = sleep
        self._inflight = threading.Semaphore(max_inflight)
        self._rate_lock = threading.Lock()
        self._min_interval = 1.0 / rate_per_s if rate_per_s else 0.0
        self._next_allowed = 0.0
        self.cache_hits = 0
        self.cache_misses = 0

    # -- cache ---------------------------------------------------------------

    def _cache_path(self, key: str) -> Optional[Path]:
        if not self.cache_dir:
            return None
        return self.cache_dir / key[:2] / f"{key}.json"

    def _cache_read(self, req: ChatRequest) -> Optional[ChatResponse]:
        key = req.cache_key()
        path = self._cache_path(key)
        if not path or not path.exists():
            return None
        started = time.perf_counter()
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (ValueError, OSError):
            log.warning("unreadable cache entry %s; refetching", path.name)
            return None
        return ChatResponse(
            text=data["text"],
            input_tokens=data["input_tokens"],
            output_tokens=data["output_tokens"],
            latency_s=time.perf_counter() - started,
            attempts=1,
            cache_hit=True,
            cache_key=key,
        )

    def _cache_write(self, req: ChatRequest, resp: ChatResponse) -> None:
        path = self._cache_path(req.cache_key())
        if not path:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(
            {
                "text": resp.text,
                "input_tokens": resp.input_tokens,
                "output_tokens": resp.output_tokens,
            },
            ensure_ascii=False,
        )
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, path)  # atomic on POSIX

    # -- rate limiting -------------------------------------------------------

    def _pace(self) -> None:
        if not self._min_interval:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + self._min_interval
        if wait > 0:
            self._sleep(wait)

    # -- main entry points ----------------------------------------------------

    def complete(self, req: ChatRequest) -> ChatResponse:
        """Send a request, returning provider text plus accounting.

        Identical requests (by content hash) are answered from the cache when
        one is configured. Raises :class:`ProviderUnreachable` once retries are
        exhausted, :class:`ProviderRejected` on non-retryable provider errors,
        and :class:`BudgetExceeded` when a configured cap is hit.
        """
        cached = self._cache_read(req)
        if cached is not None:
            self.cache_hits += 1
            return cached
        self.cache_misses += 1
        if self.budget:
            self.budget.check()

        attempts = 0
        last_error: Optional[Exception] = None
        with self._inflight:
            while attempts <= self.max_retries:
                attempts += 1
                self._pace()
                started = time.perf_counter()
                try:
                    result = self.provider.send(req)
                except ThrottledError as exc:
                    last_error = exc
                    if attempts <= self.max_retries:
                        self._sleep(self.backoff_s * (2 ** (attempts - 1)))
                    continue
                latency = time.perf_counter() - started
                input_tokens = result.input_tokens
                if input_tokens is None:
                    input_tokens = whitespace_tokens(req.system_text) + whitespace_tokens(req.user_text)
                output_tokens = result.output_tokens
                if output_tokens is None:
                    output_tokens = whitespace_tokens(result.text)
                resp = ChatResponse(
                    text=result.text,
                    input_tokens=input_tokens,
                    output_tokens=output_tokens,
                    latency_s=latency,
                    attempts=attempts,
                    cache_hit=False,
                    cache_key=req.cache_key(),
                )
                if self.budget:
                    self.budget.spend(input_tokens + output_tokens)
                self._cache_write(req, resp)
                return resp
        raise ProviderUnreachable(
            f"{getattr(self.provider, 'name', 'provider')} unreachable after "
            f"{attempts} attempts: {last_error}"
        )

    T = TypeVar("T")

    def complete_parsed(self, req: ChatRequest, parser: Callable[[str], T]) -> tuple[T, ChatResponse]:
        """complete() + parse, with one re-ask on malformed output.

        The re-ask appends a "return only the object" reminder, which also
        changes the cache key so a cached bad answer is not replayed.
        """
        resp = self.complete(req)
        try:
            return parser(resp.text), resp
        except MalformedOutput:
            retry = req.with_appended(REASK_REMINDER)
            resp = self.complete(retry)
            return parser(resp.text), resp  # raises MalformedOutput if still bad

    def complete_object(self, req: ChatRequest) -> tuple[dict, ChatResponse]:
        return self.complete_parsed(req, parse_structured)


# -- structured-output parsing ------------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n?|\n?```\s*$")


def strip_wrappers(text: str) -> str:
    """Remove markdown code fences and surrounding noise from model output."""
    text = text.strip()
    # fenced block anywhere in the reply: prefer its contents
    m = re.search(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", text, flags=re.DOTALL)
    if m:
        text = m.group(1)
    return _FENCE_RE.sub("", text).strip().strip("`").strip()


def _balanced_region(text: str, open_ch: str, close_ch: str) -> Optional[str]:
    start = text.find(open_ch)
    if start < 0:
        return None
    depth = 0
    in_str: Optional[str] = None
    escape = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == in_str:
                in_str = None
            continue
        if ch in "\"'":
            in_str = ch
        elif ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def parse_structured(text: str) -> dict:
    """Parse one JSON object out of *text*, tolerating fences and wrappers.

    Raises :class:`MalformedOutput` when no key-value object can be recovered.
    """
    candidate = strip_wrappers(text)
    region = _balanced_region(candidate, "{", "}")
    if region is None:
        raise MalformedOutput("no object found in model output")
    for loader in (json.loads, ast.literal_eval):
        try:
            obj = loader(region)
        except (ValueError, SyntaxError):
            continue
        if isinstance(obj, dict):
            return obj
    raise MalformedOutput("object region did not parse")


def parse_list(text: str) -> list:
    """Parse one bracketed list (Python or JSON) out of model output."""
    candidate = strip_wrappers(text)
    region = _balanced_region(candidate, "[", "]")
    if region is None:
        raise MalformedOutput("no list found in model output")
    for loader in (ast.literal_eval, json.loads):
        try:
            obj = loader(region)
        except (ValueError, SyntaxError):
            continue
        if isinstance(obj, (list, tuple)):
            return list(obj)
    raise MalformedOutput("list region did not parse")
