"""Model and retrieval backends: chat-completions over HTTP, fixture mocks, latency recording."""

from __future__ import annotations

import base64
import logging
import mimetypes
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Union

import httpx

from .core import RetrievedContext, ToolKind, read_jsonl
from .errors import BackendRefused, BackendUnreachable, FixtureMiss

log = logging.getLogger(__name__)

IMAGE_TOKEN = "<image>"
DEFAULT_TOP_K = 3


@dataclass(frozen=True)
class ImagePart:
    ref: str


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def text(self) -> str:
        return "".join(p for p in self.parts if isinstance(p, str))


def user_message(text: str, images: Iterable[str] = ()) -> Message:
    """Build a user message, replacing each ``<image>`` token with the next image.

    Images left over after the tokens are exhausted are prepended.
    """
    images = list(images)
    chunks = text.split(IMAGE_TOKEN)
    parts: list[Part] = []
    n_slots = len(chunks) - 1
    leading = images[n_slots:]
    parts.extend(ImagePart(ref) for ref in leading)
    for i, chunk in enumerate(chunks):
        if chunk:
            parts.append(chunk)
        if i < n_slots and i < len(images):
            parts.append(ImagePart(images[i]))
    return Message("user", tuple(parts))


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_output_tokens: int = 512
    # Fixture lookup key, "{stage}:{example_id}"; ignored by live backends.
    key: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")
        for m in self.messages:
            if m.role != "user" and any(isinstance(p, ImagePart) for p in m.parts):
                raise ValueError("image parts are only allowed in user messages")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    @property
    def text(self) -> str:
        return "\n".join(m.text for m in self.messages)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    latency_seconds: float
    backend_id: str

    def __post_init__(self) -> None:
        if self.latency_seconds < 0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class LatencyModel:
    """Average per-call latencies in seconds used for modeled search time."""

    i2i_seconds: float = 6.4
    t2t_seconds: float = 1.4
    t2i_seconds: float = 1.9
    agent_infer_seconds: float = 1.65

    def __post_init__(self) -> None:
        for name in ("i2i_seconds", "t2t_seconds", "t2i_seconds", "agent_infer_seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def for_tool(self, tool: ToolKind) -> float:
        return {ToolKind.I2I: self.i2i_seconds, ToolKind.T2T: self.t2t_seconds, ToolKind.T2I: self.t2i_seconds}[
            ToolKind(tool)
        ]


class ChatBackend(Protocol):
    backend_id: str
    is_mock: bool

    def chat(self, request: ModelRequest) -> ModelResponse: ...


class SearchBackend(Protocol):
    is_mock: bool

    def search_image(self, image: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]: ...

    def search_text(self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]: ...

    def search_text_to_image(
        self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None
    ) -> list[RetrievedContext]: ...


def chat(backend: ChatBackend, request: ModelRequest) -> ModelResponse:
    return backend.chat(request)


def _check_top_k(top_k: int) -> None:
    if not isinstance(top_k, int) or top_k < 1:
        raise ValueError(f"top_k must be a positive integer, got {top_k!r}")


def _to_contexts(tool: ToolKind, hits: Iterable[dict[str, Any]], top_k: int) -> list[RetrievedContext]:
    out = []
    for rank, hit in enumerate(list(hits)[:top_k], 1):
        out.append(
            RetrievedContext(
                source_tool=tool,
                title=str(hit.get("title", "")),
                snippet=str(hit.get("snippet", "")),
                rank=rank,
                image_ref=hit.get("image_ref"),
            )
        )
    return out


# --- fixtures -------------------------------------------------------------

FIXTURE_KINDS = ("chat", "i2i", "t2t", "t2i")


class FixtureSet:
    """Keyed fixture values loaded from JSON Lines ``{key, kind, value}``."""

    def __init__(self, entries: dict[tuple[str, str], Any] | None = None) -> None:
        self._entries: dict[tuple[str, str], Any] = dict(entries or {})

    @classmethod
    def load(cls, path: str | Path) -> FixtureSet:
        entries: dict[tuple[str, str], Any] = {}
        for row in read_jsonl(path):
            kind = row.get("kind")
            if kind not in FIXTURE_KINDS:
                raise ValueError(f"{path}: unknown fixture kind {kind!r}")
            entries[(kind, str(row["key"]))] = row["value"]
        return cls(entries)

    def add(self, kind: str, key: str, value: Any) -> None:
        if kind not in FIXTURE_KINDS:
            raise ValueError(f"unknown fixture kind {kind!r}")
        self._entries[(kind, key)] = value

    def get(self, kind: str, key: str) -> Any:
        return self._entries[(kind, key)]

    def __contains__(self, item: tuple[str, str]) -> bool:
        return item in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def rows(self) -> list[dict[str, Any]]:
        return [{"key": k, "kind": kind, "value": v} for (kind, k), v in self._entries.items()]


def _attempt_fallbacks(key: str) -> list[str]:
    # "plan:q1@2" falls back to "plan:q1" so a single fixture serves all retries.
    if "@" in key:
        base, _, suffix = key.rpartition("@")
        if suffix.isdigit():
            return [key, base]
    return [key]


class MockChatBackend:
    """Deterministic chat backend answering from fixtures by request key."""

    is_mock = True

    def __init__(self, fixtures: FixtureSet, backend_id: str = "mock") -> None:
        self.fixtures = fixtures
        self.backend_id = backend_id
        self._lock = threading.Lock()
        self.calls: list[ModelRequest] = []

    def chat(self, request: ModelRequest) -> ModelResponse:
        if request.key is None:
            raise FixtureMiss("mock backend needs a request key")
        with self._lock:
            self.calls.append(request)
        for key in _attempt_fallbacks(request.key):
            if ("chat", key) in self.fixtures:
                value = self.fixtures.get("chat", key)
                return ModelResponse(text=str(value), latency_seconds=0.0, backend_id=self.backend_id)
        raise FixtureMiss(f"no chat fixture for key {request.key!r}")

    def keys_called(self) -> list[str]:
        with self._lock:
            return [r.key or "" for r in self.calls]


class MockSearchBackend:
    """Fixture retrieval. Looks up ``key`` (falling back to the query text); a miss is an empty result."""

    is_mock = True

    def __init__(self, fixtures: FixtureSet) -> None:
        self.fixtures = fixtures
        self._lock = threading.Lock()
        self.calls: list[tuple[ToolKind, str]] = []

    def _lookup(self, tool: ToolKind, query: str, top_k: int, key: str | None) -> list[RetrievedContext]:
        _check_top_k(top_k)
        with self._lock:
            self.calls.append((tool, key or query))
        for k in (key, query):
            if k is not None and (tool.value, k) in self.fixtures:
                return _to_contexts(tool, self.fixtures.get(tool.value, k), top_k)
        return []

    def search_image(self, image: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]:
        return self._lookup(ToolKind.I2I, image, top_k, key)

    def search_text(self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]:
        if not query:
            raise ValueError("query must be non-empty")
        return self._lookup(ToolKind.T2T, query, top_k, key)

    def search_text_to_image(
        self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None
    ) -> list[RetrievedContext]:
        if not query:
            raise ValueError("query must be non-empty")
        return self._lookup(ToolKind.T2I, query, top_k, key)


# --- HTTP -----------------------------------------------------------------


@dataclass
class RetryPolicy:
    max_attempts: int = 2
    base_delay: float = 1.0
    factor: float = 2.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def run(self, fn: Callable[[], Any]) -> Any:
        delay = self.base_delay
        for attempt in range(1, self.max_attempts + 1):
            try:
                return fn()
            except BackendUnreachable:
                if attempt == self.max_attempts:
                    raise
                log.warning("backend unreachable, retrying in %.1fs", delay)
                self.sleep(delay)
                delay *= self.factor
        raise AssertionError("unreachable")


def image_url(ref: str) -> str:
    """Pass URLs through; inline local files as base64 data URLs."""
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    path = Path(ref)
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    data = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{data}"


def encode_messages(messages: Iterable[Message]) -> list[dict[str, Any]]:
    out = []
    for m in messages:
        if all(isinstance(p, str) for p in m.parts):
            out.append({"role": m.role, "content": m.text})
            continue
        content = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                content.append({"type": "image_url", "image_url": {"url": image_url(p.ref)}})
            else:
                content.append({"type": "text", "text": p})
        out.append({"role": m.role, "content": content})
    return out


class _HttpBase:
    is_mock = False

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        *,
        client: httpx.Client | None = None,
        retry: RetryPolicy | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)
        self.retry = retry or RetryPolicy()

    def _post(self, path: str, payload: dict[str, Any]) -> tuple[dict[str, Any], float]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = self.base_url + path

        def once() -> tuple[dict[str, Any], float]:
            start = time.perf_counter()
            try:
                resp = self._client.post(url, json=payload, headers=headers, timeout=self.timeout)
            except httpx.TransportError as exc:
                raise BackendUnreachable(f"{url}: {exc}") from exc
            elapsed = time.perf_counter() - start
            if resp.status_code >= 400:
                raise BackendRefused(f"{url}: HTTP {resp.status_code}", status_code=resp.status_code)
            try:
                body = resp.json()
            except ValueError as exc:
                raise BackendUnreachable(f"{url}: response is not JSON") from exc
            if not isinstance(body, dict):
                raise BackendUnreachable(f"{url}: unexpected response shape")
            return body, elapsed

        return self.retry.run(once)

    def close(self) -> None:
        self._client.close()


class HttpChatBackend(_HttpBase):
    """Chat-completions client (``POST {base_url}/chat/completions``)."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0, **kw: Any) -> None:
        super().__init__(base_url, api_key, timeout, **kw)
        self.model = model
        self.backend_id = f"http:{model}"

    def chat(self, request: ModelRequest) -> ModelResponse:
        payload = {
            "model": self.model,
            "messages": encode_messages(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        body, elapsed = self._post("/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnreachable("malformed chat-completions response") from exc
        if isinstance(content, list):
            content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
        return ModelResponse(text=content or "", latency_seconds=elapsed, backend_id=self.backend_id)


class HttpSearchBackend(_HttpBase):
    """Retrieval over HTTP.

    Request: ``POST {base_url}/search`` with ``{"tool", "query" | "image", "top_k"}``.
    Response: ``{"results": [{"title", "snippet", "image_ref"?}, ...]}``.
    """

    def _search(self, tool: ToolKind, field_name: str, value: str, top_k: int) -> list[RetrievedContext]:
        _check_top_k(top_k)
        if field_name == "image":
            value = image_url(value)
        body, _ = self._post("/search", {"tool": tool.value, field_name: value, "top_k": top_k})
        results = body.get("results") or []
        if not isinstance(results, list):
            raise BackendUnreachable("malformed search response")
        return _to_contexts(tool, (r for r in results if isinstance(r, dict)), top_k)

    def search_image(self, image: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]:
        return self._search(ToolKind.I2I, "image", image, top_k)

    def search_text(self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None) -> list[RetrievedContext]:
        if not query:
            raise ValueError("query must be non-empty")
        return self._search(ToolKind.T2T, "query", query, top_k)

    def search_text_to_image(
        self, query: str, top_k: int = DEFAULT_TOP_K, *, key: str | None = None
    ) -> list[RetrievedContext]:
        if not query:
            raise ValueError("query must be non-empty")
        return self._search(ToolKind.T2I, "query", query, top_k)


def search_image(backend: SearchBackend, image: str, top_k: int = DEFAULT_TOP_K, **kw: Any) -> list[RetrievedContext]:
    return backend.search_image(image, top_k, **kw)


def search_text(backend: SearchBackend, query: str, top_k: int = DEFAULT_TOP_K, **kw: Any) -> list[RetrievedContext]:
    return backend.search_text(query, top_k, **kw)


def search_text_to_image(
    backend: SearchBackend, query: str, top_k: int = DEFAULT_TOP_K, **kw: Any
) -> list[RetrievedContext]:
    return backend.search_text_to_image(query, top_k, **kw)


# --- latency recording ----------------------------------------------------


@dataclass(frozen=True)
class RecorderTotals:
    counts: dict[str, int]
    measured: dict[str, float]

    def count(self, tool: ToolKind | str) -> int:
        return self.counts.get(ToolKind(tool).value, 0)

    def seconds(self, tool: ToolKind | str) -> float:
        return self.measured.get(ToolKind(tool).value, 0.0)


class LatencyRecorder:
    """Thread-safe per-tool call counter and measured-time accumulator."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: Counter[str] = Counter()
        self._seconds: defaultdict[str, float] = defaultdict(float)

    def record(self, tool: ToolKind | str, measured_seconds: float) -> RecorderTotals:
        if measured_seconds < 0:
            raise ValueError("measured_seconds must be >= 0")
        name = ToolKind(tool).value
        with self._lock:
            self._counts[name] += 1
            self._seconds[name] += measured_seconds
            return self._snapshot()

    def merge(self, other: LatencyRecorder) -> None:
        totals = other.totals()
        with self._lock:
            self._counts.update(totals.counts)
            for k, v in totals.measured.items():
                self._seconds[k] += v

    def totals(self) -> RecorderTotals:
        with self._lock:
            return self._snapshot()

    def _snapshot(self) -> RecorderTotals:
        return RecorderTotals(counts=dict(self._counts), measured=dict(self._seconds))


def record(recorder: LatencyRecorder, tool: ToolKind | str, measured_seconds: float) -> RecorderTotals:
    return recorder.record(tool, measured_seconds)
