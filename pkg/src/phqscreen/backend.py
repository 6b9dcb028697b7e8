"""Chat-completion backends: live HTTP, cassette replay and scripted.

A timed-out request raises ``BackendTimeout`` and is never retried; callers
record the sample as NA. Transport failures are retried with exponential
backoff.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import statistics
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import yaml

from phqscreen.errors import (
    AuthError,
    BackendConfigError,
    BackendTimeout,
    DuplicateFingerprint,
    ProtocolError,
    TransportError,
)

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
BACKEND_KINDS = ("http_chat", "replay", "scripted")
DEFAULT_TIMEOUT_S = 3600.0
RETRY_BACKOFF_S = 1.0


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request has no messages")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens is not None and self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def fingerprint(self) -> str:
        """SHA-256 of the canonical (model, messages, temperature) serialization."""
        canonical = json.dumps(
            {
                "model": self.model_id,
                "messages": [m.to_dict() for m in self.messages],
                "temperature": float(self.temperature),
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    content: str
    latency_s: float = 0.0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    endpoint_url: str = ""
    auth_env_var: str = "OPENAI_API_KEY"
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_retries: int = 3
    max_in_flight: int = 4
    # replay
    cassette_path: str | None = None
    # scripted
    reply: str = ""
    stall_s: float = 0.0
    # request defaults
    model_id: str = "gpt-4"
    temperature: float = 0.0
    max_output_tokens: int | None = None
    context_limit: int = 128_000

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise BackendConfigError(f"unknown backend kind {self.kind!r}")
        if self.timeout_s <= 0:
            raise BackendConfigError("timeout_s must be positive")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise BackendConfigError("max_retries must be >= 0 and max_in_flight >= 1")
        if self.kind == "http_chat" and not self.endpoint_url:
            raise BackendConfigError("http_chat backend needs endpoint_url")

    @classmethod
    def from_file(cls, path: str | Path) -> BackendSpec:
        """Load from a YAML (or JSON) key-value file."""
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise BackendConfigError(f"cannot read backend spec {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise BackendConfigError(f"backend spec {path} is not a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise BackendConfigError(f"unknown backend spec keys: {sorted(unknown)}")
        if data.get("cassette_path") and not os.path.isabs(data["cassette_path"]):
            data["cassette_path"] = str(path.parent / data["cassette_path"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise BackendConfigError(str(exc)) from exc


# -- cassette ---------------------------------------------------------------

@dataclass
class Cassette:
    """Fingerprint -> recorded response. Reads are lock-free; writes are serialized."""

    entries: dict[str, dict] = field(default_factory=dict)
    path: Path | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def load(cls, path: str | Path) -> Cassette:
        path = Path(path)
        entries = {}
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise BackendConfigError(f"cannot read cassette {path}: {exc}") from exc
        for i, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                fp = entry["fingerprint"]
                entry["response_content"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BackendConfigError(f"{path}:{i}: bad cassette entry ({exc})") from exc
            if fp in entries:
                raise BackendConfigError(f"{path}:{i}: duplicate fingerprint {fp}")
            entries[fp] = entry
        return cls(entries, path)

    def get(self, req: ChatRequest) -> ChatResponse | None:
        entry = self.entries.get(req.fingerprint())
        if entry is None:
            return None
        return ChatResponse(entry["response_content"], 0.0)

    def put(self, req: ChatRequest, resp: ChatResponse, overwrite: bool = False) -> dict:
        fp = req.fingerprint()
        entry = {
            "fingerprint": fp,
            "request_digest_fields": {
                "model": req.model_id,
                "temperature": float(req.temperature),
                "n_messages": len(req.messages),
                "last_user_chars": len(req.messages[-1].content),
            },
            "response_content": resp.content,
            "latency_s": round(resp.latency_s, 3),
        }
        with self._lock:
            if fp in self.entries and not overwrite:
                raise DuplicateFingerprint(f"fingerprint {fp[:12]} already recorded")
            self.entries[fp] = entry
        return entry

    def save(self, path: str | Path | None = None) -> None:
        """Write JSON lines sorted by fingerprint so file bytes do not depend on call order."""
        path = Path(path or self.path)
        with self._lock:
            lines = [
                json.dumps(self.entries[fp], sort_keys=True, ensure_ascii=False)
                for fp in sorted(self.entries)
            ]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- backends ---------------------------------------------------------------

class Backend:
    spec: BackendSpec

    def complete(self, req: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass


class HttpChatBackend(Backend):
    """Client for the ``POST <endpoint>/chat/completions`` protocol."""

    def __init__(self, spec: BackendSpec, *, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.spec = spec
        token = os.environ.get(spec.auth_env_var, "")
        if not token and transport is None:
            raise AuthError(f"environment variable {spec.auth_env_var} is not set")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(
            base_url=spec.endpoint_url.rstrip("/"),
            headers=headers,
            timeout=spec.timeout_s,
            transport=transport,
        )
        self._sleep = sleep

    def _body(self, req: ChatRequest) -> dict:
        body = {
            "model": req.model_id,
            "messages": [m.to_dict() for m in req.messages],
            "temperature": req.temperature,
        }
        if req.max_output_tokens is not None:
            body["max_tokens"] = req.max_output_tokens
        return body

    def complete(self, req: ChatRequest) -> ChatResponse:
        body = self._body(req)
        attempt = 0
        while True:
            started = time.monotonic()
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"no reply within {self.spec.timeout_s}s") from exc
            except httpx.TransportError as exc:
                error: Exception = exc
            else:
                latency = time.monotonic() - started
                if resp.status_code in (401, 403):
                    raise AuthError(f"credentials rejected (HTTP {resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    error = TransportError(f"HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return _parse_completion(resp, latency)
            if attempt >= self.spec.max_retries:
                raise TransportError(f"giving up after {attempt + 1} attempts: {error}")
            delay = RETRY_BACKOFF_S * 2**attempt
            log.warning("transport error (%s); retrying in %.0fs", error, delay)
            self._sleep(delay)
            attempt += 1

    def close(self) -> None:
        self._client.close()


def _parse_completion(resp: httpx.Response, latency: float) -> ChatResponse:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion body: {exc}") from exc
    if not isinstance(content, str):
        raise ProtocolError("completion content is not a string")
    usage = data.get("usage") or {}
    return ChatResponse(
        content, latency, usage.get("prompt_tokens"), usage.get("completion_tokens")
    )


class ReplayBackend(Backend):
    def __init__(self, spec: BackendSpec, cassette: Cassette):
        self.spec = spec
        self.cassette = cassette

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.cassette.get(req)
        if resp is None:
            raise ProtocolError(f"cassette miss for fingerprint {req.fingerprint()[:12]}")
        return resp


class ScriptedBackend(Backend):
    """Canned replies for tests and fixture building.

    ``responder`` maps a request to reply text; otherwise ``replies`` are
    handed out in order (the last one repeats), falling back to ``spec.reply``.
    A stall longer than ``spec.timeout_s`` raises ``BackendTimeout`` after
    waiting out the timeout.
    """

    def __init__(self, spec: BackendSpec, responder: Callable[[ChatRequest], str] | None = None,
                 replies: Sequence[str] | None = None):
        self.spec = spec
        self._responder = responder
        self._replies = list(replies or [])
        self._calls = 0
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> ChatResponse:
        if self.spec.stall_s > self.spec.timeout_s:
            time.sleep(self.spec.timeout_s)
            raise BackendTimeout(f"scripted stall {self.spec.stall_s}s > {self.spec.timeout_s}s")
        if self.spec.stall_s:
            time.sleep(self.spec.stall_s)
        if self._responder is not None:
            return ChatResponse(self._responder(req), self.spec.stall_s)
        with self._lock:
            i = self._calls
            self._calls += 1
        if self._replies:
            return ChatResponse(self._replies[min(i, len(self._replies) - 1)], self.spec.stall_s)
        return ChatResponse(self.spec.reply, self.spec.stall_s)


class RecordingBackend(Backend):
    """Forwards to a live backend and stores every response in a cassette."""

    def __init__(self, inner: Backend, cassette: Cassette, overwrite: bool = False):
        self.spec = inner.spec
        self.inner = inner
        self.cassette = cassette
        self.overwrite = overwrite

    def complete(self, req: ChatRequest) -> ChatResponse:
        return record(self.inner, req, self.cassette, self.overwrite)[0]

    def close(self) -> None:
        self.inner.close()


def record(backend: Backend, req: ChatRequest, cassette: Cassette,
           overwrite: bool = False) -> tuple[ChatResponse, dict]:
    if not overwrite and req.fingerprint() in cassette.entries:
        raise DuplicateFingerprint(f"fingerprint {req.fingerprint()[:12]} already recorded")
    resp = backend.complete(req)
    return resp, cassette.put(req, resp, overwrite)


def make_backend(spec: BackendSpec, cassette_path: str | Path | None = None, *,
                 record_to: str | Path | None = None, overwrite: bool = False) -> Backend:
    """Build a backend from its spec; ``record_to`` wraps it in a recorder."""
    if spec.kind == "replay":
        path = cassette_path or spec.cassette_path
        if not path:
            raise BackendConfigError("replay backend needs a cassette path")
        return ReplayBackend(spec, Cassette.load(path))
    inner = HttpChatBackend(spec) if spec.kind == "http_chat" else ScriptedBackend(spec)
    if record_to is None:
        return inner
    path = Path(record_to)
    cassette = Cassette.load(path) if path.exists() else Cassette(path=path)
    return RecordingBackend(inner, cassette, overwrite)


def complete(backend: Backend, req: ChatRequest) -> ChatResponse:
    return backend.complete(req)


# -- latency ----------------------------------------------------------------

@dataclass(frozen=True)
class LatencySummary:
    mean_s: float
    p50_s: float
    max_s: float
    n_timeout: int


def latency_summary(responses: Iterable[ChatResponse | None]) -> LatencySummary:
    """Order statistics over successes; ``None`` entries are timeouts."""
    latencies, timeouts = [], 0
    for r in responses:
        if r is None:
            timeouts += 1
        else:
            latencies.append(r.latency_s)
    if not latencies:
        return LatencySummary(0.0, 0.0, 0.0, timeouts)
    return LatencySummary(
        statistics.fmean(latencies), statistics.median(latencies), max(latencies), timeouts
    )
