"""Uniform client for chat-completion and embedding backends.

Remote backends speak the de-facto chat-completions JSON shape (messages
array, temperature, max tokens) over HTTPS, so any compatible endpoint
works. Offline runs use MockScript backends: a mapping from a stable
request fingerprint to a canned response, which makes the whole pipeline a
pure function of inputs and seeds.

Retry policy: transport errors and HTTP 429/5xx are retried with
exponential backoff up to max_attempts; other 4xx statuses fail
immediately. No other module performs its own networking.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .jsonlio import read_jsonl, write_jsonl
from .seeds import SplitMix64, stable_hash64

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for gateway failures."""


class AuthMissing(GatewayError):
    """The environment variable holding the backend key is not set."""


class ExhaustedRetries(GatewayError):
    """Request failed after all permitted attempts; carries the last HTTP status."""

    def __init__(self, message: str, last_status: int | None = None):
        super().__init__(message)
        self.last_status = last_status


class MalformedResponse(GatewayError):
    """Backend returned a payload that does not match the expected shape."""


class MockScriptMiss(GatewayError):
    """MockScript has no entry for the request fingerprint and no default."""


class EmptyBatch(GatewayError):
    """Batch operations require at least one request."""


class DimensionMismatch(GatewayError):
    """Embedding vectors in one batch do not share a dimension."""


@dataclass
class ChatRequest:
    model_id: str
    messages: list[tuple[str, str]]
    temperature: float = 0.0
    max_output_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        self.messages = [(str(r), str(c)) for r, c in self.messages]
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"invalid role: {role!r}")
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("ChatRequest requires at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass
class ChatResponse:
    content: str
    finish_reason: str = "stop"  # stop | length | error
    usage: tuple[int, int] = (0, 0)  # (prompt_tokens, completion_tokens)
    error: str | None = None

    def to_dict(self) -> dict:
        rec = {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "usage": list(self.usage),
        }
        if self.error is not None:
            rec["error"] = self.error
        return rec

    @classmethod
    def from_dict(cls, obj: dict) -> "ChatResponse":
        usage = obj.get("usage", [0, 0])
        return cls(
            content=obj.get("content", ""),
            finish_reason=obj.get("finish_reason", "stop"),
            usage=(int(usage[0]), int(usage[1])),
            error=obj.get("error"),
        )


@dataclass
class BackendConfig:
    endpoint_url: str
    auth_env_var: str
    model_id: str = ""  # used by the embeddings endpoint; chat requests carry their own
    max_in_flight: int = 4
    max_attempts: int = 3
    base_backoff: float = 0.5
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def request_fingerprint(request: ChatRequest) -> str:
    """Stable fingerprint: SHA-256 hex of the canonical JSON serialization
    of (model_id, messages, seed) with sorted keys and compact separators.
    Survives reordering of map keys by construction."""
    canonical = json.dumps(
        {
            "model_id": request.model_id,
            "messages": [[role, content] for role, content in request.messages],
            "seed": request.seed,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class MockScript:
    """Canned responses keyed by request fingerprint, with an optional
    default for unscripted requests. Lookups are pure."""

    entries: dict[str, ChatResponse] = field(default_factory=dict)
    default_response: ChatResponse | None = None

    def add(self, request: ChatRequest, response: ChatResponse) -> str:
        fp = request_fingerprint(request)
        self.entries[fp] = response
        return fp

    def lookup(self, request: ChatRequest) -> ChatResponse:
        fp = request_fingerprint(request)
        if fp in self.entries:
            return self.entries[fp]
        if self.default_response is not None:
            return self.default_response
        raise MockScriptMiss(f"no scripted response for fingerprint {fp}")

    def save(self, path: str | Path) -> None:
        records = [
            {"fingerprint": fp, "response": resp.to_dict()}
            for fp, resp in sorted(self.entries.items())
        ]
        if self.default_response is not None:
            records.append({"default": True, "response": self.default_response.to_dict()})
        write_jsonl(path, records)

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        script = cls()
        for rec in read_jsonl(path):
            resp = ChatResponse.from_dict(rec["response"])
            if rec.get("default"):
                script.default_response = resp
            else:
                script.entries[rec["fingerprint"]] = resp
        return script


Backend = BackendConfig | MockScript

# (url, payload, headers, timeout) -> (status_code, parsed_body_or_None)
Transport = Callable[[str, dict, dict, float], tuple[int, dict | None]]

# patchable in tests so backoff does not slow the suite
_sleep = time.sleep


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float):
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = None
    return resp.status_code, body


def _auth_headers(backend: BackendConfig) -> dict:
    key = os.environ.get(backend.auth_env_var)
    if not key:
        raise AuthMissing(f"environment variable {backend.auth_env_var!r} is not set")
    return {"Authorization": f"Bearer {key}"}


def _post_with_retries(
    backend: BackendConfig,
    payload: dict,
    transport: Transport,
) -> dict:
    headers = _auth_headers(backend)
    last_status: int | None = None
    for attempt in range(1, backend.max_attempts + 1):
        try:
            status, body = transport(backend.endpoint_url, payload, headers, backend.timeout)
        except Exception as exc:  # transport-level failure: retryable
            last_status = None
            logger.warning("transport error on attempt %d: %s", attempt, exc)
        else:
            if status == 200:
                if body is None:
                    raise MalformedResponse("backend returned non-JSON body")
                return body
            last_status = status
            if status != 429 and 400 <= status < 500:
                raise ExhaustedRetries(
                    f"non-retryable HTTP {status} from {backend.endpoint_url}",
                    last_status=status,
                )
            logger.warning("HTTP %d on attempt %d", status, attempt)
        if attempt < backend.max_attempts:
            _sleep(backend.base_backoff * (2 ** (attempt - 1)))
    raise ExhaustedRetries(
        f"request failed after {backend.max_attempts} attempts", last_status=last_status
    )


def _parse_chat_body(body: dict) -> ChatResponse:
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"]
        finish = choice.get("finish_reason", "stop")
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected chat-completion shape: {exc}") from exc
    if content is None:
        raise MalformedResponse("null content with non-error finish_reason")
    usage = body.get("usage", {})
    return ChatResponse(
        content=str(content),
        finish_reason=finish if finish in ("stop", "length") else "stop",
        usage=(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
    )


def complete(
    request: ChatRequest,
    backend: Backend,
    transport: Transport | None = None,
) -> ChatResponse:
    """Run one chat completion against a remote or mock backend.

    Remote calls verify the auth env var before touching the network and
    retry per the backend's policy. Blocking and thread-safe.
    """
    if isinstance(backend, MockScript):
        return backend.lookup(request)
    payload = {
        "model": request.model_id,
        "messages": [{"role": r, "content": c} for r, c in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }
    if request.seed is not None:
        payload["seed"] = request.seed
    body = _post_with_retries(backend, payload, transport or _requests_transport)
    return _parse_chat_body(body)


def complete_batch(
    requests_: list[ChatRequest],
    backend: Backend,
    max_in_flight: int | None = None,
    transport: Transport | None = None,
) -> list[ChatResponse]:
    """Run a batch of completions; responses come back in request order.

    At most max_in_flight requests are outstanding at once. Per-item
    failures are reported positionally as finish_reason="error" responses
    and never abort the batch.
    """
    if not requests_:
        raise EmptyBatch("complete_batch requires at least one request")
    if max_in_flight is None:
        max_in_flight = backend.max_in_flight if isinstance(backend, BackendConfig) else 8
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")

    def run_one(req: ChatRequest) -> ChatResponse:
        try:
            return complete(req, backend, transport=transport)
        except GatewayError as exc:
            return ChatResponse(content="", finish_reason="error", error=str(exc))

    results: list[ChatResponse | None] = [None] * len(requests_)
    with ThreadPoolExecutor(max_workers=min(max_in_flight, len(requests_))) as pool:
        futures = {pool.submit(run_one, req): i for i, req in enumerate(requests_)}
        for fut, i in futures.items():
            results[i] = fut.result()
    return results  # type: ignore[return-value]


class HashEmbedder:
    """Deterministic offline embedding backend: each text maps to a
    pseudo-random vector drawn from a splitmix64 stream seeded by the text
    hash. Identical texts always yield identical vectors."""

    def __init__(self, dim: int = 64, salt: str = ""):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.salt = salt

    def embed_one(self, text: str) -> list[float]:
        rng = SplitMix64(stable_hash64(f"{self.salt}\x1f{text}"))
        return [(rng.next_u64() / 2**63) - 1.0 for _ in range(self.dim)]


class ScriptedEmbedder:
    """Embedding backend with explicit per-text vectors, for tests."""

    def __init__(self, vectors: dict[str, list[float]]):
        self.vectors = dict(vectors)

    def embed_one(self, text: str) -> list[float]:
        try:
            return list(self.vectors[text])
        except KeyError:
            raise MockScriptMiss(f"no scripted embedding for text {text!r}") from None


EmbeddingBackend = BackendConfig | HashEmbedder | ScriptedEmbedder


def _normalize(vec: list[float]) -> list[float]:
    norm = sum(x * x for x in vec) ** 0.5
    if norm == 0.0:
        raise MalformedResponse("zero vector cannot be unit-normalized")
    return [x / norm for x in vec]


def embed(
    texts: list[str],
    backend: EmbeddingBackend,
    model_id: str = "text-embedding-3-small",
    transport: Transport | None = None,
) -> list[list[float]]:
    """Embed a batch of texts; returns unit-normalized vectors, one per
    text, all of equal dimension."""
    if not texts:
        raise EmptyBatch("embed requires at least one text")
    for t in texts:
        if not t:
            raise EmptyBatch("embed requires non-empty texts")
    if isinstance(backend, (HashEmbedder, ScriptedEmbedder)):
        raw = [backend.embed_one(t) for t in texts]
    else:
        payload = {"model": model_id or backend.model_id, "input": texts}
        body = _post_with_retries(backend, payload, transport or _requests_transport)
        try:
            data = body["data"]
            raw = [list(map(float, item["embedding"])) for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embeddings shape: {exc}") from exc
        if len(raw) != len(texts):
            raise MalformedResponse(
                f"backend returned {len(raw)} embeddings for {len(texts)} texts"
            )
    dims = {len(v) for v in raw}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedding dimensions differ within batch: {sorted(dims)}")
    return [_normalize(v) for v in raw]
