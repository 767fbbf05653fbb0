"""Unified access to chat-completion and embedding providers.

The scripted provider makes end-to-end runs bit-reproducible: queued replies
are consumed FIFO (optionally gated on a substring of the latest user
message), and embeddings are deterministic token-hash vectors. A plain
OpenAI-compatible HTTP provider covers live deployments; model choice is
configuration, not contract.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    ProviderTimeout,
    ProviderUnavailable,
    ScriptMismatch,
    StructureValidationFailed,
)

COMPLETION_TIMEOUT_S = 120.0
EMBEDDING_TIMEOUT_S = 30.0
STRUCTURED_RETRIES = 2
HASH_EMBEDDING_DIM = 256


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    response_format: str = "free_text"  # free_text | structured
    structure_schema: str | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role != "system":
            raise ValueError("first message must have role 'system'")

    def latest_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""


@dataclass
class UsageRecord:
    input_tokens: int = 0
    output_tokens: int = 0
    wall_time: float = 0.0

    def add(self, other: "UsageRecord") -> None:
        self.input_tokens += other.input_tokens
        self.output_tokens += other.output_tokens
        self.wall_time += other.wall_time

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_time": self.wall_time,
        }


@dataclass
class CompletionResult:
    text: str
    usage: UsageRecord
    retry_count: int = 0
    parsed: dict | list | None = None


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def _approx_tokens(text: str) -> int:
    return max(1, len(text) // 4)


def hash_embedding(text: str, dim: int = HASH_EMBEDDING_DIM) -> np.ndarray:
    """Deterministic token-hash bag-of-words vector, L2-normalized.

    Token overlap correlates with cosine similarity, which is all the offline
    pipeline needs; identical strings always map to identical vectors.
    """
    vec = np.zeros(dim, dtype=np.float64)
    tokens = [t for t in "".join(c if c.isalnum() else " " for c in text.lower()).split()]
    if not tokens:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(dim)
    for tok in tokens:
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec += rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass
class ScriptedReply:
    content: str
    expect: str | None = None  # substring that must appear in the latest user message


class ScriptedProvider:
    """FIFO reply queue + deterministic embeddings; serialized calls."""

    model_id = "scripted"
    embedding_model_id = f"hash-bow-{HASH_EMBEDDING_DIM}"

    def __init__(self, replies: list[ScriptedReply] | None = None):
        import threading

        self.replies: list[ScriptedReply] = list(replies or [])
        self._lock = threading.Lock()
        self.calls: list[dict] = []

    def push(self, content: str, expect: str | None = None) -> None:
        self.replies.append(ScriptedReply(content=content, expect=expect))

    def complete_raw(self, req: ChatRequest) -> str:
        with self._lock:
            if not self.replies:
                raise ProviderUnavailable("scripted provider: reply queue empty")
            reply = self.replies.pop(0)
            latest = req.latest_user()
            if reply.expect is not None and reply.expect not in latest:
                raise ScriptMismatch(
                    f"scripted reply expected {reply.expect!r} in the latest user "
                    f"message, got: {latest[:200]!r}"
                )
            self.calls.append({"latest_user": latest, "reply": reply.content})
            return reply.content

    def embed_raw(self, texts: list[str]) -> list[np.ndarray]:
        return [hash_embedding(t) for t in texts]


class HttpChatProvider:
    """OpenAI-compatible chat/embeddings endpoint behind env configuration:
    TABLESCOUT_LLM_URL, TABLESCOUT_LLM_KEY, TABLESCOUT_LLM_MODEL,
    TABLESCOUT_EMBED_MODEL."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        embed_model: str | None = None,
    ):
        self.base_url = (base_url or os.environ.get("TABLESCOUT_LLM_URL", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("TABLESCOUT_LLM_KEY", "")
        self.model_id = model or os.environ.get("TABLESCOUT_LLM_MODEL", "gpt-4o-mini")
        self.embedding_model_id = embed_model or os.environ.get(
            "TABLESCOUT_EMBED_MODEL", "text-embedding-3-small"
        )
        if not self.base_url:
            raise ProviderUnavailable("no provider endpoint configured (TABLESCOUT_LLM_URL)")

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def complete_raw(self, req: ChatRequest) -> str:
        import httpx

        body = {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        }
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers=self._headers(),
                timeout=COMPLETION_TIMEOUT_S,
            )
        except httpx.TimeoutException as e:
            raise ProviderTimeout(f"completion timed out: {e}")
        except httpx.HTTPError as e:
            raise ProviderUnavailable(f"provider request failed: {e}")
        if resp.status_code != 200:
            raise ProviderUnavailable(f"provider returned {resp.status_code}: {resp.text[:500]}")
        return resp.json()["choices"][0]["message"]["content"]

    def embed_raw(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        try:
            resp = httpx.post(
                f"{self.base_url}/embeddings",
                json={"model": self.embedding_model_id, "input": texts},
                headers=self._headers(),
                timeout=EMBEDDING_TIMEOUT_S,
            )
        except httpx.TimeoutException as e:
            raise ProviderTimeout(f"embedding timed out: {e}")
        except httpx.HTTPError as e:
            raise ProviderUnavailable(f"provider request failed: {e}")
        if resp.status_code != 200:
            raise ProviderUnavailable(f"provider returned {resp.status_code}: {resp.text[:500]}")
        data = sorted(resp.json()["data"], key=lambda d: d["index"])
        return [np.asarray(d["embedding"], dtype=np.float64) for d in data]


# Structured-reply schemas, one registry for every planner surface.
SCHEMAS: dict[str, dict] = {
    "plan": {
        "type": "object",
        "required": ["analysis", "actions"],
        "properties": {
            "analysis": {"type": "string"},
            "actions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"type": "string"},
                        "params": {"type": "object"},
                    },
                },
            },
        },
    },
    "entity_list": {
        "type": "object",
        "required": ["entities"],
        "properties": {
            "entities": {"type": "array", "items": {"type": "string"}, "maxItems": 16}
        },
    },
    "column_values": {
        "type": "object",
        "required": ["values"],
        "properties": {"values": {"type": "array"}},
    },
}


class LMService:
    """Session-scoped facade: validates structured replies, accumulates usage."""

    def __init__(self, provider):
        self.provider = provider
        self.usage_records: list[UsageRecord] = []

    @property
    def totals(self) -> UsageRecord:
        total = UsageRecord()
        for r in self.usage_records:
            total.add(r)
        return total

    def _call(self, req: ChatRequest) -> tuple[str, UsageRecord]:
        start = time.perf_counter()
        text = self.provider.complete_raw(req)
        usage = UsageRecord(
            input_tokens=sum(_approx_tokens(m.content) for m in req.messages),
            output_tokens=_approx_tokens(text),
            wall_time=time.perf_counter() - start,
        )
        self.usage_records.append(usage)
        return text, usage

    def complete(self, req: ChatRequest) -> CompletionResult:
        if req.response_format != "structured":
            text, usage = self._call(req)
            return CompletionResult(text=text, usage=usage)

        if req.structure_schema not in SCHEMAS:
            raise ValueError(f"unknown structure_schema: {req.structure_schema!r}")
        schema = SCHEMAS[req.structure_schema]
        messages = list(req.messages)
        total = UsageRecord()
        last_err = ""
        for attempt in range(STRUCTURED_RETRIES + 1):
            text, usage = self._call(
                ChatRequest(messages=messages, response_format="free_text")
            )
            total.add(usage)
            parsed, err = _validate_structured(text, schema)
            if err is None:
                return CompletionResult(
                    text=text, usage=total, retry_count=attempt, parsed=parsed
                )
            last_err = err
            messages = messages + [
                ChatMessage("assistant", text),
                ChatMessage(
                    "user",
                    f"The reply did not validate: {err}. "
                    "Reply with a single JSON object matching the required schema.",
                ),
            ]
        raise StructureValidationFailed(
            f"structured reply failed validation after {STRUCTURED_RETRIES} retries: {last_err}"
        )

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        start = time.perf_counter()
        raw = self.provider.embed_raw(list(texts))
        self.usage_records.append(
            UsageRecord(
                input_tokens=sum(_approx_tokens(t) for t in texts),
                output_tokens=0,
                wall_time=time.perf_counter() - start,
            )
        )
        model_id = getattr(self.provider, "embedding_model_id", "unknown")
        return [EmbeddingVector(values=tuple(float(x) for x in v), model_id=model_id) for v in raw]


def _extract_json(text: str):
    """Pull the first JSON object/array out of a reply that may carry prose."""
    text = text.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
    try:
        return json.loads(text), None
    except json.JSONDecodeError:
        pass
    for open_c, close_c in (("{", "}"), ("[", "]")):
        start = text.find(open_c)
        if start == -1:
            continue
        depth = 0
        for i in range(start, len(text)):
            if text[i] == open_c:
                depth += 1
            elif text[i] == close_c:
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start : i + 1]), None
                    except json.JSONDecodeError as e:
                        return None, str(e)
    return None, "no JSON value found in reply"


def _validate_structured(text: str, schema: dict):
    import jsonschema

    parsed, err = _extract_json(text)
    if err is not None:
        return None, err
    try:
        jsonschema.validate(parsed, schema)
    except jsonschema.ValidationError as e:
        return None, e.message
    return parsed, None
