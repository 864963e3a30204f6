"""Chat-completion and embedding backends.

The HTTP clients speak the de-facto industry wire shapes
(``/chat/completions`` and ``/embeddings``); the mock clients are pure
functions of (seed, input) so every pipeline stage can run deterministically
offline. All calls are idempotent reads: retrying a transiently failed
request never duplicates a side effect.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import httpx
import numpy as np

from ..corpus import ImageRef
from ..errors import ClientError, EmbeddingDimError, RetryExhaustedError


@dataclass
class ChatRequest:
    model: str
    messages: list[dict[str, str]]
    temperature: float = 0.0
    max_tokens: int = 1024

    def validate(self) -> None:
        if self.temperature < 0:
            raise ClientError("temperature must be >= 0")
        for msg in self.messages:
            if msg.get("role") not in {"system", "user", "assistant"}:
                raise ClientError(f"invalid message role {msg.get('role')!r}")

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg["role"] == "user":
                return msg["content"]
        return ""


@dataclass
class ChatResponse:
    content: str
    finish_reason: str = "stop"


@dataclass
class EmbeddingVector:
    values: np.ndarray
    dim: int

    @classmethod
    def from_values(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ClientError("embedding must be a non-empty vector")
        if not np.all(np.isfinite(arr)):
            raise ClientError("embedding contains non-finite values")
        return cls(values=arr, dim=int(arr.size))


@dataclass
class ClientStats:
    requests: int = 0
    retries: int = 0
    failures: int = 0


@dataclass
class ClientConfig:
    """Connection settings; the API key may come from the environment."""

    base_url: str = ""
    model: str = "mock"
    api_key: str = ""
    api_key_env: str = "VISTRUCT_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_inflight: int = 8

    def resolve_api_key(self) -> str:
        return os.environ.get(self.api_key_env) or self.api_key


class ChatClient(Protocol):
    stats: ClientStats

    def complete(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingClient(Protocol):
    stats: ClientStats

    def embed(self, text: str, image_ref: ImageRef | None = None) -> EmbeddingVector: ...


def embed_input_text(text: str, image_ref: ImageRef | None) -> str:
    """Canonical embedding input: image context (uri + captions), then text."""
    if image_ref is None:
        return text
    parts = [image_ref.uri, *(image_ref.caption_context or [])]
    if text:
        parts.append(text)
    return "\n".join(parts)


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class _HttpBase:
    def __init__(
        self,
        config: ClientConfig,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.stats = ClientStats()
        self._sleep = sleeper
        self._limiter = threading.BoundedSemaphore(max(1, config.max_inflight))
        headers = {}
        key = config.resolve_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=config.base_url,
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        """POST with bounded exponential-backoff retries on transient errors."""
        attempt = 0
        while True:
            try:
                with self._limiter:
                    self.stats.requests += 1
                    response = self._http.post(path, json=payload)
            except httpx.TransportError as exc:
                if attempt >= self.config.max_retries:
                    self.stats.failures += 1
                    raise RetryExhaustedError(f"{path}: {exc}") from exc
                self._sleep(self.config.backoff_base * 2**attempt)
                attempt += 1
                self.stats.retries += 1
                continue
            if response.status_code in _TRANSIENT_STATUS:
                if attempt >= self.config.max_retries:
                    self.stats.failures += 1
                    raise RetryExhaustedError(f"{path}: HTTP {response.status_code} after {attempt} retries")
                self._sleep(self.config.backoff_base * 2**attempt)
                attempt += 1
                self.stats.retries += 1
                continue
            if response.status_code in (401, 403):
                self.stats.failures += 1
                raise ClientError(f"{path}: authentication failed (HTTP {response.status_code})")
            if response.status_code >= 400:
                self.stats.failures += 1
                raise ClientError(f"{path}: HTTP {response.status_code}: {response.text[:200]}")
            return response.json()


class HttpChatClient(_HttpBase):
    """Chat-completions client: {model, messages, ...} -> choices[0].message."""

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        payload = {
            "model": request.model or self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed chat response: {exc}") from None
        return ChatResponse(content=content, finish_reason=choice.get("finish_reason", "stop"))


class HttpEmbeddingClient(_HttpBase):
    """Embeddings client: {model, input} -> data[0].embedding."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._dim: int | None = None

    def embed(self, text: str, image_ref: ImageRef | None = None) -> EmbeddingVector:
        payload = {"model": self.config.model, "input": embed_input_text(text, image_ref)}
        data = self._post("/embeddings", payload)
        try:
            vector = EmbeddingVector.from_values(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed embedding response: {exc}") from None
        if self._dim is None:
            self._dim = vector.dim
        elif vector.dim != self._dim:
            raise EmbeddingDimError(f"embedding dim drifted from {self._dim} to {vector.dim}")
        return vector


def _digest_seed(*parts: str) -> int:
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


_WORDS = (
    "bench", "bridge", "bus", "canopy", "corner", "crate", "crosswalk", "curb",
    "fence", "fountain", "kiosk", "lamp", "ledge", "market", "mural", "pier",
    "plaza", "rail", "shelf", "sign", "stall", "steps", "table", "window",
)


def _pseudo_phrase(seed: int, n_words: int) -> str:
    rng = np.random.default_rng(seed)
    return " ".join(_WORDS[i] for i in rng.integers(0, len(_WORDS), size=n_words))


class MockChatClient:
    """Deterministic chat backend.

    With a ``script`` it replays the given responses in order (an Exception
    entry is raised instead of returned, for failure-path tests). Without a
    script it inspects the prompt and synthesizes a plausible deterministic
    reply: candidate questions, candidate answers, or a parseable
    rewrite/review response.

    ``rewrite_style="echo"`` reproduces the original text in rewrite replies;
    ``"paraphrase"`` prepends a deterministic marker so the review path sees
    a real change. Fan-out diversity comes from an internal call counter, so
    auto-mode determinism assumes calls arrive in a fixed order.
    """

    def __init__(
        self,
        seed: int = 0,
        script: list[str | Exception] | None = None,
        rewrite_style: str = "echo",
    ):
        self.seed = seed
        self.stats = ClientStats()
        self._script = list(script) if script is not None else None
        self._rewrite_style = rewrite_style
        self._calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        self.stats.requests += 1
        self._calls += 1
        if self._script is not None:
            if not self._script:
                self.stats.failures += 1
                raise ClientError("mock script exhausted")
            entry = self._script.pop(0)
            if isinstance(entry, Exception):
                self.stats.failures += 1
                raise entry
            return ChatResponse(content=entry)
        return ChatResponse(content=self._auto_reply(request.last_user_content()))

    def _auto_reply(self, prompt: str) -> str:
        salt = _digest_seed(str(self.seed), str(self._calls), prompt)
        if "Original Question:" in prompt and "Revised Question:" in prompt:
            return "The Revised Question and Revised Answer are fine. The revision reads naturally and keeps the meaning."
        if "revise the Question and Answer in your writing style" in prompt:
            return self._auto_rewrite(prompt)
        if "Design a conversation" in prompt:
            lines = []
            for t in range(3):
                lines.append(f"Question: What can be said about the {_pseudo_phrase(salt + t, 2)}?")
                lines.append(f"Answer: It sits near the {_pseudo_phrase(salt + 10 + t, 2)}.")
            return "\n".join(lines)
        if "create a plausible question" in prompt and not prompt.rstrip().endswith("Answer:"):
            return (
                f"Question: Why might the {_pseudo_phrase(salt, 2)} matter here?\n"
                f"Answer: Because of the {_pseudo_phrase(salt + 1, 3)}."
            )
        return f"The scene shows a {_pseudo_phrase(salt, 3)} arranged beside a {_pseudo_phrase(salt + 2, 2)}."

    def _auto_rewrite(self, prompt: str) -> str:
        match = re.search(r"\nQuestion: (.*)\n\nAnswer: (.*)$", prompt, flags=re.DOTALL)
        question, answer = (match.group(1), match.group(2)) if match else ("", "")
        if self._rewrite_style == "paraphrase":
            return (
                f"Revised Question: {question}\n"
                f"Revised Answer: Observed in this image, {answer}\n"
                f"Explanation: Rephrased the answer opening to match my usual style."
            )
        return (
            f"Revised Question: {question}\n"
            f"Revised Answer: {answer}\n"
            f"Explanation: The original already matches my writing style."
        )


class MockEmbeddingClient:
    """Deterministic embedding backend: vector = hash(seed, input) -> N(0,1)^dim."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ClientError("embedding dim must be positive")
        self.dim = dim
        self.seed = seed
        self.stats = ClientStats()

    def embed(self, text: str, image_ref: ImageRef | None = None) -> EmbeddingVector:
        self.stats.requests += 1
        source = embed_input_text(text, image_ref)
        rng = np.random.default_rng(_digest_seed(str(self.seed), source))
        return EmbeddingVector.from_values(rng.standard_normal(self.dim))


def build_chat_client(config: dict[str, Any]) -> ChatClient:
    """Factory from a config mapping; backend is "mock" or "http"."""
    backend = config.get("backend", "mock")
    if backend == "mock":
        return MockChatClient(
            seed=int(config.get("seed", 0)),
            rewrite_style=config.get("rewrite_style", "echo"),
        )
    if backend == "http":
        return HttpChatClient(_client_config(config))
    raise ClientError(f"unknown chat backend {backend!r}")


def build_embedding_client(config: dict[str, Any]) -> EmbeddingClient:
    backend = config.get("backend", "mock")
    if backend == "mock":
        return MockEmbeddingClient(dim=int(config.get("dim", 64)), seed=int(config.get("seed", 0)))
    if backend == "http":
        return HttpEmbeddingClient(_client_config(config))
    raise ClientError(f"unknown embedding backend {backend!r}")


def _client_config(config: dict[str, Any]) -> ClientConfig:
    kwargs = {k: config[k] for k in (
        "base_url", "model", "api_key", "api_key_env", "timeout",
        "max_retries", "backoff_base", "max_inflight",
    ) if k in config}
    return ClientConfig(**kwargs)
