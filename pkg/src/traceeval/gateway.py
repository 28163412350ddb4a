"""Single access point to completion models and documentation retrieval.

Every model call and doc lookup in the package goes through :class:`Gateway`,
which keeps an ordered transcript and enforces per-stage call budgets. Two
backends are provided: :class:`ScriptedBackend` (offline, deterministic) and
:class:`HttpBackend` (JSON chat-completion endpoint).
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import urllib.error
import urllib.request
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Protocol

from . import TraceEvalError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_TOOL_BUDGET = 50
NO_DOCS = "[no docs available]"


class GatewayError(TraceEvalError):
    pass


class BudgetExceededError(GatewayError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_output_tokens: int = 4096
    tool_budget: int = DEFAULT_TOOL_BUDGET

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a model request needs at least one message")
        first = next((m for m in self.messages if m.role != "system"), None)
        if first is None or first.role != "user":
            raise ValueError("first non-system message must come from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.tool_budget < 0:
            raise ValueError("tool_budget must be >= 0")

    @classmethod
    def of(cls, *pairs: tuple[str, str], **kw: Any) -> "ModelRequest":
        return cls(tuple(Message(r, c) for r, c in pairs), **kw)

    @property
    def prompt_text(self) -> str:
        return "\n\n".join(m.content for m in self.messages)

    def digest(self) -> str:
        payload = {
            "messages": [[m.role, m.content] for m in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }
        return _sha(json.dumps(payload, sort_keys=True, ensure_ascii=False))


@dataclass(frozen=True)
class ModelResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class DocQuery:
    library: str
    question: str

    def __post_init__(self) -> None:
        if not self.library.strip() or not self.question.strip():
            raise ValueError("library and question must be non-empty")


@dataclass(frozen=True)
class Exchange:
    index: int
    kind: str  # "completion" | "docs"
    stage: str | None
    request_digest: str
    response_digest: str
    input_tokens: int
    output_tokens: int
    messages: tuple[tuple[str, str], ...] = ()
    cached: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "kind": self.kind,
            "stage": self.stage,
            "request_digest": self.request_digest,
            "response_digest": self.response_digest,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "cached": self.cached,
            "messages": [list(m) for m in self.messages],
        }


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def count_tokens(text: str) -> int:
    """Whitespace token count used by the offline backend."""
    return len(text.split())


class Backend(Protocol):
    def complete(self, request: ModelRequest) -> ModelResponse: ...

    def retrieve_docs(self, query: DocQuery) -> str | None: ...


@dataclass
class ScriptRule:
    text: str
    digest: str | None = None
    contains: tuple[str, ...] = ()

    def matches(self, request: ModelRequest) -> bool:
        if self.digest is not None:
            return self.digest == request.digest()
        prompt = request.prompt_text
        return bool(self.contains) and all(c in prompt for c in self.contains)


@dataclass
class ScriptedBackend:
    """Deterministic offline backend.

    Responses are chosen by, in order: exact request digest, the first rule
    whose ``contains`` strings all occur in the prompt, an optional Python
    ``responder`` callable, then ``default``. Doc lookups are served from a
    ``{library: {question: text}}`` fixture.
    """

    rules: list[ScriptRule] = field(default_factory=list)
    default: str | None = None
    docs: dict[str, dict[str, str]] = field(default_factory=dict)
    responder: Callable[[ModelRequest], str | None] | None = None
    doc_calls: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedBackend":
        rules = []
        for entry in data.get("responses", []):
            contains = entry.get("contains", ())
            if isinstance(contains, str):
                contains = (contains,)
            rules.append(ScriptRule(entry["text"], entry.get("digest"), tuple(contains)))
        return cls(rules=rules, default=data.get("default"), docs=data.get("docs", {}))

    def complete(self, request: ModelRequest) -> ModelResponse:
        digest = request.digest()
        text = next((r.text for r in self.rules if r.digest == digest), None)
        if text is None:
            text = next((r.text for r in self.rules if r.digest is None and r.matches(request)), None)
        if text is None and self.responder is not None:
            text = self.responder(request)
        if text is None:
            text = self.default
        if text is None:
            raise GatewayError(f"no scripted response for request {digest[:12]}")
        return ModelResponse(text, count_tokens(request.prompt_text), count_tokens(text))

    def retrieve_docs(self, query: DocQuery) -> str | None:
        self.doc_calls += 1
        return self.docs.get(query.library, {}).get(query.question)


@dataclass
class HttpBackend:
    """Chat-completion over JSON/HTTP: ``{"model", "messages", ...}`` in, text out.

    The response may be OpenAI-shaped (``choices[0].message.content``) or a
    flat ``{"text": ...}`` object. Doc retrieval POSTs ``{"library",
    "question"}`` to ``docs_endpoint`` and reads ``{"text": ...}``.
    """

    endpoint: str
    model_id: str
    docs_endpoint: str | None = None
    timeout: float = 120.0
    api_key: str | None = None

    def _post(self, url: str, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(
            url, data=json.dumps(payload).encode("utf-8"), headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError) as exc:
            raise GatewayError(f"backend unreachable at {url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise GatewayError(f"backend at {url} returned non-JSON") from exc

    def complete(self, request: ModelRequest) -> ModelResponse:
        data = self._post(
            self.endpoint,
            {
                "model": self.model_id,
                "messages": [{"role": m.role, "content": m.content} for m in request.messages],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            },
        )
        if "choices" in data:
            text = data["choices"][0]["message"]["content"]
        else:
            text = data.get("text", "")
        usage = data.get("usage", {})
        return ModelResponse(
            text or "",
            int(usage.get("prompt_tokens", usage.get("input_tokens", 0))),
            int(usage.get("completion_tokens", usage.get("output_tokens", 0))),
        )

    def retrieve_docs(self, query: DocQuery) -> str | None:
        if not self.docs_endpoint:
            return None
        data = self._post(self.docs_endpoint, {"library": query.library, "question": query.question})
        return data.get("text") or None


class Gateway:
    """Shared, thread-safe front for one backend with transcript and budgets."""

    def __init__(self, backend: Backend, default_temperature: float = 0.0):
        self.backend = backend
        self.default_temperature = default_temperature
        self._lock = threading.Lock()
        self._transcript: list[Exchange] = []
        self._doc_cache: dict[tuple[str, str], str] = {}
        self._stage: str | None = None
        self._budget: int | None = None
        self._stage_calls = 0

    @contextmanager
    def stage(self, name: str, budget: int | None = DEFAULT_TOOL_BUDGET) -> Iterator[None]:
        """Attribute calls to ``name`` and cap them at ``budget``."""
        prev = (self._stage, self._budget, self._stage_calls)
        self._stage, self._budget, self._stage_calls = name, budget, 0
        try:
            yield
        finally:
            self._stage, self._budget, self._stage_calls = prev

    def _charge(self) -> str | None:
        # budgets are per stage scope; calls outside any scope are uncapped
        if self._stage is not None and self._budget is not None and self._stage_calls >= self._budget:
            raise BudgetExceededError(
                f"stage {self._stage} exceeded its budget of {self._budget} calls"
            )
        self._stage_calls += 1
        return self._stage

    def complete(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            stage = self._charge()
        response = self.backend.complete(request)
        if not response.text or not response.text.strip():
            raise GatewayError("model returned an empty response")
        with self._lock:
            self._transcript.append(
                Exchange(
                    index=len(self._transcript),
                    kind="completion",
                    stage=stage,
                    request_digest=request.digest(),
                    response_digest=_sha(response.text),
                    input_tokens=response.input_tokens,
                    output_tokens=response.output_tokens,
                    messages=tuple((m.role, m.content) for m in request.messages),
                )
            )
        return response

    def ask(self, prompt: str, system: str | None = None, **kw: Any) -> str:
        pairs = ([("system", system)] if system else []) + [("user", prompt)]
        kw.setdefault("temperature", self.default_temperature)
        return self.complete(ModelRequest.of(*pairs, **kw)).text

    def retrieve_docs(self, query: DocQuery) -> str:
        key = (query.library, query.question)
        with self._lock:
            cached = self._doc_cache.get(key)
        if cached is None:
            text = self.backend.retrieve_docs(query)
            cached = text if text else NO_DOCS
            with self._lock:
                self._doc_cache.setdefault(key, cached)
            hit = False
        else:
            hit = True
        with self._lock:
            self._transcript.append(
                Exchange(
                    index=len(self._transcript),
                    kind="docs",
                    stage=self._stage,
                    request_digest=_sha(json.dumps(list(key))),
                    response_digest=_sha(cached),
                    input_tokens=0,
                    output_tokens=0,
                    cached=hit,
                )
            )
        return cached

    def transcript(self) -> list[Exchange]:
        with self._lock:
            return list(self._transcript)

    def calls(self, kind: str = "completion", stage: str | None = None) -> int:
        return sum(
            1 for e in self.transcript() if e.kind == kind and (stage is None or e.stage == stage)
        )

    def token_totals(self) -> tuple[int, int]:
        entries = self.transcript()
        return sum(e.input_tokens for e in entries), sum(e.output_tokens for e in entries)

    def write_transcript(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.transcript():
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
