"""Model provider boundary.

Every model interaction in the system flows through one of these providers:
a live OpenAI-compatible HTTP client, a deterministic scripted provider for
tests, and a record/replay pair for offline reproduction of live exchanges.
No other module performs network activity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import httpx

from .clock import SYSTEM_CLOCK, Clock
from .errors import (
    ConfigurationError,
    ProviderProtocolError,
    ProviderUnavailableError,
    ReplayMissError,
    ScriptExhaustedError,
    ValidationError,
)
from .model import SCHEMA_VERSION, FieldSpec, ToolSpec, canonical_json

logger = logging.getLogger(__name__)

ROLES = ("user", "assistant", "tool")
RESPONSE_FORMATS = ("free_text", "structured")

# Mirrors the reference deployment; plain configuration text, nothing keys
# off the value.
DEFAULT_MODEL_NAME = "gpt-4.1"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    tool_call_ref: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"message role must be one of {ROLES}, got {self.role!r}")
        if self.role == "tool" and not self.tool_call_ref:
            raise ValidationError("tool messages must carry a tool_call_ref")

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_call_ref is not None:
            doc["tool_call_ref"] = self.tool_call_ref
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ChatMessage":
        return cls(
            role=doc["role"],
            content=doc["content"],
            tool_call_ref=doc.get("tool_call_ref"),
        )


def declare_tools(tools: Iterable[ToolSpec]) -> tuple[dict, ...]:
    """Provider-neutral tool declarations derived from ToolSpec."""
    return tuple(
        {
            "name": tool.name,
            "description": tool.description,
            "parameters_schema": {
                name: spec.to_dict() for name, spec in tool.parameters_schema.items()
            },
        }
        for tool in tools
    )


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    messages: tuple[ChatMessage, ...]
    tool_declarations: tuple[dict, ...] = ()
    temperature: float = 0.0
    response_format: str = "free_text"

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "tool_declarations", tuple(self.tool_declarations))
        if not (0 <= self.temperature <= 2):
            raise ValidationError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.response_format not in RESPONSE_FORMATS:
            raise ValidationError(
                f"response_format must be one of {RESPONSE_FORMATS}, "
                f"got {self.response_format!r}"
            )
        saw_assistant = False
        for message in self.messages:
            if message.role == "assistant":
                saw_assistant = True
            elif message.role == "tool" and not saw_assistant:
                raise ValidationError(
                    "tool messages must follow an assistant message that made the call"
                )

    def to_dict(self) -> dict:
        return {
            "system_prompt": self.system_prompt,
            "messages": [m.to_dict() for m in self.messages],
            "tool_declarations": [dict(d) for d in self.tool_declarations],
            "temperature": self.temperature,
            "response_format": self.response_format,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ChatRequest":
        return cls(
            system_prompt=doc["system_prompt"],
            messages=tuple(ChatMessage.from_dict(m) for m in doc["messages"]),
            tool_declarations=tuple(doc.get("tool_declarations", ())),
            temperature=doc.get("temperature", 0.0),
            response_format=doc.get("response_format", "free_text"),
        )


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    tool_name: str
    arguments: Mapping[str, Any]

    def __post_init__(self):
        object.__setattr__(self, "arguments", dict(self.arguments))

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "tool_name": self.tool_name,
            "arguments": dict(self.arguments),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ToolCall":
        return cls(
            call_id=doc["call_id"],
            tool_name=doc["tool_name"],
            arguments=doc.get("arguments", {}),
        )


@dataclass(frozen=True)
class ChatResponse:
    kind: str
    text: str | None = None
    tool_calls: tuple[ToolCall, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("text", "tool_call"):
            raise ValidationError(f"response kind must be text or tool_call, got {self.kind!r}")
        if self.kind == "text" and self.text is None:
            raise ValidationError("text responses must carry text")
        if self.kind == "tool_call":
            if not self.tool_calls:
                raise ValidationError("tool_call responses must carry at least one call")
            object.__setattr__(self, "tool_calls", tuple(self.tool_calls))

    @classmethod
    def of_text(cls, text: str) -> "ChatResponse":
        return cls(kind="text", text=text)

    @classmethod
    def of_tool_call(
        cls, tool_name: str, arguments: Mapping[str, Any] | None = None, call_id: str = "call-1"
    ) -> "ChatResponse":
        return cls(
            kind="tool_call",
            tool_calls=(ToolCall(call_id=call_id, tool_name=tool_name,
                                 arguments=arguments or {}),),
        )

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.text is not None:
            doc["text"] = self.text
        if self.tool_calls is not None:
            doc["tool_calls"] = [c.to_dict() for c in self.tool_calls]
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ChatResponse":
        return cls(
            kind=doc["kind"],
            text=doc.get("text"),
            tool_calls=(
                tuple(ToolCall.from_dict(c) for c in doc["tool_calls"])
                if doc.get("tool_calls") is not None
                else None
            ),
        )


@dataclass(frozen=True)
class ProviderConfig:
    provider_kind: str = "scripted"
    model_name: str = DEFAULT_MODEL_NAME
    api_key_env_var: str = "OPENAI_API_KEY"
    base_endpoint: str = "https://api.openai.com/v1"
    max_retries: int = 3
    timeout: float = 60.0

    def __post_init__(self):
        if self.provider_kind not in ("live", "scripted", "replay"):
            raise ValidationError(f"unknown provider_kind {self.provider_kind!r}")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValidationError("timeout must be positive")

    def to_dict(self) -> dict:
        return {
            "provider_kind": self.provider_kind,
            "model_name": self.model_name,
            "api_key_env_var": self.api_key_env_var,
            "base_endpoint": self.base_endpoint,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ProviderConfig":
        return cls(**{f: doc[f] for f in cls.__dataclass_fields__ if f in doc})


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json_text(text: str) -> Any:
    """Parse a structured model reply as JSON, tolerating a markdown fence.

    Raises json.JSONDecodeError on anything else; callers own the re-ask
    policy."""
    candidate = text.strip()
    fenced = _FENCE_RE.search(candidate)
    if fenced:
        candidate = fenced.group(1).strip()
    return json.loads(candidate)


def request_digest(request: ChatRequest) -> str:
    """Stable lookup key: sha256 over the canonical serialization of the
    logical request. response_format is presentation, not identity, and is
    deliberately excluded."""
    payload = canonical_json(
        {
            "system_prompt": request.system_prompt,
            "messages": [m.to_dict() for m in request.messages],
            "tool_declarations": [dict(d) for d in request.tool_declarations],
            "temperature": request.temperature,
        }
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# scripted
# ---------------------------------------------------------------------------


class ScriptedProvider:
    """Deterministic provider for tests.

    Either a fixed response list consumed by a private cursor, or a responder
    callable computing the response from the request. Exhausting a fixed
    script is a loud harness error, never a silent fallback.
    """

    def __init__(
        self,
        responses: Sequence[ChatResponse] = (),
        responder: Callable[[ChatRequest], ChatResponse] | None = None,
        name: str = "script",
    ):
        if responder is not None and responses:
            raise ConfigurationError("pass either responses or a responder, not both")
        self._responses = list(responses)
        self._responder = responder
        self._cursor = 0
        self._lock = threading.Lock()
        self.name = name
        self.requests: list[ChatRequest] = []  # observed requests, for assertions

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if self._responder is not None:
                return self._responder(request)
            if self._cursor >= len(self._responses):
                raise ScriptExhaustedError(
                    f"script {self.name!r} exhausted after {self._cursor} responses"
                )
            response = self._responses[self._cursor]
            self._cursor += 1
            return response

    def fork(self) -> "ScriptedProvider":
        """Fresh provider over the same script with its own cursor."""
        if self._responder is not None:
            return ScriptedProvider(responder=self._responder, name=self.name)
        return ScriptedProvider(responses=self._responses, name=self.name)

    @property
    def consumed(self) -> int:
        return self._cursor

    @property
    def remaining(self) -> int:
        return len(self._responses) - self._cursor


# ---------------------------------------------------------------------------
# live
# ---------------------------------------------------------------------------


def _field_to_json_schema(spec_doc: Mapping[str, Any]) -> dict:
    out: dict[str, Any] = {"type": spec_doc.get("type", "string")}
    if spec_doc.get("description"):
        out["description"] = spec_doc["description"]
    if spec_doc.get("enum") is not None:
        out["enum"] = list(spec_doc["enum"])
    if spec_doc.get("range") is not None:
        lo, hi = spec_doc["range"]
        out["minimum"] = lo
        out["maximum"] = hi
    return out


def _wire_payload(request: ChatRequest, model_name: str) -> dict:
    messages: list[dict] = [{"role": "system", "content": request.system_prompt}]
    for message in request.messages:
        wire: dict[str, Any] = {"role": message.role, "content": message.content}
        if message.role == "tool":
            wire["tool_call_id"] = message.tool_call_ref
        messages.append(wire)
    payload: dict[str, Any] = {
        "model": model_name,
        "messages": messages,
        "temperature": request.temperature,
    }
    if request.tool_declarations:
        payload["tools"] = [
            {
                "type": "function",
                "function": {
                    "name": decl["name"],
                    "description": decl.get("description", ""),
                    "parameters": {
                        "type": "object",
                        "properties": {
                            name: _field_to_json_schema(fs)
                            for name, fs in decl.get("parameters_schema", {}).items()
                        },
                    },
                },
            }
            for decl in request.tool_declarations
        ]
    if request.response_format == "structured":
        payload["response_format"] = {"type": "json_object"}
    return payload


def _parse_wire_response(body: Mapping[str, Any]) -> ChatResponse:
    try:
        message = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderProtocolError(f"malformed completion body: {exc}") from exc
    raw_calls = message.get("tool_calls")
    if raw_calls:
        calls = []
        for raw in raw_calls:
            try:
                arguments = json.loads(raw["function"]["arguments"] or "{}")
                calls.append(
                    ToolCall(
                        call_id=raw["id"],
                        tool_name=raw["function"]["name"],
                        arguments=arguments,
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ProviderProtocolError(f"malformed tool call in response: {exc}") from exc
        return ChatResponse(kind="tool_call", tool_calls=tuple(calls))
    content = message.get("content")
    if content is None:
        raise ProviderProtocolError("completion carried neither content nor tool calls")
    return ChatResponse.of_text(content)


class LiveProvider:
    """OpenAI-compatible chat completions over HTTP.

    Transient transport failures (connection errors, 429, 5xx) retry with
    exponential backoff up to max_retries; other HTTP errors fail fast.
    """

    BACKOFF_BASE_SECONDS = 0.5

    def __init__(
        self,
        config: ProviderConfig,
        transport: httpx.BaseTransport | None = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        self._config = config
        self._clock = clock
        self._client = httpx.Client(
            base_url=config.base_endpoint,
            timeout=config.timeout,
            transport=transport,
        )
        self._api_key: str | None = None

    def _key(self) -> str:
        # Checked at first use, not construction, so offline code paths never
        # demand a key.
        if self._api_key is None:
            key = os.environ.get(self._config.api_key_env_var, "")
            if not key:
                raise ConfigurationError(
                    f"environment variable {self._config.api_key_env_var!r} is not set"
                )
            self._api_key = key
        return self._api_key

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = _wire_payload(request, self._config.model_name)
        headers = {"Authorization": f"Bearer {self._key()}"}
        last_error: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt > 0:
                self._clock.wait(self.BACKOFF_BASE_SECONDS * (2 ** (attempt - 1)))
            try:
                response = self._client.post(
                    "/chat/completions", json=payload, headers=headers
                )
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = ProviderUnavailableError(
                    f"provider returned {response.status_code}"
                )
                logger.warning(
                    "retryable status %d (attempt %d)", response.status_code, attempt + 1
                )
                continue
            if response.status_code >= 400:
                raise ProviderProtocolError(
                    f"provider rejected request: {response.status_code} {response.text[:200]}"
                )
            try:
                body = response.json()
            except json.JSONDecodeError as exc:
                raise ProviderProtocolError("provider returned non-JSON body") from exc
            return _parse_wire_response(body)
        raise ProviderUnavailableError(
            f"provider unavailable after {self._config.max_retries + 1} attempts: {last_error}"
        )

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# record / replay
# ---------------------------------------------------------------------------


class Cassette:
    """Digest-keyed store of request/response exchanges."""

    def __init__(self, entries: Mapping[str, dict] | None = None):
        self._entries: dict[str, dict] = dict(entries or {})
        self._lock = threading.Lock()

    def record_exchange(self, request: ChatRequest, response: ChatResponse) -> str:
        digest = request_digest(request)
        with self._lock:
            self._entries[digest] = {
                "request": request.to_dict(),
                "response": response.to_dict(),
            }
        return digest

    def replay_lookup(self, request: ChatRequest) -> ChatResponse:
        digest = request_digest(request)
        with self._lock:
            entry = self._entries.get(digest)
        if entry is None:
            raise ReplayMissError(
                f"no recorded exchange for digest {digest[:12]}…; re-record the cassette"
            )
        return ChatResponse.from_dict(entry["response"])

    def __len__(self) -> int:
        return len(self._entries)

    def save(self, path: str | Path) -> None:
        doc = {"schema_version": SCHEMA_VERSION, "entries": self._entries}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValidationError("cassette has an unsupported schema_version")
        return cls(entries=doc["entries"])


class RecordingProvider:
    """Pass-through wrapper that records every exchange into a cassette."""

    def __init__(self, inner, cassette: Cassette):
        self._inner = inner
        self.cassette = cassette

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        self.cassette.record_exchange(request, response)
        return response


class ReplayProvider:
    """Serves recorded responses only; unknown requests are a replay miss."""

    def __init__(self, cassette: Cassette):
        self.cassette = cassette

    def complete(self, request: ChatRequest) -> ChatResponse:
        return self.cassette.replay_lookup(request)


def build_provider(
    config: ProviderConfig,
    script: ScriptedProvider | None = None,
    cassette: Cassette | None = None,
    transport: httpx.BaseTransport | None = None,
    clock: Clock = SYSTEM_CLOCK,
):
    """Resolve a ProviderConfig to a provider instance."""
    if config.provider_kind == "scripted":
        if script is None:
            raise ConfigurationError("scripted provider requires a script")
        return script
    if config.provider_kind == "replay":
        if cassette is None:
            raise ConfigurationError("replay provider requires a cassette")
        return ReplayProvider(cassette)
    return LiveProvider(config, transport=transport, clock=clock)
