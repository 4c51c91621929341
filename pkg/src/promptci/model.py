"""Domain types shared by every module, plus prompt composition and diffing.

All types serialize to one canonical JSON document schema (versioned with
``schema_version``) via ``to_dict``/``from_dict`` and are immutable once
constructed, so they are safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import ConfigurationError, ValidationError

SCHEMA_VERSION = 1

JSONValue = Any  # str | int | float | bool | None | list | dict


# ---------------------------------------------------------------------------
# enums
# ---------------------------------------------------------------------------


class VariableDirection(str, Enum):
    READ = "read"
    WRITE = "write"
    READ_WRITE = "read_write"


class PromptOrigin(str, Enum):
    DRAFT = "draft"
    REPAIR = "repair"
    OPERATOR_EDIT = "operator_edit"


class TestCategory(str, Enum):
    __test__ = False  # suppress pytest collection; this is a domain type

    HAPPY_PATH = "happy_path"
    BOUNDARY = "boundary"
    ERROR_PATH = "error_path"
    COMPLIANCE = "compliance"


class TestOrigin(str, Enum):
    __test__ = False  # suppress pytest collection; this is a domain type

    GENERATED = "generated"
    OPERATOR_ADDED = "operator_added"
    OPERATOR_EDITED = "operator_edited"


class TurnKind(str, Enum):
    CUSTOMER = "customer"
    ASSISTANT_TEXT = "assistant_text"
    TOOL_CALL = "tool_call"
    TOOL_RESPONSE = "tool_response"
    ROUTING_EVENT = "routing_event"


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"


class FailureClass(str, Enum):
    TOOL_CALL_SKIP = "tool_call_skip"
    RULE_VIOLATION = "rule_violation"
    STEP_REORDERING = "step_reordering"
    STEP_COLLAPSING = "step_collapsing"
    OTHER = "other"


class RunKind(str, Enum):
    OPTIMIZATION = "optimization"
    REGRESSION = "regression"


class DriftStatus(str, Enum):
    OPEN = "open"
    REPAIRED_PENDING_REVIEW = "repaired_pending_review"
    APPROVED = "approved"
    DISMISSED = "dismissed"


# Sentinel for a diagnosis whose root cause is an absent instruction.
MISSING_SECTION = "MISSING"


# ---------------------------------------------------------------------------
# validation / serialization helpers
# ---------------------------------------------------------------------------


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def _req_str(value: Any, name: str, allow_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{name} must be a string, got {type(value).__name__}")
    if not allow_empty and not value:
        raise ValidationError(f"{name} must be non-empty")
    return value


def _req_int(value: Any, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}")
    return value


def _req_enum(enum_type: type, value: Any, name: str):
    if isinstance(value, enum_type):
        return value
    try:
        return enum_type(value)
    except (ValueError, TypeError):
        allowed = ", ".join(e.value for e in enum_type)
        raise ValidationError(f"{name} must be one of [{allowed}], got {value!r}") from None


def _unique_names(items: Iterable[str], what: str) -> None:
    seen: set[str] = set()
    for name in items:
        if name in seen:
            raise ValidationError(f"duplicate {what} name: {name!r}")
        seen.add(name)


def to_iso(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat(timespec="microseconds")


def from_iso(raw: str, name: str = "timestamp") -> datetime:
    try:
        parsed = datetime.fromisoformat(raw)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{name} is not an ISO-8601 timestamp: {raw!r}") from exc
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def canonical_json(value: JSONValue) -> str:
    """Stable serialization used for digests and byte-equality checks."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _check_schema_version(doc: Mapping[str, Any], name: str) -> None:
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"{name}: unsupported schema_version {version!r}")


def _frozen_set(obj: Any, **kwargs: Any) -> None:
    for key, value in kwargs.items():
        object.__setattr__(obj, key, value)


# ---------------------------------------------------------------------------
# tool / variable / profile
# ---------------------------------------------------------------------------

FIELD_TYPES = ("string", "number", "integer", "boolean", "object", "array")


@dataclass(frozen=True)
class FieldSpec:
    """One field of a tool's return or parameter schema."""

    type: str = "string"
    description: str = ""
    enum: tuple[JSONValue, ...] | None = None
    range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.type not in FIELD_TYPES:
            raise ValidationError(
                f"field type must be one of {FIELD_TYPES}, got {self.type!r}"
            )
        if self.enum is not None:
            _frozen_set(self, enum=tuple(self.enum))
            _require(len(self.enum) > 0, "enum must be non-empty when given")
        if self.range is not None:
            lo, hi = self.range
            _require(lo <= hi, f"range lower bound {lo} exceeds upper bound {hi}")
            _frozen_set(self, range=(float(lo), float(hi)))

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"type": self.type}
        if self.description:
            doc["description"] = self.description
        if self.enum is not None:
            doc["enum"] = list(self.enum)
        if self.range is not None:
            doc["range"] = list(self.range)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FieldSpec":
        return cls(
            type=doc.get("type", "string"),
            description=doc.get("description", ""),
            enum=tuple(doc["enum"]) if doc.get("enum") is not None else None,
            range=tuple(doc["range"]) if doc.get("range") is not None else None,
        )

    def accepts(self, value: JSONValue) -> str | None:
        """Return None if value conforms, else a human-readable reason."""
        checks = {
            "string": lambda v: isinstance(v, str),
            "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "boolean": lambda v: isinstance(v, bool),
            "object": lambda v: isinstance(v, dict),
            "array": lambda v: isinstance(v, list),
        }
        if not checks[self.type](value):
            return f"expected {self.type}, got {type(value).__name__}"
        if self.enum is not None and value not in self.enum:
            return f"value {value!r} not in declared enum {list(self.enum)}"
        if self.range is not None and isinstance(value, (int, float)):
            lo, hi = self.range
            if not (lo <= value <= hi):
                return f"value {value!r} outside declared range [{lo}, {hi}]"
        return None


def _schema_to_dict(schema: Mapping[str, FieldSpec]) -> dict:
    return {name: spec.to_dict() for name, spec in schema.items()}


def _schema_from_dict(doc: Mapping[str, Any], name: str) -> dict[str, FieldSpec]:
    out: dict[str, FieldSpec] = {}
    for key, value in doc.items():
        out[_req_str(key, f"{name} field name")] = (
            value if isinstance(value, FieldSpec) else FieldSpec.from_dict(value)
        )
    return out


@dataclass(frozen=True)
class ToolSpec:
    """A tool the agent may invoke, with its declared schemas."""

    name: str
    description: str = ""
    return_schema: Mapping[str, FieldSpec] = field(default_factory=dict)
    parameters_schema: Mapping[str, FieldSpec] = field(default_factory=dict)

    def __post_init__(self):
        _req_str(self.name, "ToolSpec.name")
        _frozen_set(
            self,
            return_schema=dict(self.return_schema),
            parameters_schema=dict(self.parameters_schema),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "return_schema": _schema_to_dict(self.return_schema),
            "parameters_schema": _schema_to_dict(self.parameters_schema),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ToolSpec":
        _check_schema_version(doc, "ToolSpec")
        return cls(
            name=doc["name"],
            description=doc.get("description", ""),
            return_schema=_schema_from_dict(doc.get("return_schema", {}), "return_schema"),
            parameters_schema=_schema_from_dict(
                doc.get("parameters_schema", {}), "parameters_schema"
            ),
        )


# Grammar shared with the prompt parser: no whitespace, no brace characters.
def _valid_variable_name(name: str) -> bool:
    return bool(name) and all(c.isalnum() or c in "._" for c in name)


@dataclass(frozen=True)
class VariableSpec:
    """A memory variable the agent reads and/or writes."""

    name: str
    description: str = ""
    direction: VariableDirection = VariableDirection.READ_WRITE

    def __post_init__(self):
        _req_str(self.name, "VariableSpec.name")
        if not _valid_variable_name(self.name):
            raise ValidationError(
                f"variable name {self.name!r} must contain only letters, digits, '_' or '.'"
            )
        _frozen_set(self, direction=_req_enum(VariableDirection, self.direction, "direction"))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "direction": self.direction.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "VariableSpec":
        _check_schema_version(doc, "VariableSpec")
        return cls(
            name=doc["name"],
            description=doc.get("description", ""),
            direction=doc.get("direction", "read_write"),
        )


@dataclass(frozen=True)
class PlatformProfile:
    """Platform bundle: managed base prompt plus the reference syntax patterns."""

    id: str
    backend_prompt: str
    routing_marker_pattern: str
    tool_reference_patterns: tuple[str, ...] = ()

    def __post_init__(self):
        _req_str(self.id, "PlatformProfile.id")
        _req_str(self.backend_prompt, "PlatformProfile.backend_prompt")
        _req_str(self.routing_marker_pattern, "PlatformProfile.routing_marker_pattern")
        _frozen_set(self, tool_reference_patterns=tuple(self.tool_reference_patterns))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "backend_prompt": self.backend_prompt,
            "routing_marker_pattern": self.routing_marker_pattern,
            "tool_reference_patterns": list(self.tool_reference_patterns),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PlatformProfile":
        _check_schema_version(doc, "PlatformProfile")
        return cls(
            id=doc["id"],
            backend_prompt=doc["backend_prompt"],
            routing_marker_pattern=doc["routing_marker_pattern"],
            tool_reference_patterns=tuple(doc.get("tool_reference_patterns", ())),
        )


@dataclass(frozen=True)
class UseCaseConfig:
    """The agent definition an operator configures before anything runs."""

    id: str
    name: str
    requirements: str
    tools: tuple[ToolSpec, ...] = ()
    variables: tuple[VariableSpec, ...] = ()
    sub_agents: tuple[str, ...] = ()
    draft_prompt: str = ""
    platform_profile_id: str = "default"

    def __post_init__(self):
        _req_str(self.id, "UseCaseConfig.id")
        _req_str(self.name, "UseCaseConfig.name")
        _frozen_set(
            self,
            tools=tuple(self.tools),
            variables=tuple(self.variables),
            sub_agents=tuple(self.sub_agents),
        )
        _unique_names((t.name for t in self.tools), "tool")
        _unique_names((v.name for v in self.variables), "variable")
        _unique_names(self.sub_agents, "sub-agent")

    def tool(self, name: str) -> ToolSpec | None:
        for tool in self.tools:
            if tool.name == name:
                return tool
        return None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "name": self.name,
            "requirements": self.requirements,
            "tools": [t.to_dict() for t in self.tools],
            "variables": [v.to_dict() for v in self.variables],
            "sub_agents": list(self.sub_agents),
            "draft_prompt": self.draft_prompt,
            "platform_profile_id": self.platform_profile_id,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "UseCaseConfig":
        _check_schema_version(doc, "UseCaseConfig")
        return cls(
            id=doc["id"],
            name=doc["name"],
            requirements=doc.get("requirements", ""),
            tools=tuple(ToolSpec.from_dict(t) for t in doc.get("tools", ())),
            variables=tuple(VariableSpec.from_dict(v) for v in doc.get("variables", ())),
            sub_agents=tuple(doc.get("sub_agents", ())),
            draft_prompt=doc.get("draft_prompt", ""),
            platform_profile_id=doc.get("platform_profile_id", "default"),
        )


# ---------------------------------------------------------------------------
# prompt versions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptVersion:
    """One iteration of the frontend prompt, with repair provenance."""

    version_index: int
    text: str
    origin: PromptOrigin
    parent_version: int | None = None
    repair_rationale: str | None = None
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        _req_int(self.version_index, "version_index", minimum=0)
        _frozen_set(self, origin=_req_enum(PromptOrigin, self.origin, "origin"))
        if self.version_index == 0:
            _require(self.origin == PromptOrigin.DRAFT, "version 0 must have origin draft")
            _require(self.parent_version is None, "version 0 must have no parent")
        if self.origin == PromptOrigin.REPAIR:
            _require(
                bool(self.repair_rationale),
                "repair versions must record a non-empty repair_rationale",
            )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version_index": self.version_index,
            "text": self.text,
            "parent_version": self.parent_version,
            "origin": self.origin.value,
            "repair_rationale": self.repair_rationale,
            "created_at": to_iso(self.created_at),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PromptVersion":
        _check_schema_version(doc, "PromptVersion")
        return cls(
            version_index=doc["version_index"],
            text=doc["text"],
            origin=doc["origin"],
            parent_version=doc.get("parent_version"),
            repair_rationale=doc.get("repair_rationale"),
            created_at=from_iso(doc["created_at"], "PromptVersion.created_at"),
        )


# ---------------------------------------------------------------------------
# test cases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestCase:
    """One scripted conversation with pass criteria and per-tool mocks."""

    __test__ = False  # suppress pytest collection; this is a domain type

    id: str
    title: str
    category: TestCategory
    conversation_script: tuple[str, ...]
    pass_criteria: tuple[str, ...]
    mock_overrides: Mapping[str, dict] = field(default_factory=dict)
    origin: TestOrigin = TestOrigin.GENERATED

    def __post_init__(self):
        _req_str(self.id, "TestCase.id")
        _req_str(self.title, "TestCase.title")
        _frozen_set(
            self,
            category=_req_enum(TestCategory, self.category, "category"),
            origin=_req_enum(TestOrigin, self.origin, "origin"),
            conversation_script=tuple(self.conversation_script),
            pass_criteria=tuple(self.pass_criteria),
            mock_overrides={k: dict(v) for k, v in dict(self.mock_overrides).items()},
        )
        _require(len(self.conversation_script) > 0, "conversation_script must be non-empty")
        _require(len(self.pass_criteria) > 0, "pass_criteria must be non-empty")
        for utterance in self.conversation_script:
            _req_str(utterance, "conversation_script entry")
        for criterion in self.pass_criteria:
            _req_str(criterion, "pass_criteria entry")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "title": self.title,
            "category": self.category.value,
            "conversation_script": list(self.conversation_script),
            "pass_criteria": list(self.pass_criteria),
            "mock_overrides": {k: v for k, v in self.mock_overrides.items()},
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TestCase":
        _check_schema_version(doc, "TestCase")
        return cls(
            id=doc["id"],
            title=doc["title"],
            category=doc["category"],
            conversation_script=tuple(doc["conversation_script"]),
            pass_criteria=tuple(doc["pass_criteria"]),
            mock_overrides=doc.get("mock_overrides", {}),
            origin=doc.get("origin", "generated"),
        )


def validate_mock_value(tool: ToolSpec, value: Any) -> list[str]:
    """Check one mock return value against a tool's return schema.

    Mock values are objects keyed by declared return fields; a field may be
    omitted (partial returns exercise specific branches) but unknown fields
    and schema-violating values are rejected.
    """
    issues: list[str] = []
    if not isinstance(value, Mapping):
        return [f"mock for tool {tool.name!r} must be an object, got {type(value).__name__}"]
    for key, item in value.items():
        spec = tool.return_schema.get(key)
        if spec is None:
            issues.append(f"mock for tool {tool.name!r} sets undeclared field {key!r}")
            continue
        reason = spec.accepts(item)
        if reason is not None:
            issues.append(f"mock for tool {tool.name!r} field {key!r}: {reason}")
    return issues


def validate_test_case(case: TestCase, config: UseCaseConfig) -> list[str]:
    """Config-dependent invariants: mock keys name configured tools and
    mock values conform to the tool's return schema."""
    issues: list[str] = []
    for tool_name, value in case.mock_overrides.items():
        tool = config.tool(tool_name)
        if tool is None:
            issues.append(f"mock_overrides names unknown tool {tool_name!r}")
            continue
        issues.extend(validate_mock_value(tool, value))
    return issues


# ---------------------------------------------------------------------------
# transcripts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Turn:
    """One typed step of a simulated conversation."""

    kind: TurnKind
    payload: Mapping[str, Any]

    _SHAPES = {
        TurnKind.CUSTOMER: ("text",),
        TurnKind.ASSISTANT_TEXT: ("text",),
        TurnKind.TOOL_CALL: ("tool_name", "arguments", "call_id"),
        TurnKind.TOOL_RESPONSE: ("call_id", "value"),
        TurnKind.ROUTING_EVENT: ("destination", "raw"),
    }

    def __post_init__(self):
        kind = _req_enum(TurnKind, self.kind, "Turn.kind")
        payload = dict(self.payload)
        _frozen_set(self, kind=kind, payload=payload)
        expected = set(self._SHAPES[kind])
        actual = set(payload)
        if actual != expected:
            raise ValidationError(
                f"turn payload for {kind.value} must have keys {sorted(expected)}, "
                f"got {sorted(actual)}"
            )

    @classmethod
    def customer(cls, text: str) -> "Turn":
        return cls(TurnKind.CUSTOMER, {"text": text})

    @classmethod
    def assistant(cls, text: str) -> "Turn":
        return cls(TurnKind.ASSISTANT_TEXT, {"text": text})

    @classmethod
    def tool_call(cls, tool_name: str, arguments: Mapping[str, Any], call_id: str) -> "Turn":
        return cls(
            TurnKind.TOOL_CALL,
            {"tool_name": tool_name, "arguments": dict(arguments), "call_id": call_id},
        )

    @classmethod
    def tool_response(cls, call_id: str, value: Any) -> "Turn":
        return cls(TurnKind.TOOL_RESPONSE, {"call_id": call_id, "value": value})

    @classmethod
    def routing(cls, destination: str, raw: str) -> "Turn":
        return cls(TurnKind.ROUTING_EVENT, {"destination": destination, "raw": raw})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Turn):
            return NotImplemented
        return self.kind == other.kind and self.payload == other.payload

    def __hash__(self):
        return hash((self.kind, canonical_json(self.payload)))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "payload": dict(self.payload)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Turn":
        return cls(kind=doc["kind"], payload=doc["payload"])


@dataclass(frozen=True)
class Transcript:
    """Ordered typed turns from one simulated conversation."""

    test_case_id: str
    prompt_version_index: int
    turns: tuple[Turn, ...]
    completed: bool
    abort_reason: str | None = None
    unconsumed_script: tuple[str, ...] = ()

    def __post_init__(self):
        _req_str(self.test_case_id, "Transcript.test_case_id")
        _req_int(self.prompt_version_index, "prompt_version_index", minimum=0)
        _frozen_set(
            self,
            turns=tuple(self.turns),
            unconsumed_script=tuple(self.unconsumed_script),
        )
        for i, turn in enumerate(self.turns):
            if turn.kind == TurnKind.TOOL_RESPONSE:
                prev = self.turns[i - 1] if i > 0 else None
                if (
                    prev is None
                    or prev.kind != TurnKind.TOOL_CALL
                    or prev.payload["call_id"] != turn.payload["call_id"]
                ):
                    raise ValidationError(
                        "tool_response turn must immediately follow the tool_call "
                        "turn with the same call identifier"
                    )
            if turn.kind == TurnKind.ROUTING_EVENT and i != len(self.turns) - 1:
                raise ValidationError("routing_event turns are terminal")

    def tool_calls(self) -> tuple[Turn, ...]:
        return tuple(t for t in self.turns if t.kind == TurnKind.TOOL_CALL)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test_case_id": self.test_case_id,
            "prompt_version_index": self.prompt_version_index,
            "turns": [t.to_dict() for t in self.turns],
            "completed": self.completed,
            "abort_reason": self.abort_reason,
            "unconsumed_script": list(self.unconsumed_script),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Transcript":
        _check_schema_version(doc, "Transcript")
        return cls(
            test_case_id=doc["test_case_id"],
            prompt_version_index=doc["prompt_version_index"],
            turns=tuple(Turn.from_dict(t) for t in doc["turns"]),
            completed=doc["completed"],
            abort_reason=doc.get("abort_reason"),
            unconsumed_script=tuple(doc.get("unconsumed_script", ())),
        )

    def render_text(self) -> str:
        """Human-readable rendering with turn-type labels."""
        lines: list[str] = []
        for turn in self.turns:
            p = turn.payload
            if turn.kind == TurnKind.CUSTOMER:
                lines.append(f"[customer] {p['text']}")
            elif turn.kind == TurnKind.ASSISTANT_TEXT:
                lines.append(f"[assistant] {p['text']}")
            elif turn.kind == TurnKind.TOOL_CALL:
                lines.append(
                    f"[tool call] {p['tool_name']}({canonical_json(p['arguments'])}) "
                    f"id={p['call_id']}"
                )
            elif turn.kind == TurnKind.TOOL_RESPONSE:
                lines.append(f"[tool response] id={p['call_id']} -> {canonical_json(p['value'])}")
            else:
                lines.append(f"[routing] -> {p['destination']}")
        if self.abort_reason:
            lines.append(f"[aborted] {self.abort_reason}")
        if self.unconsumed_script:
            lines.append(f"[unconsumed script] {len(self.unconsumed_script)} utterance(s)")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionVerdict:
    criterion_text: str
    verdict: Verdict
    reasoning: str = ""

    def __post_init__(self):
        _req_str(self.criterion_text, "criterion_text")
        _frozen_set(self, verdict=_req_enum(Verdict, self.verdict, "verdict"))

    def to_dict(self) -> dict:
        return {
            "criterion_text": self.criterion_text,
            "verdict": self.verdict.value,
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CriterionVerdict":
        return cls(
            criterion_text=doc["criterion_text"],
            verdict=doc["verdict"],
            reasoning=doc.get("reasoning", ""),
        )


@dataclass(frozen=True)
class VerdictReport:
    """Per-criterion verdicts for one test; overall is always the local
    conjunction of the criterion verdicts, never a model-supplied value."""

    test_case_id: str
    prompt_version_index: int
    criterion_verdicts: tuple[CriterionVerdict, ...]
    overall: Verdict | None = None
    inconclusive: bool = False

    def __post_init__(self):
        _req_str(self.test_case_id, "VerdictReport.test_case_id")
        _frozen_set(self, criterion_verdicts=tuple(self.criterion_verdicts))
        _require(len(self.criterion_verdicts) > 0, "criterion_verdicts must be non-empty")
        computed = (
            Verdict.PASS
            if all(cv.verdict == Verdict.PASS for cv in self.criterion_verdicts)
            else Verdict.FAIL
        )
        if self.overall is None:
            _frozen_set(self, overall=computed)
        else:
            overall = _req_enum(Verdict, self.overall, "overall")
            if overall != computed:
                raise ValidationError(
                    "overall must be PASS iff every criterion verdict is PASS"
                )
            _frozen_set(self, overall=overall)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "test_case_id": self.test_case_id,
            "prompt_version_index": self.prompt_version_index,
            "criterion_verdicts": [cv.to_dict() for cv in self.criterion_verdicts],
            "overall": self.overall.value,
            "inconclusive": self.inconclusive,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "VerdictReport":
        _check_schema_version(doc, "VerdictReport")
        return cls(
            test_case_id=doc["test_case_id"],
            prompt_version_index=doc["prompt_version_index"],
            criterion_verdicts=tuple(
                CriterionVerdict.from_dict(cv) for cv in doc["criterion_verdicts"]
            ),
            overall=doc.get("overall"),
            inconclusive=doc.get("inconclusive", False),
        )


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FailureDiagnosis:
    failure_class: FailureClass
    responsible_section: str
    explanation: str
    evidence_test_ids: tuple[str, ...]

    def __post_init__(self):
        _frozen_set(
            self,
            failure_class=_req_enum(FailureClass, self.failure_class, "failure_class"),
            evidence_test_ids=tuple(self.evidence_test_ids),
        )
        _req_str(self.responsible_section, "responsible_section")
        _require(len(self.evidence_test_ids) > 0, "evidence_test_ids must be non-empty")

    def validate_against_prompt(self, prompt_text: str) -> None:
        """responsible_section must be a verbatim substring of the diagnosed
        prompt, or the MISSING sentinel for absent-instruction root causes."""
        if self.responsible_section == MISSING_SECTION:
            return
        if self.responsible_section not in prompt_text:
            raise ValidationError(
                "responsible_section is neither a verbatim substring of the prompt "
                f"nor {MISSING_SECTION!r}"
            )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "failure_class": self.failure_class.value,
            "responsible_section": self.responsible_section,
            "explanation": self.explanation,
            "evidence_test_ids": list(self.evidence_test_ids),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FailureDiagnosis":
        _check_schema_version(doc, "FailureDiagnosis")
        return cls(
            failure_class=doc["failure_class"],
            responsible_section=doc["responsible_section"],
            explanation=doc.get("explanation", ""),
            evidence_test_ids=tuple(doc["evidence_test_ids"]),
        )


# ---------------------------------------------------------------------------
# runs and drift
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerTestResult:
    """Pointers to one test's transcript and verdict within a run, plus the
    cached overall verdict so runs can be compared without loading verdicts."""

    transcript_ref: str
    verdict_ref: str
    overall: Verdict

    def __post_init__(self):
        _frozen_set(self, overall=_req_enum(Verdict, self.overall, "overall"))

    def to_dict(self) -> dict:
        return {
            "transcript_ref": self.transcript_ref,
            "verdict_ref": self.verdict_ref,
            "overall": self.overall.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PerTestResult":
        return cls(
            transcript_ref=doc["transcript_ref"],
            verdict_ref=doc["verdict_ref"],
            overall=doc["overall"],
        )


@dataclass(frozen=True)
class RunSummary:
    total: int
    passed: int
    failed: int

    def __post_init__(self):
        _req_int(self.total, "total", minimum=0)
        _req_int(self.passed, "passed", minimum=0)
        _req_int(self.failed, "failed", minimum=0)

    def to_dict(self) -> dict:
        return {"total": self.total, "passed": self.passed, "failed": self.failed}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunSummary":
        return cls(total=doc["total"], passed=doc["passed"], failed=doc["failed"])


@dataclass(frozen=True)
class RunRecord:
    """One full simulate-and-judge pass of a suite against one prompt version."""

    run_id: str
    run_kind: RunKind
    prompt_version_index: int
    started_at: datetime
    finished_at: datetime | None
    per_test: Mapping[str, PerTestResult]
    summary: RunSummary
    use_case_id: str = ""
    suite_revision_id: str = ""

    def __post_init__(self):
        _req_str(self.run_id, "RunRecord.run_id")
        _frozen_set(
            self,
            run_kind=_req_enum(RunKind, self.run_kind, "run_kind"),
            per_test=dict(self.per_test),
        )
        if self.summary.total != len(self.per_test):
            raise ValidationError("summary.total must equal the number of per-test entries")
        passed = sum(1 for r in self.per_test.values() if r.overall == Verdict.PASS)
        failed = len(self.per_test) - passed
        if self.summary.passed != passed or self.summary.failed != failed:
            raise ValidationError("summary counts must match the per-test verdict partition")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "run_kind": self.run_kind.value,
            "prompt_version_index": self.prompt_version_index,
            "started_at": to_iso(self.started_at),
            "finished_at": to_iso(self.finished_at) if self.finished_at else None,
            "per_test": {k: v.to_dict() for k, v in self.per_test.items()},
            "summary": self.summary.to_dict(),
            "use_case_id": self.use_case_id,
            "suite_revision_id": self.suite_revision_id,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunRecord":
        _check_schema_version(doc, "RunRecord")
        return cls(
            run_id=doc["run_id"],
            run_kind=doc["run_kind"],
            prompt_version_index=doc["prompt_version_index"],
            started_at=from_iso(doc["started_at"], "started_at"),
            finished_at=(
                from_iso(doc["finished_at"], "finished_at") if doc.get("finished_at") else None
            ),
            per_test={k: PerTestResult.from_dict(v) for k, v in doc["per_test"].items()},
            summary=RunSummary.from_dict(doc["summary"]),
            use_case_id=doc.get("use_case_id", ""),
            suite_revision_id=doc.get("suite_revision_id", ""),
        )


@dataclass(frozen=True)
class DriftEvent:
    """A detected PASS-to-FAIL flip between a baseline and a regression run."""

    event_id: str
    detected_at: datetime
    regression_run_id: str
    baseline_run_id: str
    newly_failing_tests: tuple[str, ...]
    repair_prompt_version: int | None = None
    status: DriftStatus = DriftStatus.OPEN
    urgent: bool = False
    dismiss_reason: str | None = None

    def __post_init__(self):
        _req_str(self.event_id, "DriftEvent.event_id")
        _frozen_set(
            self,
            status=_req_enum(DriftStatus, self.status, "status"),
            newly_failing_tests=tuple(self.newly_failing_tests),
        )
        _require(len(self.newly_failing_tests) > 0, "newly_failing_tests must be non-empty")

    @classmethod
    def from_runs(
        cls,
        event_id: str,
        detected_at: datetime,
        baseline: RunRecord,
        current: RunRecord,
        newly_failing_tests: Sequence[str],
    ) -> "DriftEvent":
        """Construct with the flip invariant checked against both runs."""
        for test_id in newly_failing_tests:
            base = baseline.per_test.get(test_id)
            cur = current.per_test.get(test_id)
            if base is None or cur is None:
                raise ValidationError(f"test {test_id!r} is not present in both runs")
            if base.overall != Verdict.PASS or cur.overall != Verdict.FAIL:
                raise ValidationError(
                    f"test {test_id!r} did not flip PASS->FAIL between the referenced runs"
                )
        return cls(
            event_id=event_id,
            detected_at=detected_at,
            regression_run_id=current.run_id,
            baseline_run_id=baseline.run_id,
            newly_failing_tests=tuple(newly_failing_tests),
        )

    def with_status(
        self,
        status: DriftStatus,
        repair_prompt_version: int | None = None,
        urgent: bool | None = None,
        dismiss_reason: str | None = None,
    ) -> "DriftEvent":
        return DriftEvent(
            event_id=self.event_id,
            detected_at=self.detected_at,
            regression_run_id=self.regression_run_id,
            baseline_run_id=self.baseline_run_id,
            newly_failing_tests=self.newly_failing_tests,
            repair_prompt_version=(
                repair_prompt_version
                if repair_prompt_version is not None
                else self.repair_prompt_version
            ),
            status=status,
            urgent=self.urgent if urgent is None else urgent,
            dismiss_reason=dismiss_reason if dismiss_reason is not None else self.dismiss_reason,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "event_id": self.event_id,
            "detected_at": to_iso(self.detected_at),
            "regression_run_id": self.regression_run_id,
            "baseline_run_id": self.baseline_run_id,
            "newly_failing_tests": list(self.newly_failing_tests),
            "repair_prompt_version": self.repair_prompt_version,
            "status": self.status.value,
            "urgent": self.urgent,
            "dismiss_reason": self.dismiss_reason,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DriftEvent":
        _check_schema_version(doc, "DriftEvent")
        return cls(
            event_id=doc["event_id"],
            detected_at=from_iso(doc["detected_at"], "detected_at"),
            regression_run_id=doc["regression_run_id"],
            baseline_run_id=doc["baseline_run_id"],
            newly_failing_tests=tuple(doc["newly_failing_tests"]),
            repair_prompt_version=doc.get("repair_prompt_version"),
            status=doc.get("status", "open"),
            urgent=doc.get("urgent", False),
            dismiss_reason=doc.get("dismiss_reason"),
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

PROMPT_SEPARATOR = "\n\n"  # exactly one blank line between base and frontend text


def compose_system_prompt(profile: PlatformProfile, frontend: PromptVersion) -> str:
    """Concatenate the platform base prompt and the frontend prompt.

    Byte-stable for fixed inputs: no stripping, exactly one separator blank
    line. Empty parts are a configuration error.
    """
    if not profile.backend_prompt:
        raise ConfigurationError("platform backend prompt is empty")
    if not frontend.text:
        raise ConfigurationError("frontend prompt text is empty")
    return profile.backend_prompt + PROMPT_SEPARATOR + frontend.text


@dataclass(frozen=True)
class PromptDiff:
    """Line-level change summary between two prompt texts."""

    added: tuple[str, ...]
    removed: tuple[str, ...]
    changed_line_count: int

    def to_dict(self) -> dict:
        return {
            "added": list(self.added),
            "removed": list(self.removed),
            "changed_line_count": self.changed_line_count,
        }


def lcs_keep_pairs(old_lines: Sequence[str], new_lines: Sequence[str]) -> list[tuple[int, int]]:
    """Index pairs of a longest common subsequence of the two line lists."""
    n, m = len(old_lines), len(new_lines)
    # dp[i][j] = LCS length of old_lines[i:], new_lines[j:]
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt = dp[i], dp[i + 1]
        for j in range(m - 1, -1, -1):
            if old_lines[i] == new_lines[j]:
                row[j] = nxt[j + 1] + 1
            else:
                row[j] = max(nxt[j], row[j + 1])
    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < n and j < m:
        if old_lines[i] == new_lines[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def _text_of(version: "PromptVersion | str") -> str:
    return version.text if isinstance(version, PromptVersion) else version


def diff_prompt_versions(old: "PromptVersion | str", new: "PromptVersion | str") -> PromptDiff:
    """Line-level diff via longest common subsequence.

    A substituted line counts once, hence changed_line_count is
    max(|removed|, |added|); the summary is symmetric under swapping the
    arguments with added/removed exchanged.
    """
    old_lines = _text_of(old).split("\n")
    new_lines = _text_of(new).split("\n")
    kept = lcs_keep_pairs(old_lines, new_lines)
    kept_old = {i for i, _ in kept}
    kept_new = {j for _, j in kept}
    removed = tuple(line for i, line in enumerate(old_lines) if i not in kept_old)
    added = tuple(line for j, line in enumerate(new_lines) if j not in kept_new)
    return PromptDiff(
        added=added,
        removed=removed,
        changed_line_count=max(len(added), len(removed)),
    )


# Registry used by generic persistence round trips and the export format.
DOCUMENT_TYPES = {
    "ToolSpec": ToolSpec,
    "VariableSpec": VariableSpec,
    "PlatformProfile": PlatformProfile,
    "UseCaseConfig": UseCaseConfig,
    "PromptVersion": PromptVersion,
    "TestCase": TestCase,
    "Transcript": Transcript,
    "VerdictReport": VerdictReport,
    "FailureDiagnosis": FailureDiagnosis,
    "RunRecord": RunRecord,
    "DriftEvent": DriftEvent,
}
