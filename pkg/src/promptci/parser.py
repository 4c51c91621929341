"""Prompt reference scanner.

Finds every variable, tool, sub-agent, and knowledge-base reference in a
frontend prompt and cross-checks each one against the configured lists.
Unmatched references come back as warnings; the parser itself never fails,
malformed constructs are simply not matched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

from .errors import ValidationError
from .model import UseCaseConfig

# Marker grammar the simulator owns; the parser only needs it to keep
# routing markers out of its own output.
DEFAULT_ROUTING_PATTERN = r"\[ROUTE TO: ([^\]]+)\]"


class ReferenceKind(str, Enum):
    VARIABLE = "variable"
    TOOL = "tool"
    SUB_AGENT = "sub_agent"
    KB_LOOKUP = "kb_lookup"


class WarningKind(str, Enum):
    UNKNOWN_VARIABLE = "unknown_variable"
    UNKNOWN_TOOL = "unknown_tool"
    UNKNOWN_SUB_AGENT = "unknown_sub_agent"


@dataclass(frozen=True)
class PromptReference:
    kind: ReferenceKind
    raw_text: str
    normalized_name: str
    line_number: int  # 1-based
    column: int  # 1-based

    def __post_init__(self):
        if not self.normalized_name:
            raise ValidationError("normalized_name must be non-empty")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "raw_text": self.raw_text,
            "normalized_name": self.normalized_name,
            "line_number": self.line_number,
            "column": self.column,
        }


@dataclass(frozen=True)
class ParseWarning:
    reference: PromptReference
    warning_kind: WarningKind
    message: str

    def to_dict(self) -> dict:
        return {
            "reference": self.reference.to_dict(),
            "warning_kind": self.warning_kind.value,
            "message": self.message,
        }


@dataclass(frozen=True)
class ParseReport:
    references: tuple[PromptReference, ...]
    warnings: tuple[ParseWarning, ...]

    def to_dict(self) -> dict:
        return {
            "references": [r.to_dict() for r in self.references],
            "warnings": [w.to_dict() for w in self.warnings],
        }


def normalize_tool_name(raw: str) -> str:
    """Canonical tool name: lowercase with hyphens and underscores removed.

    Matches `get-order-status` against a tool declared as `getOrderStatus`
    and vice versa. Idempotent.
    """
    if not raw:
        raise ValidationError("tool name must be non-empty")
    return raw.lower().replace("-", "").replace("_", "")


# Reference grammars. Brackets never span lines; variables allow dots for
# namespaced names; the Call form requires the capitalized verb at a clause
# start to avoid matching the common lowercase verb.
_VARIABLE_RE = re.compile(r"\{\{[ \t]*([A-Za-z0-9_.]+)[ \t]*\}\}")
_BRACKET_RE = re.compile(r"\[([^\[\]\n]+)\]")
_AT_TOOL_RE = re.compile(r"(?<![\w.@])@([A-Za-z][A-Za-z0-9_-]*)")
_CALL_RE = re.compile(
    r"(?:^|\n[ \t]*(?:[-*][ \t]+)?|[.!?:;,][ \t]+)(Call[ \t]+([A-Z][A-Za-z0-9_]*))"
)
_KEBAB_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    last_nl = text.rfind("\n", 0, offset)
    return line, offset - last_nl  # column is 1-based: offset - (last_nl + 1) + 1


_ROUTING = "routing"  # classification sentinel: claim the span, emit nothing


def _classify_bracket(inner: str, routing_re: re.Pattern):
    """Apply the bracket precedence rule; returns (kind, normalized name).

    Precedence: kb: prefix, then routing marker (claimed but not emitted,
    the simulator owns it), then single-token kebab-case tool, then
    multi-word sub-agent; anything else is unclassified and ignored.
    """
    if inner.startswith("kb:"):
        topic = inner[len("kb:"):].strip()
        if not topic:
            return None, ""
        return ReferenceKind.KB_LOOKUP, topic
    if routing_re.fullmatch(f"[{inner}]"):
        return _ROUTING, ""
    if _KEBAB_RE.fullmatch(inner):
        return ReferenceKind.TOOL, normalize_tool_name(inner)
    if " " in inner.strip() and inner.strip():
        return ReferenceKind.SUB_AGENT, " ".join(inner.split())
    return None, ""


def parse_prompt(
    text: str,
    config: UseCaseConfig,
    routing_pattern: str = DEFAULT_ROUTING_PATTERN,
) -> ParseReport:
    """Scan a frontend prompt for references and cross-check them.

    Detection is ordered by position. Overlapping candidates resolve by
    form precedence: variables and classified brackets claim their spans
    first, then at-mentions, then Call phrases; a candidate inside a
    claimed span is dropped.
    """
    routing_re = re.compile(routing_pattern)
    claimed: list[tuple[int, int]] = []
    found: list[tuple[int, PromptReference]] = []

    def overlaps_claimed(start: int, end: int) -> bool:
        return any(start < c_end and c_start < end for c_start, c_end in claimed)

    def emit(kind: ReferenceKind, raw: str, name: str, offset: int) -> None:
        line, col = _line_col(text, offset)
        found.append(
            (
                offset,
                PromptReference(
                    kind=kind,
                    raw_text=raw,
                    normalized_name=name,
                    line_number=line,
                    column=col,
                ),
            )
        )

    for m in _VARIABLE_RE.finditer(text):
        claimed.append(m.span())
        emit(ReferenceKind.VARIABLE, m.group(0), m.group(1), m.start())

    for m in _BRACKET_RE.finditer(text):
        kind, name = _classify_bracket(m.group(1), routing_re)
        if kind is None:
            continue  # unclassified brackets stay transparent
        claimed.append(m.span())
        if kind is _ROUTING:
            continue
        emit(kind, m.group(0), name, m.start())

    for m in _AT_TOOL_RE.finditer(text):
        if overlaps_claimed(*m.span()):
            continue
        claimed.append(m.span())
        emit(ReferenceKind.TOOL, m.group(0), normalize_tool_name(m.group(1)), m.start())

    for m in _CALL_RE.finditer(text):
        start, end = m.span(1)
        if overlaps_claimed(start, end):
            continue
        claimed.append((start, end))
        emit(ReferenceKind.TOOL, m.group(1), normalize_tool_name(m.group(2)), start)

    found.sort(key=lambda item: item[0])
    references = tuple(ref for _, ref in found)
    return ParseReport(references=references, warnings=_cross_check(references, config))


def _cross_check(
    references: tuple[PromptReference, ...], config: UseCaseConfig
) -> tuple[ParseWarning, ...]:
    known_variables = {v.name for v in config.variables}
    known_tools = {normalize_tool_name(t.name) for t in config.tools}
    known_sub_agents = {" ".join(s.split()) for s in config.sub_agents}

    warnings: list[ParseWarning] = []
    for ref in references:
        if ref.kind == ReferenceKind.VARIABLE and ref.normalized_name not in known_variables:
            warnings.append(
                ParseWarning(
                    reference=ref,
                    warning_kind=WarningKind.UNKNOWN_VARIABLE,
                    message=f"variable {ref.normalized_name!r} is not configured",
                )
            )
        elif ref.kind == ReferenceKind.TOOL and ref.normalized_name not in known_tools:
            warnings.append(
                ParseWarning(
                    reference=ref,
                    warning_kind=WarningKind.UNKNOWN_TOOL,
                    message=f"tool {ref.raw_text!r} matches no configured tool",
                )
            )
        elif ref.kind == ReferenceKind.SUB_AGENT and ref.normalized_name not in known_sub_agents:
            warnings.append(
                ParseWarning(
                    reference=ref,
                    warning_kind=WarningKind.UNKNOWN_SUB_AGENT,
                    message=f"sub-agent {ref.normalized_name!r} is not configured",
                )
            )
        # kb_lookup never warns: there is no configured KB list to check.
    return tuple(warnings)
