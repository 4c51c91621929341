"""Test suite generation and operator editing.

A suite is derived from the requirements document, tool return schemas,
variable list, and sub-agent list, one structured request per coverage
category. Schema-invalid generated cases get one corrective re-ask and are
dropped (with a logged reason) if still invalid; validity after generation
and editing is total.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    GenerationFailedError,
    NotFoundError,
    ProviderProtocolError,
    ValidationError,
)
from .model import (
    TestCase,
    TestCategory,
    TestOrigin,
    UseCaseConfig,
    validate_test_case,
)
from .providers import ChatMessage, ChatRequest, extract_json_text

logger = logging.getLogger(__name__)

GENERATION_TEMPERATURE = 0.0

CATEGORY_GUIDANCE = {
    TestCategory.HAPPY_PATH: (
        "nominal conversations where every step succeeds and the customer "
        "gets what they asked for"
    ),
    TestCategory.BOUNDARY: (
        "edge values: enum fields at each declared value, numeric fields at "
        "range limits, minimal and maximal inputs"
    ),
    TestCategory.ERROR_PATH: (
        "conversations where a tool reports a failing or disqualifying "
        "state, or the customer asks for something the rules deny"
    ),
    TestCategory.COMPLIANCE: (
        "conversations probing rules the agent must always follow: "
        "verification order, refusal wording, mandatory routing"
    ),
}

# Observed suite sizes by agent complexity; the split across categories is
# 40/25/20/15 with remainders folded into the earlier categories.
SIZE_SIMPLE, SIZE_MEDIUM, SIZE_COMPLEX = 23, 47, 112
CATEGORY_SHARES = (
    (TestCategory.HAPPY_PATH, 0.40),
    (TestCategory.BOUNDARY, 0.25),
    (TestCategory.ERROR_PATH, 0.20),
    (TestCategory.COMPLIANCE, 0.15),
)

_STEP_LINE_RE = re.compile(r"^\s*(?:\d+[.)]|[-*])\s+\S")


def count_requirement_steps(requirements: str) -> int:
    """Number of step-like lines (numbered or bulleted); falls back to
    sentence count for free prose."""
    steps = sum(1 for line in requirements.split("\n") if _STEP_LINE_RE.match(line))
    if steps:
        return steps
    return max(1, len([s for s in re.split(r"[.!?]+", requirements) if s.strip()]))


def split_counts(total: int) -> dict[TestCategory, int]:
    counts = {cat: math.floor(total * share) for cat, share in CATEGORY_SHARES}
    remainder = total - sum(counts.values())
    for cat, _ in CATEGORY_SHARES:
        if remainder <= 0:
            break
        counts[cat] += 1
        remainder -= 1
    return counts


def default_target_counts(config: UseCaseConfig) -> dict[TestCategory, int]:
    steps = count_requirement_steps(config.requirements)
    if steps <= 5:
        total = SIZE_SIMPLE
    elif steps <= 9:
        total = SIZE_MEDIUM
    else:
        total = SIZE_COMPLEX
    return split_counts(total)


@dataclass(frozen=True)
class GenerationOptions:
    target_counts: Mapping[TestCategory, int] | None = None
    seed_instructions: str = ""

    def resolve_counts(self, config: UseCaseConfig) -> dict[TestCategory, int]:
        if self.target_counts is None:
            return default_target_counts(config)
        counts = {TestCategory(k): v for k, v in self.target_counts.items()}
        for value in counts.values():
            if value < 0:
                raise ValidationError("target counts must be >= 0")
        return counts


def _grounding_document(config: UseCaseConfig) -> str:
    lines = ["## Requirements", config.requirements, "", "## Tools"]
    if config.tools:
        for tool in config.tools:
            lines.append(
                f"- {tool.name}: {tool.description or '(no description)'} "
                f"returns {json.dumps({n: s.to_dict() for n, s in tool.return_schema.items()})}"
            )
    else:
        lines.append("(this agent declares no tools)")
    lines.append("")
    lines.append("## Memory variables")
    if config.variables:
        lines.extend(f"- {{{{{v.name}}}}} ({v.direction.value})" for v in config.variables)
    else:
        lines.append("(none)")
    lines.append("")
    lines.append("## Sub-agents")
    if config.sub_agents:
        lines.extend(f"- {name}" for name in config.sub_agents)
    else:
        lines.append("(none)")
    return "\n".join(lines)


def _category_request(
    config: UseCaseConfig,
    category: TestCategory,
    count: int,
    seed_instructions: str,
) -> ChatRequest:
    instructions = [
        f"Write exactly {count} test cases in the category `{category.value}`: "
        f"{CATEGORY_GUIDANCE[category]}.",
        "Each case is a JSON object with fields: title (short), "
        "conversation_script (list of customer utterances in order), "
        "pass_criteria (list of checkable statements), and mock_overrides "
        "(object mapping tool name to the mocked return value object).",
        "Mock values must conform to the declared return schemas; cover every "
        "declared enum value across the suite where the category allows it.",
        "Only reference tools, variables, and sub-agents from the definition.",
        'Respond with a JSON object {"tests": [...]} and nothing else.',
    ]
    if seed_instructions:
        instructions.append(f"Operator guidance: {seed_instructions}")
    content = _grounding_document(config) + "\n\n" + "\n".join(instructions)
    return ChatRequest(
        system_prompt=(
            "You design regression test suites for conversational support "
            "agents. You respond only with the requested JSON document."
        ),
        messages=(ChatMessage(role="user", content=content),),
        temperature=GENERATION_TEMPERATURE,
        response_format="structured",
    )


def _parse_case_docs(raw_text: str) -> list[dict]:
    try:
        doc = extract_json_text(raw_text)
    except json.JSONDecodeError as exc:
        raise ProviderProtocolError(f"suite document is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping) or not isinstance(doc.get("tests"), list):
        raise ProviderProtocolError("suite document must be an object with a tests list")
    return list(doc["tests"])


def _build_case(
    doc: Mapping[str, Any],
    case_id: str,
    category: TestCategory,
    config: UseCaseConfig,
    origin: TestOrigin = TestOrigin.GENERATED,
) -> TestCase:
    """Construct and fully validate one case; raises ValidationError with
    the specific violated invariant."""
    if not isinstance(doc, Mapping):
        raise ValidationError("case must be an object")
    case = TestCase(
        id=case_id,
        title=doc.get("title", ""),
        category=category,
        conversation_script=tuple(doc.get("conversation_script", ())),
        pass_criteria=tuple(doc.get("pass_criteria", ())),
        mock_overrides=doc.get("mock_overrides", {}),
        origin=origin,
    )
    issues = validate_test_case(case, config)
    if issues:
        raise ValidationError("; ".join(issues))
    return case


def generate_test_suite(
    config: UseCaseConfig,
    options: GenerationOptions,
    provider,
) -> list[TestCase]:
    if not config.requirements.strip():
        raise ValidationError("config.requirements must be non-empty")

    counts = options.resolve_counts(config)
    suite: list[TestCase] = []
    for category, count in counts.items():
        if count == 0:
            continue
        request = _category_request(config, category, count, options.seed_instructions)
        response = provider.complete(request)
        case_docs = _parse_case_docs(response.text or "")
        valid, invalid = _validate_batch(case_docs, category, config, start=len(suite))
        if invalid:
            repaired = _reask_invalid(
                config, category, invalid, request, response.text or "", provider,
                start=len(suite) + len(valid),
            )
            valid.extend(repaired)
        suite.extend(valid)

    if not suite:
        raise GenerationFailedError("generation produced zero valid test cases")
    return suite


def _validate_batch(
    case_docs: Sequence[Mapping[str, Any]],
    category: TestCategory,
    config: UseCaseConfig,
    start: int,
) -> tuple[list[TestCase], list[tuple[Mapping[str, Any], str]]]:
    valid: list[TestCase] = []
    invalid: list[tuple[Mapping[str, Any], str]] = []
    for doc in case_docs:
        case_id = f"{category.value}-{start + len(valid) + 1:03d}"
        try:
            valid.append(_build_case(doc, case_id, category, config))
        except ValidationError as exc:
            invalid.append((doc, str(exc)))
    return valid, invalid


def _reask_invalid(
    config: UseCaseConfig,
    category: TestCategory,
    invalid: list[tuple[Mapping[str, Any], str]],
    original_request: ChatRequest,
    original_response: str,
    provider,
    start: int,
) -> list[TestCase]:
    problems = "\n".join(
        f"- case {json.dumps(dict(doc) if isinstance(doc, Mapping) else doc)[:200]}: {reason}"
        for doc, reason in invalid
    )
    correction = (
        "Some generated cases were invalid:\n"
        f"{problems}\n"
        f"Rewrite only these {len(invalid)} cases so they validate, and "
        'respond with {"tests": [...]} containing just the corrected cases.'
    )
    reask = ChatRequest(
        system_prompt=original_request.system_prompt,
        messages=original_request.messages
        + (
            ChatMessage(role="assistant", content=original_response),
            ChatMessage(role="user", content=correction),
        ),
        temperature=GENERATION_TEMPERATURE,
        response_format="structured",
    )
    try:
        response = provider.complete(reask)
        case_docs = _parse_case_docs(response.text or "")
    except ProviderProtocolError as exc:
        logger.warning("re-ask for %s failed to parse; dropping %d cases: %s",
                       category.value, len(invalid), exc)
        return []
    repaired, still_invalid = _validate_batch(case_docs, category, config, start=start)
    for doc, reason in still_invalid:
        logger.warning(
            "dropping invalid generated case in %s after re-ask: %s", category.value, reason
        )
    return repaired


# ---------------------------------------------------------------------------
# operator edits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteEdit:
    """One operator edit: op is add, modify, or remove."""

    op: str
    case_id: str | None = None
    case: Mapping[str, Any] | None = None
    changes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.op not in ("add", "modify", "remove"):
            raise ValidationError(f"unknown edit op {self.op!r}")
        if self.op == "add" and self.case is None:
            raise ValidationError("add edits require a case")
        if self.op in ("modify", "remove") and not self.case_id:
            raise ValidationError(f"{self.op} edits require a case_id")


def edit_test_suite(
    suite: Sequence[TestCase],
    edits: Iterable[SuiteEdit],
    config: UseCaseConfig,
) -> list[TestCase]:
    """Apply operator edits, re-validating every touched case. An edit that
    violates an invariant is rejected with the violation named."""
    cases = {case.id: case for case in suite}
    order = [case.id for case in suite]

    for edit in edits:
        if edit.op == "remove":
            if edit.case_id not in cases:
                raise NotFoundError(f"no test case with id {edit.case_id!r}")
            del cases[edit.case_id]
            order.remove(edit.case_id)
        elif edit.op == "add":
            doc = dict(edit.case or {})
            case_id = doc.pop("id", None) or f"added-{len(order) + 1:03d}"
            if case_id in cases:
                raise ValidationError(f"duplicate test case id {case_id!r}")
            category = TestCategory(doc.pop("category", "happy_path"))
            case = _build_case(doc, case_id, category, config,
                               origin=TestOrigin.OPERATOR_ADDED)
            cases[case_id] = case
            order.append(case_id)
        else:  # modify
            if edit.case_id not in cases:
                raise NotFoundError(f"no test case with id {edit.case_id!r}")
            current = cases[edit.case_id]
            doc = current.to_dict()
            doc.update(edit.changes)
            category = TestCategory(doc.pop("category"))
            doc.pop("id", None)
            doc.pop("origin", None)
            doc.pop("schema_version", None)
            case = _build_case(doc, current.id, category, config,
                               origin=TestOrigin.OPERATOR_EDITED)
            cases[current.id] = case

    return [cases[case_id] for case_id in order]
