"""Transcript judging.

One judge call evaluates all of a test's pass criteria jointly against the
transcript, the mechanically extracted tool call log, and the routing
events. The overall verdict is always computed locally as the conjunction
of the per-criterion verdicts; a model-supplied overall field is ignored.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping

from .errors import JudgeProtocolError, ValidationError
from .model import (
    CriterionVerdict,
    TestCase,
    Transcript,
    TurnKind,
    Verdict,
    VerdictReport,
    canonical_json,
)
from .providers import DEFAULT_MODEL_NAME, ChatMessage, ChatRequest, extract_json_text

logger = logging.getLogger(__name__)

# Editable strictness rubric. The core rule: claims about tool usage are
# checked against the tool call log, never against what the assistant's
# prose implies; routing and mandatory-language criteria get the same
# literal treatment.
JUDGE_RUBRIC = """\
You are a strict evaluator of customer-support conversation transcripts.
You receive a transcript, a mechanical tool call log, the routing events,
and a numbered list of pass criteria. Judge each criterion independently.

Strictness rules:
- A criterion stating that a tool call happened passes only if that tool's
  slug appears in the tool call log. The assistant saying or implying it
  used a tool does not count.
- A criterion about transferring or routing passes only if a matching
  routing event is listed.
- A criterion requiring specific wording passes only if the transcript
  contains that wording verbatim.
- When in doubt, fail the criterion and explain what was missing.

Respond with a JSON object of the form
{"criteria": [{"verdict": "PASS" | "FAIL", "reasoning": "..."}, ...]}
with exactly one entry per criterion, in the order given. Do not add other
keys; any "overall" field you emit will be ignored."""

REASK_MESSAGE = (
    "Your previous reply was not a valid verdict document: {problem}. "
    "Respond again with only the JSON object described in the instructions, "
    "with exactly {count} criteria entries in order."
)


@dataclass(frozen=True)
class JudgeSettings:
    model_name: str = DEFAULT_MODEL_NAME
    temperature: float = 0.0

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ValidationError("judge temperature is fixed at 0")


def extract_tool_call_log(transcript: Transcript) -> tuple[dict, ...]:
    """Ordered {tool_name, arguments} projection of the tool_call turns."""
    return tuple(
        {"tool_name": t.payload["tool_name"], "arguments": dict(t.payload["arguments"])}
        for t in transcript.turns
        if t.kind == TurnKind.TOOL_CALL
    )


def extract_routing_events(transcript: Transcript) -> tuple[dict, ...]:
    """Ordered {destination} projection of the routing_event turns."""
    return tuple(
        {"destination": t.payload["destination"]}
        for t in transcript.turns
        if t.kind == TurnKind.ROUTING_EVENT
    )


def _judge_payload(test: TestCase, transcript: Transcript) -> str:
    tool_log = extract_tool_call_log(transcript)
    routing = extract_routing_events(transcript)
    lines = ["## Conversation transcript", transcript.render_text() or "(empty)", ""]
    lines.append("## Tool call log")
    if tool_log:
        lines.extend(
            f"{i}. {entry['tool_name']} {canonical_json(entry['arguments'])}"
            for i, entry in enumerate(tool_log, 1)
        )
    else:
        lines.append("(empty)")
    lines.append("")
    lines.append("## Routing events")
    if routing:
        lines.extend(f"{i}. -> {e['destination']}" for i, e in enumerate(routing, 1))
    else:
        lines.append("(none)")
    lines.append("")
    lines.append("## Pass criteria")
    lines.extend(f"{i}. {c}" for i, c in enumerate(test.pass_criteria, 1))
    return "\n".join(lines)


def _parse_verdicts(raw_text: str, test: TestCase) -> tuple[CriterionVerdict, ...]:
    try:
        doc = extract_json_text(raw_text)
    except json.JSONDecodeError as exc:
        raise JudgeProtocolError(f"verdict document is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping) or not isinstance(doc.get("criteria"), list):
        raise JudgeProtocolError("verdict document must be an object with a criteria list")
    entries = doc["criteria"]
    if len(entries) != len(test.pass_criteria):
        raise JudgeProtocolError(
            f"expected {len(test.pass_criteria)} criteria entries, got {len(entries)}"
        )
    verdicts = []
    for criterion_text, entry in zip(test.pass_criteria, entries):
        if not isinstance(entry, Mapping) or entry.get("verdict") not in ("PASS", "FAIL"):
            raise JudgeProtocolError(f"criterion entry malformed: {entry!r}")
        verdicts.append(
            CriterionVerdict(
                criterion_text=criterion_text,
                verdict=Verdict(entry["verdict"]),
                reasoning=str(entry.get("reasoning", "")),
            )
        )
    return tuple(verdicts)


def judge_transcript(
    test: TestCase,
    transcript: Transcript,
    provider,
    judge_settings: JudgeSettings = JudgeSettings(),
) -> VerdictReport:
    """Judge one transcript. Raises JudgeProtocolError if the judge model
    fails structured validation twice (initial attempt plus one re-ask)."""
    if transcript.test_case_id != test.id:
        raise ValidationError(
            f"transcript belongs to {transcript.test_case_id!r}, not {test.id!r}"
        )

    # Aborted simulations cannot satisfy criteria; fail locally without
    # spending a judge call.
    if transcript.abort_reason is not None:
        return VerdictReport(
            test_case_id=test.id,
            prompt_version_index=transcript.prompt_version_index,
            criterion_verdicts=tuple(
                CriterionVerdict(
                    criterion_text=criterion,
                    verdict=Verdict.FAIL,
                    reasoning=f"simulation aborted: {transcript.abort_reason}",
                )
                for criterion in test.pass_criteria
            ),
        )

    messages = [ChatMessage(role="user", content=_judge_payload(test, transcript))]
    last_problem = ""
    for attempt in range(2):
        request = ChatRequest(
            system_prompt=JUDGE_RUBRIC,
            messages=tuple(messages),
            temperature=judge_settings.temperature,
            response_format="structured",
        )
        response = provider.complete(request)
        raw_text = response.text if response.kind == "text" else ""
        try:
            if response.kind != "text":
                raise JudgeProtocolError("judge responded with a tool call, not a document")
            verdicts = _parse_verdicts(raw_text, test)
        except JudgeProtocolError as exc:
            last_problem = str(exc)
            logger.warning("judge validation failed (attempt %d): %s", attempt + 1, exc)
            messages.append(ChatMessage(role="assistant", content=raw_text))
            messages.append(
                ChatMessage(
                    role="user",
                    content=REASK_MESSAGE.format(
                        problem=last_problem, count=len(test.pass_criteria)
                    ),
                )
            )
            continue
        return VerdictReport(
            test_case_id=test.id,
            prompt_version_index=transcript.prompt_version_index,
            criterion_verdicts=verdicts,
        )
    raise JudgeProtocolError(
        f"judge failed structured validation after re-ask: {last_problem}"
    )


def judge_with_fallback(
    test: TestCase,
    transcript: Transcript,
    provider,
    judge_settings: JudgeSettings = JudgeSettings(),
) -> VerdictReport:
    """Like judge_transcript, but protocol failures yield an inconclusive
    all-FAIL report instead of raising. Optimization treats inconclusive as
    FAIL; reports render it distinctly."""
    try:
        return judge_transcript(test, transcript, provider, judge_settings)
    except JudgeProtocolError as exc:
        return VerdictReport(
            test_case_id=test.id,
            prompt_version_index=transcript.prompt_version_index,
            criterion_verdicts=tuple(
                CriterionVerdict(
                    criterion_text=criterion,
                    verdict=Verdict.FAIL,
                    reasoning=f"inconclusive: {exc}",
                )
                for criterion in test.pass_criteria
            ),
            inconclusive=True,
        )
