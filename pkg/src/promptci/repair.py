"""Closed-loop prompt repair.

One iteration: evaluate the suite against the current prompt version,
diagnose the failures, rewrite the prompt, persist the new version. The loop
runs until the suite passes or the iteration budget is spent. Rewrites are
full-text replacements; a line-level scope audit flags (without blocking)
any change outside the sections the diagnoses implicate.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .clock import SYSTEM_CLOCK, Clock
from .errors import DiagnosisProtocolError, RepairStalledError, ValidationError
from .judge import JudgeSettings
from .model import (
    MISSING_SECTION,
    FailureClass,
    FailureDiagnosis,
    PlatformProfile,
    PromptOrigin,
    PromptVersion,
    RunKind,
    TestCase,
    Transcript,
    UseCaseConfig,
    Verdict,
    VerdictReport,
    lcs_keep_pairs,
)
from .platform import DEFAULT_PLATFORM_GUIDES, get_profile
from .providers import ChatMessage, ChatRequest, extract_json_text
from .runner import RunObserver, evaluate_suite
from .simulator import SimulationSettings

logger = logging.getLogger(__name__)

CHARS_PER_TOKEN_ESTIMATE = 4
DEFAULT_CONTEXT_BUDGET_TOKENS = 16000
LARGE_SUITE_THRESHOLD = 60
EXTENDED_ITERATION_LIMIT = 20

DIAGNOSIS_SYSTEM_PROMPT = """\
You analyze why conversation tests failed against an operator prompt.

For each distinct root cause, emit one diagnosis object:
- "failure_class": one of "tool_call_skip", "rule_violation",
  "step_reordering", "step_collapsing", "other".
- "responsible_section": the part of the operator prompt that caused the
  failure, copied VERBATIM character for character, or the exact string
  "MISSING" when no existing instruction covers the behavior.
- "explanation": one or two sentences on how that section (or its absence)
  produced the observed behavior.
- "evidence_test_ids": the ids of failing tests that exhibit this cause.
  Use only ids from the failing tests given to you.

Respond with JSON only: {"diagnoses": [ ... ]} with at least one entry."""

REPAIR_SYSTEM_PROMPT = """\
You rewrite an operator prompt so the listed failing tests will pass.

Rules:
- Change only what the diagnoses implicate; leave every other line exactly
  as it is.
- When a diagnosis says "MISSING", add the needed instruction as a new
  section or line; do not rewrite unrelated sections.
- Follow the platform authoring guide.
- Output the COMPLETE replacement prompt as plain text. No commentary, no
  surrounding code fences, no explanation before or after."""

DIAGNOSIS_REASK_MESSAGE = (
    "Your previous reply was not acceptable: {problems}. Respond again with "
    'JSON only, shaped {{"diagnoses": [...]}}, fixing these problems.'
)


def estimate_tokens(text: str) -> int:
    """Coarse size estimate used for context budgeting."""
    return max(1, len(text) // CHARS_PER_TOKEN_ESTIMATE)


# ---------------------------------------------------------------------------
# failure context and truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FailureContext:
    """One failing test with everything a diagnosis or repair call needs.

    transcript_text defaults to the full transcript rendering; truncation
    replaces it with an elided rendering while keeping the original
    transcript object intact.
    """

    test: TestCase
    transcript: Transcript
    verdict_report: VerdictReport
    transcript_text: str = ""

    def __post_init__(self):
        if not self.transcript_text:
            object.__setattr__(self, "transcript_text", self.transcript.render_text())

    @property
    def failed_criteria(self) -> tuple[str, ...]:
        return tuple(
            cv.criterion_text
            for cv in self.verdict_report.criterion_verdicts
            if cv.verdict == Verdict.FAIL
        )


def _failure_block(failure: FailureContext) -> str:
    lines = [f"### Test {failure.test.id}: {failure.test.title}", "Failed criteria:"]
    for criterion in failure.failed_criteria:
        lines.append(f"- {criterion}")
    if not failure.failed_criteria:
        lines.append("- (no per-criterion detail available)")
    lines.append("Transcript:")
    lines.append(failure.transcript_text)
    return "\n".join(lines)


@dataclass(frozen=True)
class TruncationReport:
    """Record of every elision or drop applied to fit the context budget."""

    elided_test_ids: tuple[str, ...] = ()
    dropped_test_ids: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def untouched(self) -> bool:
        return not self.elided_test_ids and not self.dropped_test_ids

    def to_dict(self) -> dict:
        return {
            "elided_test_ids": list(self.elided_test_ids),
            "dropped_test_ids": list(self.dropped_test_ids),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TruncationReport":
        return cls(
            elided_test_ids=tuple(doc.get("elided_test_ids", ())),
            dropped_test_ids=tuple(doc.get("dropped_test_ids", ())),
            notes=tuple(doc.get("notes", ())),
        )


def _elide_middle(failure: FailureContext, max_tokens: int | None) -> tuple[FailureContext | None, int]:
    """Drop middle turns from the rendered transcript, keeping the first and
    last ones, until the failure block fits max_tokens. None budget means
    "smallest possible". Returns (elided failure, turns removed)."""
    turn_count = len(failure.transcript.turns)
    rendered = failure.transcript.render_text().split("\n")
    turn_lines = rendered[:turn_count]
    footer = rendered[turn_count:]
    best: tuple[FailureContext, int] | None = None
    for keep in range((turn_count - 1) // 2, 0, -1):
        removed = turn_count - 2 * keep
        if removed <= 0:
            continue
        text = "\n".join(
            turn_lines[:keep]
            + [f"[... {removed} turns elided ...]"]
            + turn_lines[turn_count - keep:]
            + footer
        )
        candidate = FailureContext(
            test=failure.test,
            transcript=failure.transcript,
            verdict_report=failure.verdict_report,
            transcript_text=text,
        )
        best = (candidate, removed)
        if max_tokens is None:
            continue
        if estimate_tokens(_failure_block(candidate)) <= max_tokens:
            return candidate, removed
    if max_tokens is None and best is not None:
        return best
    return None, 0


def truncate_failure_context(
    failures: Sequence[FailureContext],
    budget_tokens: int,
    classes: Mapping[str, FailureClass] | None = None,
) -> tuple[tuple[FailureContext, ...], TruncationReport]:
    """Fit failures into a token budget.

    Ranking: when per-test failure classes are known, the most common class
    goes first so the repair sees the dominant problem. Ties and unknown
    classes keep original order. Transcripts are elided middle-out before a
    failure is dropped outright; the first-ranked failure is always kept,
    maximally elided if need be.
    """
    if budget_tokens <= 0:
        raise ValidationError("budget_tokens must be positive")
    order = list(range(len(failures)))
    if classes:
        freq = Counter(classes[f.test.id] for f in failures if f.test.id in classes)
        order.sort(
            key=lambda i: (
                -freq.get(classes.get(failures[i].test.id), 0),
                i,
            )
        )
    kept: list[FailureContext] = []
    elided: list[str] = []
    dropped: list[str] = []
    notes: list[str] = []
    remaining = budget_tokens
    for rank, idx in enumerate(order):
        failure = failures[idx]
        cost = estimate_tokens(_failure_block(failure))
        if cost <= remaining:
            kept.append(failure)
            remaining -= cost
            continue
        candidate, removed = _elide_middle(failure, remaining)
        if candidate is None and rank == 0:
            candidate, removed = _elide_middle(failure, None)
        if candidate is not None:
            kept.append(candidate)
            remaining = max(0, remaining - estimate_tokens(_failure_block(candidate)))
            elided.append(failure.test.id)
            notes.append(f"elided {removed} middle turn(s) of test {failure.test.id}")
        elif rank == 0:
            # cannot elide a 1-2 turn transcript; keep it over budget rather
            # than send an empty repair context
            kept.append(failure)
            remaining = 0
            notes.append(f"kept test {failure.test.id} over budget (transcript too short to elide)")
        else:
            dropped.append(failure.test.id)
            notes.append(f"dropped test {failure.test.id}: over remaining budget")
    return tuple(kept), TruncationReport(
        elided_test_ids=tuple(elided), dropped_test_ids=tuple(dropped), notes=tuple(notes)
    )


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------


def _failures_section(failures: Sequence[FailureContext]) -> str:
    return "\n\n".join(_failure_block(f) for f in failures)


def _diagnosis_payload(
    prompt: PromptVersion, failures: Sequence[FailureContext], platform_guides: str
) -> str:
    return (
        "## Operator prompt (full text)\n"
        "```\n"
        f"{prompt.text}\n"
        "```\n\n"
        f"## Platform guide\n{platform_guides}\n\n"
        f"## Failing tests\n{_failures_section(failures)}"
    )


def _parse_diagnoses(text: str) -> list[FailureDiagnosis]:
    doc = extract_json_text(text)
    if isinstance(doc, Mapping):
        items = doc.get("diagnoses")
    else:
        items = doc
    if not isinstance(items, list) or not items:
        raise ValidationError('reply must carry a non-empty "diagnoses" array')
    diagnoses = []
    for item in items:
        if not isinstance(item, Mapping):
            raise ValidationError("each diagnosis must be a JSON object")
        diagnoses.append(
            FailureDiagnosis(
                failure_class=item.get("failure_class"),
                responsible_section=item.get("responsible_section", ""),
                explanation=item.get("explanation", ""),
                evidence_test_ids=tuple(item.get("evidence_test_ids", ())),
            )
        )
    return diagnoses


def _check_diagnoses(
    diagnoses: Sequence[FailureDiagnosis], prompt: PromptVersion, failing_ids: frozenset[str]
) -> list[str]:
    problems = []
    for i, diagnosis in enumerate(diagnoses):
        try:
            diagnosis.validate_against_prompt(prompt.text)
        except ValidationError:
            problems.append(
                f"diagnosis {i}: responsible_section is not a verbatim substring "
                f'of the prompt and is not "{MISSING_SECTION}"'
            )
        unknown = [t for t in diagnosis.evidence_test_ids if t not in failing_ids]
        if unknown:
            problems.append(
                f"diagnosis {i}: evidence_test_ids {unknown} are not among the "
                f"failing tests"
            )
    return problems


def diagnose(
    prompt_version: PromptVersion,
    failures: Sequence[FailureContext],
    platform_guides: str,
    provider,
) -> tuple[FailureDiagnosis, ...]:
    """Ask the model to attribute each failure to a prompt section.

    One corrective re-ask on a malformed or invalid reply; a second bad
    reply raises DiagnosisProtocolError.
    """
    if not failures:
        raise ValidationError("diagnose requires at least one failure")
    failing_ids = frozenset(f.test.id for f in failures)
    messages = [ChatMessage(role="user", content=_diagnosis_payload(prompt_version, failures, platform_guides))]
    last_problems = "no reply"
    for attempt in range(2):
        response = provider.complete(
            ChatRequest(
                system_prompt=DIAGNOSIS_SYSTEM_PROMPT,
                messages=tuple(messages),
                temperature=0.0,
                response_format="structured",
            )
        )
        if response.kind != "text":
            last_problems = "reply was a tool call, not JSON text"
        else:
            try:
                diagnoses = _parse_diagnoses(response.text)
            except (ValidationError, json.JSONDecodeError) as err:
                last_problems = str(err)
            else:
                problems = _check_diagnoses(diagnoses, prompt_version, failing_ids)
                if not problems:
                    return tuple(diagnoses)
                last_problems = "; ".join(problems)
        if attempt == 0:
            messages.append(
                ChatMessage(role="assistant", content=response.text if response.kind == "text" else "(tool call)")
            )
            messages.append(
                ChatMessage(
                    role="user",
                    content=DIAGNOSIS_REASK_MESSAGE.format(problems=last_problems),
                )
            )
    raise DiagnosisProtocolError(f"diagnosis failed after re-ask: {last_problems}")


# ---------------------------------------------------------------------------
# repair
# ---------------------------------------------------------------------------


def _diagnoses_section(diagnoses: Sequence[FailureDiagnosis]) -> str:
    lines = []
    for d in diagnoses:
        section = d.responsible_section
        label = "MISSING (no existing instruction)" if section == MISSING_SECTION else repr(section)
        lines.append(
            f"- [{d.failure_class.value}] section: {label}\n"
            f"  cause: {d.explanation}\n"
            f"  evidence: {', '.join(d.evidence_test_ids)}"
        )
    return "\n".join(lines)


def _repair_payload(
    prompt: PromptVersion,
    diagnoses: Sequence[FailureDiagnosis],
    failures: Sequence[FailureContext],
    platform_guides: str,
    undiagnosed: bool,
) -> str:
    parts = [
        "## Operator prompt (full text)",
        "```",
        prompt.text,
        "```",
        "",
        "## Platform guide",
        platform_guides,
        "",
    ]
    if undiagnosed:
        parts.append("## Diagnoses")
        parts.append(
            "Structured diagnosis was unavailable. Work directly from the raw "
            "failing tests below."
        )
    else:
        parts.append("## Diagnoses")
        parts.append(_diagnoses_section(diagnoses))
    parts.append("")
    parts.append("## Failing tests")
    parts.append(_failures_section(failures))
    return "\n".join(parts)


def _unwrap_fence(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith("```") and stripped.endswith("```"):
        lines = stripped.split("\n")
        if len(lines) >= 2:
            return "\n".join(lines[1:-1]).strip("\n")
    return stripped


def repair(
    prompt_version: PromptVersion,
    diagnoses: Sequence[FailureDiagnosis],
    failures: Sequence[FailureContext],
    platform_guides: str,
    provider,
    undiagnosed: bool = False,
) -> str:
    """Ask the model for a full replacement prompt text.

    An empty or unchanged reply raises RepairStalledError; there is no
    partial-patch mode, the reply replaces the whole frontend prompt.
    """
    if not failures:
        raise ValidationError("repair requires at least one failure")
    if not diagnoses and not undiagnosed:
        raise ValidationError("repair requires diagnoses unless undiagnosed=True")
    request = ChatRequest(
        system_prompt=REPAIR_SYSTEM_PROMPT,
        messages=(
            ChatMessage(
                role="user",
                content=_repair_payload(prompt_version, diagnoses, failures, platform_guides, undiagnosed),
            ),
        ),
        temperature=0.0,
        response_format="free_text",
    )
    response = provider.complete(request)
    if response.kind != "text":
        raise RepairStalledError("repair reply was a tool call, not prompt text")
    new_text = _unwrap_fence(response.text)
    if not new_text:
        raise RepairStalledError("repair produced an empty prompt")
    if new_text == prompt_version.text or new_text == prompt_version.text.strip():
        raise RepairStalledError("repair returned the prompt unchanged")
    return new_text


# ---------------------------------------------------------------------------
# scope audit
# ---------------------------------------------------------------------------

_HEADING_PREFIXES = tuple(f"{'#' * n} " for n in range(1, 7))


def _is_heading(line: str) -> bool:
    stripped = line.lstrip()
    return stripped.startswith(_HEADING_PREFIXES) or stripped.rstrip() in ("#",)


def prompt_sections(text: str) -> tuple[tuple[int, int], ...]:
    """Line ranges (inclusive) of the prompt's sections: blocks separated by
    blank lines, with markdown headings opening a new section."""
    lines = text.split("\n")
    sections: list[tuple[int, int]] = []
    start: int | None = None
    for i, line in enumerate(lines):
        if not line.strip():
            if start is not None:
                sections.append((start, i - 1))
                start = None
        elif _is_heading(line):
            if start is not None:
                sections.append((start, i - 1))
            start = i
        elif start is None:
            start = i
    if start is not None:
        sections.append((start, len(lines) - 1))
    return tuple(sections)


@dataclass(frozen=True)
class ScopeReport:
    """Which changed lines fall outside every diagnosed section."""

    changed_line_count: int
    out_of_scope_removed: tuple[str, ...] = ()
    out_of_scope_added: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.out_of_scope_removed and not self.out_of_scope_added

    def to_dict(self) -> dict:
        return {
            "changed_line_count": self.changed_line_count,
            "out_of_scope_removed": list(self.out_of_scope_removed),
            "out_of_scope_added": list(self.out_of_scope_added),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScopeReport":
        return cls(
            changed_line_count=doc["changed_line_count"],
            out_of_scope_removed=tuple(doc.get("out_of_scope_removed", ())),
            out_of_scope_added=tuple(doc.get("out_of_scope_added", ())),
        )


def _allowed_lines(old_text: str, diagnoses: Sequence[FailureDiagnosis]) -> set[int]:
    sections = prompt_sections(old_text)
    allowed: set[int] = set()
    for diagnosis in diagnoses:
        if diagnosis.responsible_section == MISSING_SECTION:
            continue
        at = old_text.find(diagnosis.responsible_section)
        if at < 0:
            continue
        first = old_text.count("\n", 0, at)
        last = first + diagnosis.responsible_section.count("\n")
        for s, e in sections:
            if s <= last and e >= first:
                allowed.update(range(s, e + 1))
    return allowed


def audit_repair_scope(
    old_text: str, new_text: str, diagnoses: Sequence[FailureDiagnosis]
) -> ScopeReport:
    """Line-level audit of a repair against its diagnoses.

    A removed line is out of scope when it lies outside every section a
    diagnosis points at. An added line is out of scope when it was inserted
    away from every such section, unless some diagnosis said MISSING, which
    licenses additions anywhere. Advisory only; out-of-scope changes are
    flagged, never reverted.
    """
    old_lines = old_text.split("\n")
    new_lines = new_text.split("\n")
    pairs = lcs_keep_pairs(old_lines, new_lines)
    kept_old = {i for i, _ in pairs}
    kept_new = {j for _, j in pairs}
    removed = [i for i in range(len(old_lines)) if i not in kept_old]
    added = [j for j in range(len(new_lines)) if j not in kept_new]
    changed = max(len(removed), len(added))
    allowed = _allowed_lines(old_text, diagnoses)
    allows_additions_anywhere = any(
        d.responsible_section == MISSING_SECTION for d in diagnoses
    )
    out_removed = tuple(
        old_lines[i] for i in removed if i not in allowed and old_lines[i].strip()
    )
    out_added: list[str] = []
    if not allows_additions_anywhere:
        for j in added:
            if not new_lines[j].strip():
                continue
            prev_kept = max((i for i, jj in pairs if jj < j), default=-1)
            next_kept = min((i for i, jj in pairs if jj > j), default=len(old_lines))
            lo = max(0, prev_kept)
            hi = min(len(old_lines) - 1, next_kept)
            if not any(i in allowed for i in range(lo, hi + 1)):
                out_added.append(new_lines[j])
    return ScopeReport(
        changed_line_count=changed,
        out_of_scope_removed=out_removed,
        out_of_scope_added=tuple(out_added),
    )


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopConfig:
    """Iteration budget and stepping behavior for one optimization run."""

    max_iterations: int = 10
    extended_limit: int | None = None
    stop_on_convergence: bool = True
    step_through: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.extended_limit is not None and self.extended_limit < self.max_iterations:
            raise ValidationError("extended_limit must be >= max_iterations")

    @property
    def iteration_limit(self) -> int:
        return self.extended_limit if self.extended_limit is not None else self.max_iterations

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "extended_limit": self.extended_limit,
            "stop_on_convergence": self.stop_on_convergence,
            "step_through": self.step_through,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "LoopConfig":
        return cls(
            max_iterations=doc.get("max_iterations", 10),
            extended_limit=doc.get("extended_limit"),
            stop_on_convergence=doc.get("stop_on_convergence", True),
            step_through=doc.get("step_through", False),
        )


def default_loop_config(suite_size: int) -> LoopConfig:
    """Big suites get a longer leash: more tests means more distinct causes
    to work through one repair at a time."""
    if suite_size > LARGE_SUITE_THRESHOLD:
        return LoopConfig(extended_limit=EXTENDED_ITERATION_LIMIT)
    return LoopConfig()


@dataclass(frozen=True)
class IterationRecord:
    """What one loop iteration saw and did."""

    iteration_index: int
    run_record_ref: str
    failures: tuple[FailureDiagnosis, ...]
    repair_version: int | None
    pass_count: int
    fail_count: int
    undiagnosed_repair: bool = False
    scope_report: ScopeReport | None = None
    truncation: TruncationReport | None = None

    def __post_init__(self):
        if self.iteration_index < 0:
            raise ValidationError("iteration_index must be >= 0")
        if self.pass_count < 0 or self.fail_count < 0:
            raise ValidationError("counts must be >= 0")
        # a clean run never produces a repair
        if self.fail_count == 0 and self.repair_version is not None:
            raise ValidationError("repair_version must be absent when fail_count is 0")
        object.__setattr__(self, "failures", tuple(self.failures))

    def to_dict(self) -> dict:
        return {
            "iteration_index": self.iteration_index,
            "run_record_ref": self.run_record_ref,
            "failures": [d.to_dict() for d in self.failures],
            "repair_version": self.repair_version,
            "pass_count": self.pass_count,
            "fail_count": self.fail_count,
            "undiagnosed_repair": self.undiagnosed_repair,
            "scope_report": self.scope_report.to_dict() if self.scope_report else None,
            "truncation": self.truncation.to_dict() if self.truncation else None,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "IterationRecord":
        scope = doc.get("scope_report")
        truncation = doc.get("truncation")
        return cls(
            iteration_index=doc["iteration_index"],
            run_record_ref=doc["run_record_ref"],
            failures=tuple(FailureDiagnosis.from_dict(d) for d in doc.get("failures", ())),
            repair_version=doc.get("repair_version"),
            pass_count=doc["pass_count"],
            fail_count=doc["fail_count"],
            undiagnosed_repair=doc.get("undiagnosed_repair", False),
            scope_report=ScopeReport.from_dict(scope) if scope else None,
            truncation=TruncationReport.from_dict(truncation) if truncation else None,
        )


@dataclass(frozen=True)
class OptimizationResult:
    final_version: PromptVersion
    iterations: tuple[IterationRecord, ...]
    converged: bool
    halt_reason: str
    versions: tuple[PromptVersion, ...] = ()

    HALT_REASONS = ("converged", "iteration_limit", "repair_stalled", "aborted")

    def __post_init__(self):
        if self.halt_reason not in self.HALT_REASONS:
            raise ValidationError(f"unknown halt_reason {self.halt_reason!r}")
        if self.converged != (self.halt_reason == "converged"):
            raise ValidationError("converged must match halt_reason")


class StepController:
    """Hand-off point for step-through mode: the loop blocks after each
    repair until the operator resumes or aborts."""

    def __init__(self):
        self._event = threading.Event()
        self._lock = threading.Lock()
        self._decision: str | None = None
        self._aborted = False

    def resume(self) -> None:
        with self._lock:
            self._decision = "continue"
            self._event.set()

    def abort(self) -> None:
        # sticky: a running loop without pauses honors it at the next
        # iteration boundary
        with self._lock:
            self._decision = "abort"
            self._aborted = True
            self._event.set()

    def abort_requested(self) -> bool:
        with self._lock:
            return self._aborted

    def wait(self) -> str:
        self._event.wait()
        with self._lock:
            decision = self._decision or "continue"
            self._decision = None
            self._event.clear()
        return decision


def _rationale(diagnoses: Sequence[FailureDiagnosis], undiagnosed: bool) -> str:
    if undiagnosed:
        return "repair from raw verdicts; structured diagnosis unavailable"
    parts = [f"{d.failure_class.value}: {d.explanation}" for d in diagnoses]
    text = "; ".join(parts)
    return text[:497] + "..." if len(text) > 500 else text


def run_optimization(
    use_case: UseCaseConfig,
    suite: Sequence[TestCase],
    initial_prompt_version: PromptVersion,
    loop_config: LoopConfig,
    settings: SimulationSettings,
    provider,
    *,
    profile: PlatformProfile | None = None,
    judge_settings: JudgeSettings = JudgeSettings(),
    platform_guides: str = DEFAULT_PLATFORM_GUIDES,
    observer: RunObserver = RunObserver(),
    control: StepController | None = None,
    clock: Clock = SYSTEM_CLOCK,
    suite_revision_id: str = "",
    context_budget_tokens: int = DEFAULT_CONTEXT_BUDGET_TOKENS,
    parallelism: int = 1,
    first_iteration_index: int = 0,
    next_version_index: int | None = None,
) -> OptimizationResult:
    """Run the evaluate/diagnose/repair loop.

    Iteration k evaluates prompt version (initial + k new versions so far)
    and repairs only when another iteration remains to verify the rewrite,
    so the budget bounds both iterations and new versions. Each repair's
    parent is the version it rewrote; the first repair takes index
    next_version_index when given, so a drift repair can branch off the
    verified version while indices keep growing past the stored head.

    first_iteration_index resumes an interrupted job: iteration numbering
    continues where the persisted record stopped, against whatever version
    the caller reloaded.

    Diagnosis failure does not halt the loop; one repair per iteration may
    proceed from raw verdicts instead, flagged on the record. A stalled
    repair (empty or unchanged text) halts the loop. Provider outages
    propagate to the caller; every completed iteration has already been
    handed to the observer, so a rerun from the last persisted version
    loses nothing.
    """
    if not suite:
        raise ValidationError("suite must not be empty")
    if loop_config.step_through and control is None:
        raise ValidationError("step_through requires a StepController")
    profile = profile or get_profile(use_case.platform_profile_id)

    current = initial_prompt_version
    versions: list[PromptVersion] = [current]
    iterations: list[IterationRecord] = []
    limit = loop_config.iteration_limit
    if not 0 <= first_iteration_index < limit:
        raise ValidationError(
            f"first_iteration_index must be in [0, {limit}), got {first_iteration_index}"
        )
    upcoming_index = (
        next_version_index if next_version_index is not None
        else initial_prompt_version.version_index + 1
    )
    if upcoming_index <= initial_prompt_version.version_index:
        raise ValidationError("next_version_index must exceed the initial version index")
    converged = False
    halt_reason = "iteration_limit"

    for k in range(first_iteration_index, limit):
        if control is not None and control.abort_requested():
            halt_reason = "aborted"
            break
        record, results = evaluate_suite(
            suite,
            current,
            profile,
            use_case,
            settings,
            provider,
            judge_settings=judge_settings,
            run_kind=RunKind.OPTIMIZATION,
            suite_revision_id=suite_revision_id,
            observer=observer,
            clock=clock,
            parallelism=parallelism,
        )
        failures = tuple(
            FailureContext(test=t, transcript=results[t.id][0], verdict_report=results[t.id][1])
            for t in suite
            if results[t.id][1].overall == Verdict.FAIL
        )
        pass_count = record.summary.passed
        fail_count = record.summary.failed

        if fail_count == 0:
            converged = True
            iterations.append(
                IterationRecord(
                    iteration_index=k,
                    run_record_ref=record.run_id,
                    failures=(),
                    repair_version=None,
                    pass_count=pass_count,
                    fail_count=0,
                )
            )
            observer.on_iteration_finished(iterations[-1])
            if loop_config.stop_on_convergence or k + 1 >= limit:
                halt_reason = "converged"
                break
            continue

        converged = False
        if k + 1 >= limit:
            # no iteration left to verify a rewrite; stop without repairing
            iterations.append(
                IterationRecord(
                    iteration_index=k,
                    run_record_ref=record.run_id,
                    failures=(),
                    repair_version=None,
                    pass_count=pass_count,
                    fail_count=fail_count,
                )
            )
            observer.on_iteration_finished(iterations[-1])
            halt_reason = "iteration_limit"
            break

        diag_input, _ = truncate_failure_context(failures, context_budget_tokens)
        undiagnosed = False
        try:
            diagnoses = diagnose(current, diag_input, platform_guides, provider)
        except DiagnosisProtocolError as err:
            logger.warning("diagnosis failed, repairing from raw verdicts: %s", err)
            diagnoses = ()
            undiagnosed = True

        classes: dict[str, FailureClass] = {}
        for diagnosis in diagnoses:
            for test_id in diagnosis.evidence_test_ids:
                classes.setdefault(test_id, diagnosis.failure_class)
        repair_input, truncation = truncate_failure_context(
            failures, context_budget_tokens, classes or None
        )

        try:
            new_text = repair(
                current, diagnoses, repair_input, platform_guides, provider, undiagnosed=undiagnosed
            )
        except RepairStalledError as err:
            logger.warning("repair stalled at iteration %d: %s", k, err)
            iterations.append(
                IterationRecord(
                    iteration_index=k,
                    run_record_ref=record.run_id,
                    failures=diagnoses,
                    repair_version=None,
                    pass_count=pass_count,
                    fail_count=fail_count,
                    undiagnosed_repair=undiagnosed,
                    truncation=None if truncation.untouched else truncation,
                )
            )
            observer.on_iteration_finished(iterations[-1])
            halt_reason = "repair_stalled"
            break

        new_version = PromptVersion(
            version_index=upcoming_index,
            text=new_text,
            origin=PromptOrigin.REPAIR,
            parent_version=current.version_index,
            repair_rationale=_rationale(diagnoses, undiagnosed),
            created_at=clock.now(),
        )
        upcoming_index += 1
        scope = audit_repair_scope(current.text, new_text, diagnoses) if diagnoses else None
        if scope is not None and not scope.clean:
            logger.warning(
                "repair at iteration %d changed lines outside diagnosed sections: %d removed, %d added",
                k,
                len(scope.out_of_scope_removed),
                len(scope.out_of_scope_added),
            )
        iteration = IterationRecord(
            iteration_index=k,
            run_record_ref=record.run_id,
            failures=diagnoses,
            repair_version=new_version.version_index,
            pass_count=pass_count,
            fail_count=fail_count,
            undiagnosed_repair=undiagnosed,
            scope_report=scope,
            truncation=None if truncation.untouched else truncation,
        )
        iterations.append(iteration)
        versions.append(new_version)
        observer.on_version_created(new_version)
        observer.on_iteration_finished(iteration)
        current = new_version

        if loop_config.step_through:
            observer.on_paused(new_version.version_index)
            if control.wait() == "abort":
                halt_reason = "aborted"
                break

    return OptimizationResult(
        final_version=current,
        iterations=tuple(iterations),
        converged=converged,
        halt_reason=halt_reason,
        versions=tuple(versions),
    )
