"""Domain model tests.

Expected values for the diff operation come from a brute-force recursive
LCS oracle defined here, independent of the dynamic-programming
implementation under test.
"""

from datetime import datetime, timezone
from functools import lru_cache
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptci.errors import ConfigurationError, ValidationError
from promptci.model import (
    CriterionVerdict,
    DriftEvent,
    FailureClass,
    FailureDiagnosis,
    FieldSpec,
    PerTestResult,
    PlatformProfile,
    PromptOrigin,
    PromptVersion,
    RunKind,
    RunRecord,
    RunSummary,
    TestCase,
    TestCategory,
    ToolSpec,
    Transcript,
    Turn,
    UseCaseConfig,
    VariableSpec,
    Verdict,
    VerdictReport,
    compose_system_prompt,
    diff_prompt_versions,
    validate_mock_value,
    validate_test_case,
)

TS = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_profile(backend="You are a service agent.\nFollow the rules below."):
    return PlatformProfile(
        id="default",
        backend_prompt=backend,
        routing_marker_pattern=r"\[ROUTE TO: ([^\]]+)\]",
    )


def make_version(text, index=0):
    origin = PromptOrigin.DRAFT if index == 0 else PromptOrigin.REPAIR
    rationale = None if index == 0 else "fix"
    return PromptVersion(
        version_index=index,
        text=text,
        origin=origin,
        parent_version=None if index == 0 else index - 1,
        repair_rationale=rationale,
        created_at=TS,
    )


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


class TestComposeSystemPrompt:
    def test_contains_both_parts_in_order(self):
        profile = make_profile()
        version = make_version("Greet the customer.\nVerify identity.")
        composed = compose_system_prompt(profile, version)
        i = composed.find(profile.backend_prompt)
        j = composed.find(version.text)
        assert i == 0
        assert j > i

    def test_exactly_one_blank_line_between_parts(self):
        profile = make_profile(backend="BASE")
        version = make_version("FRONT")
        assert compose_system_prompt(profile, version) == "BASE\n\nFRONT"

    def test_deterministic_and_length_exact(self):
        # No trimming or padding: size is fully determined by the parts.
        profile = make_profile(backend="A\n")
        version = make_version("\nB")
        out1 = compose_system_prompt(profile, version)
        out2 = compose_system_prompt(profile, version)
        assert out1 == out2
        assert len(out1) == len("A\n") + 2 + len("\nB")

    def test_empty_backend_rejected(self):
        version = make_version("FRONT")
        profile = make_profile()
        object.__setattr__(profile, "backend_prompt", "")
        with pytest.raises(ConfigurationError):
            compose_system_prompt(profile, version)

    def test_empty_frontend_rejected(self):
        profile = make_profile()
        version = make_version("x")
        object.__setattr__(version, "text", "")
        with pytest.raises(ConfigurationError):
            compose_system_prompt(profile, version)

    @given(st.text(min_size=1, max_size=80), st.text(min_size=1, max_size=80))
    def test_round_trip_parts_recoverable_when_marker_free(self, backend, frontend):
        # When neither part contains a blank line and neither abuts the
        # separator with its own newline, the first blank line is exactly
        # the separator, so both parts are recoverable.
        if "\n\n" in backend or "\n\n" in frontend:
            return
        if backend.endswith("\n") or frontend.startswith("\n"):
            return
        composed = compose_system_prompt(make_profile(backend), make_version(frontend))
        got_backend, got_frontend = composed.split("\n\n", 1)
        assert got_backend == backend
        assert got_frontend == frontend


# ---------------------------------------------------------------------------
# diff oracle: brute-force recursion, memoized, on tuples of lines
# ---------------------------------------------------------------------------


def oracle_lcs_len(a: tuple, b: tuple) -> int:
    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def oracle_diff_counts(old_text: str, new_text: str) -> tuple[int, int, int]:
    """(removed, added, changed) per the LCS model: removed = len(old) - lcs,
    added = len(new) - lcs, changed = max(removed, added)."""
    a = tuple(old_text.split("\n"))
    b = tuple(new_text.split("\n"))
    k = oracle_lcs_len(a, b)
    removed = len(a) - k
    added = len(b) - k
    return removed, added, max(removed, added)


class TestDiffPromptVersions:
    def test_identical_texts_have_zero_changes(self):
        text = "a\nb\nc"
        diff = diff_prompt_versions(text, text)
        assert diff.added == ()
        assert diff.removed == ()
        assert diff.changed_line_count == 0

    def test_three_substituted_lines_count_three(self):
        old = "keep\none\ntwo\nthree\nkeep2"
        new = "keep\nuno\ndos\ntres\nkeep2"
        diff = diff_prompt_versions(old, new)
        assert diff.removed == ("one", "two", "three")
        assert diff.added == ("uno", "dos", "tres")
        assert diff.changed_line_count == 3

    def test_pure_insertion(self):
        diff = diff_prompt_versions("a\nc", "a\nb\nc")
        assert diff.added == ("b",)
        assert diff.removed == ()
        assert diff.changed_line_count == 1

    def test_pure_deletion(self):
        diff = diff_prompt_versions("a\nb\nc", "a\nc")
        assert diff.removed == ("b",)
        assert diff.changed_line_count == 1

    def test_trailing_newline_difference_is_a_change(self):
        diff = diff_prompt_versions("a", "a\n")
        assert diff.changed_line_count == 1

    def test_accepts_prompt_versions(self):
        diff = diff_prompt_versions(make_version("a\nb"), make_version("a\nc", index=1))
        assert diff.removed == ("b",)
        assert diff.added == ("c",)

    @given(
        st.lists(st.sampled_from(["x", "y", "z", "w"]), max_size=8),
        st.lists(st.sampled_from(["x", "y", "z", "w"]), max_size=8),
    )
    @settings(max_examples=300, deadline=None)
    def test_counts_match_brute_force_oracle(self, old_lines, new_lines):
        old_text = "\n".join(old_lines)
        new_text = "\n".join(new_lines)
        removed, added, changed = oracle_diff_counts(old_text, new_text)
        diff = diff_prompt_versions(old_text, new_text)
        assert len(diff.removed) == removed
        assert len(diff.added) == added
        assert diff.changed_line_count == changed

    @given(st.text(max_size=120), st.text(max_size=120))
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_zero_iff_identical(self, old_text, new_text):
        fwd = diff_prompt_versions(old_text, new_text)
        rev = diff_prompt_versions(new_text, old_text)
        assert fwd.added == rev.removed
        assert fwd.removed == rev.added
        assert fwd.changed_line_count == rev.changed_line_count
        assert (fwd.changed_line_count == 0) == (old_text == new_text)

    def test_removed_lines_all_occur_in_old_text(self):
        old = "alpha\nbeta\ngamma"
        new = "beta\ndelta"
        diff = diff_prompt_versions(old, new)
        for line in diff.removed:
            assert line in old.split("\n")
        for line in diff.added:
            assert line in new.split("\n")


# ---------------------------------------------------------------------------
# field schemas and mocks
# ---------------------------------------------------------------------------


class TestFieldSpec:
    def test_rejects_unknown_type(self):
        with pytest.raises(ValidationError):
            FieldSpec(type="uuid")

    def test_enum_membership(self):
        spec = FieldSpec(type="string", enum=("a", "b"))
        assert spec.accepts("a") is None
        assert spec.accepts("c") is not None

    def test_range_bounds(self):
        spec = FieldSpec(type="number", range=(0, 10))
        assert spec.accepts(5) is None
        assert spec.accepts(10) is None
        assert spec.accepts(11) is not None

    def test_bool_is_not_a_number(self):
        assert FieldSpec(type="number").accepts(True) is not None
        assert FieldSpec(type="integer").accepts(False) is not None
        assert FieldSpec(type="boolean").accepts(True) is None

    def test_inverted_range_rejected(self):
        with pytest.raises(ValidationError):
            FieldSpec(type="number", range=(5, 1))


ORDER_TOOL = ToolSpec(
    name="lookup-order",
    description="Fetch order state",
    return_schema={
        "status": FieldSpec(type="string", enum=("shipped", "pending", "cancelled")),
        "total": FieldSpec(type="number", range=(0, 100000)),
        "items": FieldSpec(type="array"),
    },
)


class TestMockValidation:
    def test_conforming_mock_accepted(self):
        assert validate_mock_value(ORDER_TOOL, {"status": "shipped", "total": 12.5}) == []

    def test_partial_mock_accepted(self):
        assert validate_mock_value(ORDER_TOOL, {"status": "pending"}) == []

    def test_unknown_field_rejected(self):
        issues = validate_mock_value(ORDER_TOOL, {"surprise": 1})
        assert len(issues) == 1
        assert "undeclared" in issues[0]

    def test_enum_violation_rejected(self):
        issues = validate_mock_value(ORDER_TOOL, {"status": "lost"})
        assert len(issues) == 1

    def test_non_object_rejected(self):
        assert validate_mock_value(ORDER_TOOL, "shipped") != []

    def test_test_case_mock_against_config(self):
        config = UseCaseConfig(
            id="uc1", name="orders", requirements="Handle order inquiries.",
            tools=(ORDER_TOOL,),
        )
        case = TestCase(
            id="t1",
            title="unknown tool in mocks",
            category=TestCategory.HAPPY_PATH,
            conversation_script=("Where is my order?",),
            pass_criteria=("Agent looks up the order",),
            mock_overrides={"refund": {"ok": True}},
        )
        issues = validate_test_case(case, config)
        assert issues and "unknown tool" in issues[0]


# ---------------------------------------------------------------------------
# transcript invariants
# ---------------------------------------------------------------------------


class TestTranscript:
    def test_tool_response_must_follow_matching_call(self):
        with pytest.raises(ValidationError):
            Transcript(
                test_case_id="t1",
                prompt_version_index=0,
                turns=(Turn.tool_response("c1", {"ok": True}),),
                completed=True,
            )

    def test_mismatched_call_id_rejected(self):
        with pytest.raises(ValidationError):
            Transcript(
                test_case_id="t1",
                prompt_version_index=0,
                turns=(
                    Turn.customer("hi"),
                    Turn.tool_call("lookup-order", {}, "c1"),
                    Turn.tool_response("c2", {}),
                ),
                completed=True,
            )

    def test_routing_event_must_be_terminal(self):
        with pytest.raises(ValidationError):
            Transcript(
                test_case_id="t1",
                prompt_version_index=0,
                turns=(
                    Turn.routing("Billing", "[ROUTE TO: Billing]"),
                    Turn.customer("hello?"),
                ),
                completed=True,
            )

    def test_valid_interleaving_accepted(self):
        t = Transcript(
            test_case_id="t1",
            prompt_version_index=0,
            turns=(
                Turn.customer("where is my order"),
                Turn.tool_call("lookup-order", {"order_id": "A1"}, "c1"),
                Turn.tool_response("c1", {"status": "shipped"}),
                Turn.assistant("It shipped."),
                Turn.routing("Billing", "[ROUTE TO: Billing]"),
            ),
            completed=True,
        )
        assert len(t.tool_calls()) == 1
        assert t.turns[-1].payload["destination"] == "Billing"

    def test_turn_payload_shape_enforced(self):
        with pytest.raises(ValidationError):
            Turn("customer", {"text": "hi", "extra": 1})
        with pytest.raises(ValidationError):
            Turn("tool_call", {"tool_name": "x"})

    def test_render_text_labels_every_turn(self):
        t = Transcript(
            test_case_id="t1",
            prompt_version_index=0,
            turns=(
                Turn.customer("hi"),
                Turn.assistant("hello"),
                Turn.tool_call("lookup-order", {}, "c1"),
                Turn.tool_response("c1", {"status": "pending"}),
            ),
            completed=False,
            abort_reason="script exhausted",
        )
        text = t.render_text()
        for label in ("[customer]", "[assistant]", "[tool call]", "[tool response]", "[aborted]"):
            assert label in text


# ---------------------------------------------------------------------------
# verdicts: conjunction semantics
# ---------------------------------------------------------------------------


class TestVerdictReport:
    @pytest.mark.parametrize("n", range(1, 11))
    def test_conjunction_exhaustive(self, n):
        # Every assignment of PASS/FAIL to n criteria; overall is PASS only
        # on the all-PASS assignment.
        for bits in product((Verdict.PASS, Verdict.FAIL), repeat=n):
            report = VerdictReport(
                test_case_id="t1",
                prompt_version_index=0,
                criterion_verdicts=tuple(
                    CriterionVerdict(criterion_text=f"c{i}", verdict=v)
                    for i, v in enumerate(bits)
                ),
            )
            expected = Verdict.PASS if all(v == Verdict.PASS for v in bits) else Verdict.FAIL
            assert report.overall == expected

    def test_supplied_overall_must_match_conjunction(self):
        with pytest.raises(ValidationError):
            VerdictReport(
                test_case_id="t1",
                prompt_version_index=0,
                criterion_verdicts=(
                    CriterionVerdict(criterion_text="c", verdict=Verdict.FAIL),
                ),
                overall=Verdict.PASS,
            )

    def test_empty_criteria_rejected(self):
        with pytest.raises(ValidationError):
            VerdictReport(
                test_case_id="t1", prompt_version_index=0, criterion_verdicts=()
            )


# ---------------------------------------------------------------------------
# runs and drift events
# ---------------------------------------------------------------------------


def make_run(run_id, verdicts: dict, version=0, kind=RunKind.REGRESSION):
    per_test = {
        tid: PerTestResult(transcript_ref=f"tr-{tid}", verdict_ref=f"vd-{tid}", overall=v)
        for tid, v in verdicts.items()
    }
    passed = sum(1 for v in verdicts.values() if v == Verdict.PASS)
    return RunRecord(
        run_id=run_id,
        run_kind=kind,
        prompt_version_index=version,
        started_at=TS,
        finished_at=TS,
        per_test=per_test,
        summary=RunSummary(total=len(verdicts), passed=passed, failed=len(verdicts) - passed),
        use_case_id="uc1",
        suite_revision_id="rev1",
    )


class TestRunRecord:
    def test_summary_must_match_partition(self):
        per_test = {
            "t1": PerTestResult(transcript_ref="a", verdict_ref="b", overall=Verdict.PASS)
        }
        with pytest.raises(ValidationError):
            RunRecord(
                run_id="r1",
                run_kind=RunKind.REGRESSION,
                prompt_version_index=0,
                started_at=TS,
                finished_at=TS,
                per_test=per_test,
                summary=RunSummary(total=1, passed=0, failed=1),
            )

    def test_total_must_match_entry_count(self):
        with pytest.raises(ValidationError):
            RunRecord(
                run_id="r1",
                run_kind=RunKind.REGRESSION,
                prompt_version_index=0,
                started_at=TS,
                finished_at=TS,
                per_test={},
                summary=RunSummary(total=3, passed=3, failed=0),
            )


class TestDriftEvent:
    def test_from_runs_accepts_true_flip(self):
        baseline = make_run("r1", {"t1": Verdict.PASS, "t2": Verdict.PASS})
        current = make_run("r2", {"t1": Verdict.PASS, "t2": Verdict.FAIL})
        event = DriftEvent.from_runs("e1", TS, baseline, current, ["t2"])
        assert event.newly_failing_tests == ("t2",)
        assert event.status.value == "open"

    def test_from_runs_rejects_non_flip(self):
        baseline = make_run("r1", {"t1": Verdict.FAIL})
        current = make_run("r2", {"t1": Verdict.FAIL})
        with pytest.raises(ValidationError):
            DriftEvent.from_runs("e1", TS, baseline, current, ["t1"])

    def test_from_runs_rejects_unknown_test(self):
        baseline = make_run("r1", {"t1": Verdict.PASS})
        current = make_run("r2", {"t1": Verdict.PASS})
        with pytest.raises(ValidationError):
            DriftEvent.from_runs("e1", TS, baseline, current, ["ghost"])

    def test_empty_flip_list_rejected(self):
        with pytest.raises(ValidationError):
            DriftEvent(
                event_id="e1",
                detected_at=TS,
                regression_run_id="r2",
                baseline_run_id="r1",
                newly_failing_tests=(),
            )

    def test_status_transition_preserves_identity(self):
        baseline = make_run("r1", {"t1": Verdict.PASS})
        current = make_run("r2", {"t1": Verdict.FAIL})
        event = DriftEvent.from_runs("e1", TS, baseline, current, ["t1"])
        moved = event.with_status(event.status.REPAIRED_PENDING_REVIEW, repair_prompt_version=3)
        assert moved.event_id == event.event_id
        assert moved.repair_prompt_version == 3
        assert moved.newly_failing_tests == event.newly_failing_tests


# ---------------------------------------------------------------------------
# serialization round trips
# ---------------------------------------------------------------------------


def sample_config():
    return UseCaseConfig(
        id="uc1",
        name="Order Support",
        requirements="Verify identity before discussing orders. Offer refunds only after lookup.",
        tools=(ORDER_TOOL, ToolSpec(name="issue-refund")),
        variables=(VariableSpec(name="customer.id", direction="read"),),
        sub_agents=("Billing Agent",),
        draft_prompt="Greet, verify, then help.",
    )


class TestSerialization:
    @pytest.mark.parametrize(
        "value",
        [
            ORDER_TOOL,
            VariableSpec(name="cart_total", direction="read_write"),
            make_profile(),
            sample_config(),
            make_version("Greet the customer.", index=0),
            make_version("Greet the customer warmly.", index=2),
            TestCase(
                id="t1",
                title="refund flow",
                category=TestCategory.ERROR_PATH,
                conversation_script=("I want a refund", "order A1"),
                pass_criteria=("Agent called lookup-order", "No refund before lookup"),
                mock_overrides={"lookup-order": {"status": "shipped"}},
                origin="operator_added",
            ),
            Transcript(
                test_case_id="t1",
                prompt_version_index=1,
                turns=(
                    Turn.customer("hi"),
                    Turn.tool_call("lookup-order", {"order_id": "A1"}, "c1"),
                    Turn.tool_response("c1", {"status": "shipped", "total": 3}),
                    Turn.assistant("done"),
                ),
                completed=True,
                unconsumed_script=("never sent",),
            ),
            VerdictReport(
                test_case_id="t1",
                prompt_version_index=1,
                criterion_verdicts=(
                    CriterionVerdict("Agent called lookup-order", Verdict.PASS, "saw call"),
                    CriterionVerdict("No refund before lookup", Verdict.FAIL, "refunded early"),
                ),
                inconclusive=True,
            ),
            FailureDiagnosis(
                failure_class=FailureClass.TOOL_CALL_SKIP,
                responsible_section="Greet, verify, then help.",
                explanation="lookup skipped",
                evidence_test_ids=("t1",),
            ),
            make_run("r9", {"t1": Verdict.PASS, "t2": Verdict.FAIL}, version=4),
            DriftEvent(
                event_id="e1",
                detected_at=TS,
                regression_run_id="r2",
                baseline_run_id="r1",
                newly_failing_tests=("t2",),
                repair_prompt_version=5,
                status="repaired_pending_review",
                urgent=True,
            ),
        ],
        ids=lambda v: type(v).__name__,
    )
    def test_round_trip(self, value):
        doc = value.to_dict()
        rebuilt = type(value).from_dict(doc)
        assert rebuilt.to_dict() == doc

    def test_dict_is_json_safe(self):
        import json

        for value in (sample_config(), make_run("r1", {"t": Verdict.PASS})):
            json.dumps(value.to_dict())

    def test_unsupported_schema_version_rejected(self):
        doc = sample_config().to_dict()
        doc["schema_version"] = 99
        with pytest.raises(ValidationError):
            UseCaseConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# misc invariants
# ---------------------------------------------------------------------------


class TestPromptVersion:
    def test_version_zero_must_be_draft(self):
        with pytest.raises(ValidationError):
            PromptVersion(version_index=0, text="x", origin=PromptOrigin.REPAIR,
                          repair_rationale="r")

    def test_repair_requires_rationale(self):
        with pytest.raises(ValidationError):
            PromptVersion(version_index=1, text="x", origin=PromptOrigin.REPAIR,
                          parent_version=0)


class TestUseCaseConfig:
    def test_duplicate_tool_names_rejected(self):
        with pytest.raises(ValidationError):
            UseCaseConfig(
                id="uc1", name="x", requirements="r",
                tools=(ToolSpec(name="a"), ToolSpec(name="a")),
            )

    def test_tool_lookup(self):
        config = sample_config()
        assert config.tool("issue-refund") is not None
        assert config.tool("missing") is None

    def test_toolless_config_allowed(self):
        UseCaseConfig(id="uc1", name="faq", requirements="Answer from knowledge.")


class TestFailureDiagnosis:
    def test_substring_check(self):
        diag = FailureDiagnosis(
            failure_class="rule_violation",
            responsible_section="verify, then help",
            explanation="",
            evidence_test_ids=("t1",),
        )
        diag.validate_against_prompt("Greet, verify, then help.")
        with pytest.raises(ValidationError):
            diag.validate_against_prompt("Completely different prompt")

    def test_missing_sentinel_always_valid(self):
        diag = FailureDiagnosis(
            failure_class="other",
            responsible_section="MISSING",
            explanation="no such rule",
            evidence_test_ids=("t1",),
        )
        diag.validate_against_prompt("anything")
