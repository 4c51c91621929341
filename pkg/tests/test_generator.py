"""Generator tests: scripted pass-through, re-ask filtering, sizing
heuristics, and operator-edit validation."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptci.errors import GenerationFailedError, NotFoundError, ValidationError
from promptci.generator import (
    GenerationOptions,
    SuiteEdit,
    count_requirement_steps,
    default_target_counts,
    edit_test_suite,
    generate_test_suite,
    split_counts,
)
from promptci.model import (
    FieldSpec,
    TestCategory,
    TestOrigin,
    ToolSpec,
    UseCaseConfig,
    validate_test_case,
)
from promptci.providers import ChatResponse, ScriptedProvider

CONFIG = UseCaseConfig(
    id="uc1",
    name="cancellations",
    requirements=(
        "1. Verify the customer's identity.\n"
        "2. Look up the subscription with getProductDetailsForCancel.\n"
        "3. If zuoraStatus is Cancelled, route to the Billing Agent.\n"
        "4. Otherwise offer to cancel."
    ),
    tools=(
        ToolSpec(
            name="getProductDetailsForCancel",
            return_schema={
                "zuoraStatus": FieldSpec(type="string", enum=("Active", "Cancelled")),
            },
        ),
    ),
    sub_agents=("Billing Agent",),
)


def case_doc(title="nominal cancel", script=("I want to cancel",),
             criteria=("agent calls getProductDetailsForCancel",), mocks=None):
    return {
        "title": title,
        "conversation_script": list(script),
        "pass_criteria": list(criteria),
        "mock_overrides": mocks if mocks is not None else {
            "getProductDetailsForCancel": {"zuoraStatus": "Active"}
        },
    }


def suite_response(*docs):
    return ChatResponse.of_text(json.dumps({"tests": list(docs)}))


def one_per_category_options():
    return GenerationOptions(
        target_counts={
            TestCategory.HAPPY_PATH: 1,
            TestCategory.BOUNDARY: 1,
            TestCategory.ERROR_PATH: 1,
            TestCategory.COMPLIANCE: 1,
        }
    )


class TestGeneration:
    def test_scripted_pass_through(self):
        provider = ScriptedProvider(
            responses=[
                suite_response(case_doc(title="happy")),
                suite_response(case_doc(title="edge", mocks={
                    "getProductDetailsForCancel": {"zuoraStatus": "Cancelled"}})),
                suite_response(case_doc(title="error")),
                suite_response(case_doc(title="policy")),
            ]
        )
        suite = generate_test_suite(CONFIG, one_per_category_options(), provider)
        assert [c.title for c in suite] == ["happy", "edge", "error", "policy"]
        assert [c.category for c in suite] == [
            TestCategory.HAPPY_PATH,
            TestCategory.BOUNDARY,
            TestCategory.ERROR_PATH,
            TestCategory.COMPLIANCE,
        ]
        assert all(c.origin == TestOrigin.GENERATED for c in suite)
        assert len({c.id for c in suite}) == 4

    def test_enum_values_covered_by_scripted_suite(self):
        provider = ScriptedProvider(
            responses=[
                suite_response(
                    case_doc(mocks={"getProductDetailsForCancel": {"zuoraStatus": "Active"}}),
                    case_doc(mocks={"getProductDetailsForCancel": {"zuoraStatus": "Cancelled"}}),
                ),
            ]
        )
        options = GenerationOptions(target_counts={TestCategory.HAPPY_PATH: 2})
        suite = generate_test_suite(CONFIG, options, provider)
        statuses = {
            c.mock_overrides["getProductDetailsForCancel"]["zuoraStatus"] for c in suite
        }
        assert statuses == {"Active", "Cancelled"}

    def test_invalid_case_repaired_via_reask(self):
        bad = case_doc(title="bad", mocks={"ghostTool": {"x": 1}})
        fixed = case_doc(title="fixed")
        provider = ScriptedProvider(
            responses=[
                suite_response(case_doc(title="good"), bad),
                suite_response(fixed),  # the re-ask returns the corrected case
            ]
        )
        options = GenerationOptions(target_counts={TestCategory.HAPPY_PATH: 2})
        suite = generate_test_suite(CONFIG, options, provider)
        assert [c.title for c in suite] == ["good", "fixed"]
        assert len(provider.requests) == 2
        correction = provider.requests[1].messages[-1].content
        assert "invalid" in correction
        assert "ghostTool" in correction

    def test_still_invalid_after_reask_dropped_with_log(self, caplog):
        bad = case_doc(title="bad", mocks={"ghostTool": {"x": 1}})
        provider = ScriptedProvider(
            responses=[
                suite_response(case_doc(title="good"), bad),
                suite_response(bad),  # re-ask fails to fix it
            ]
        )
        options = GenerationOptions(target_counts={TestCategory.HAPPY_PATH: 2})
        with caplog.at_level("WARNING"):
            suite = generate_test_suite(CONFIG, options, provider)
        assert [c.title for c in suite] == ["good"]
        assert any("dropping invalid generated case" in r.message for r in caplog.records)

    def test_zero_valid_cases_is_generation_failure(self):
        bad = case_doc(mocks={"ghostTool": {"x": 1}})
        provider = ScriptedProvider(
            responses=[suite_response(bad), suite_response(bad)]
        )
        options = GenerationOptions(target_counts={TestCategory.HAPPY_PATH: 1})
        with pytest.raises(GenerationFailedError):
            generate_test_suite(CONFIG, options, provider)

    def test_empty_requirements_rejected(self):
        config = UseCaseConfig(id="uc2", name="blank", requirements="   ")
        with pytest.raises(ValidationError):
            generate_test_suite(config, GenerationOptions(), ScriptedProvider(responses=[]))

    def test_request_grounding_includes_all_lists(self):
        provider = ScriptedProvider(responses=[suite_response(case_doc())])
        options = GenerationOptions(
            target_counts={TestCategory.HAPPY_PATH: 1},
            seed_instructions="focus on retention offers",
        )
        config = UseCaseConfig(
            id="uc1",
            name="cancellations",
            requirements=CONFIG.requirements,
            tools=CONFIG.tools,
            variables=CONFIG.variables,
            sub_agents=CONFIG.sub_agents,
        )
        generate_test_suite(config, options, provider)
        content = provider.requests[0].messages[0].content
        assert "Verify the customer's identity" in content
        assert "getProductDetailsForCancel" in content
        assert "zuoraStatus" in content
        assert "Billing Agent" in content
        assert "focus on retention offers" in content
        assert provider.requests[0].response_format == "structured"

    def test_every_generated_case_validates_against_config(self):
        provider = ScriptedProvider(
            responses=[
                suite_response(*(case_doc(title=f"c{i}") for i in range(5))),
            ]
        )
        options = GenerationOptions(target_counts={TestCategory.BOUNDARY: 5})
        suite = generate_test_suite(CONFIG, options, provider)
        for case in suite:
            assert validate_test_case(case, CONFIG) == []


class TestSizing:
    def test_step_counting_numbered(self):
        assert count_requirement_steps(CONFIG.requirements) == 4

    def test_step_counting_bullets(self):
        text = "- greet\n- verify\n* cancel"
        assert count_requirement_steps(text) == 3

    def test_step_counting_prose_falls_back_to_sentences(self):
        assert count_requirement_steps("Greet. Verify. Cancel politely.") == 3

    @pytest.mark.parametrize(
        "steps,total",
        [(3, 23), (5, 23), (6, 47), (9, 47), (10, 112), (14, 112)],
    )
    def test_size_tiers(self, steps, total):
        requirements = "\n".join(f"{i}. step {i}" for i in range(1, steps + 1))
        config = UseCaseConfig(id="u", name="n", requirements=requirements)
        assert sum(default_target_counts(config).values()) == total

    @given(st.integers(min_value=1, max_value=200))
    @settings(max_examples=100, deadline=None)
    def test_split_sums_to_total(self, total):
        counts = split_counts(total)
        assert sum(counts.values()) == total
        assert set(counts) == set(TestCategory)
        assert all(v >= 0 for v in counts.values())

    def test_split_shares_ordering(self):
        counts = split_counts(100)
        assert counts[TestCategory.HAPPY_PATH] == 40
        assert counts[TestCategory.BOUNDARY] == 25
        assert counts[TestCategory.ERROR_PATH] == 20
        assert counts[TestCategory.COMPLIANCE] == 15


def make_suite(n=5):
    provider = ScriptedProvider(
        responses=[suite_response(*(case_doc(title=f"case {i}") for i in range(n)))]
    )
    options = GenerationOptions(target_counts={TestCategory.HAPPY_PATH: n})
    return generate_test_suite(CONFIG, options, provider)


class TestEdits:
    def test_remove(self):
        suite = make_suite(5)
        removed_id = suite[2].id
        edited = edit_test_suite(suite, [SuiteEdit(op="remove", case_id=removed_id)], CONFIG)
        assert len(edited) == 4
        assert removed_id not in {c.id for c in edited}

    def test_add_sets_operator_added_origin(self):
        suite = make_suite(2)
        edited = edit_test_suite(
            suite,
            [SuiteEdit(op="add", case={**case_doc(title="manual"), "category": "compliance"})],
            CONFIG,
        )
        assert len(edited) == 3
        added = edited[-1]
        assert added.origin == TestOrigin.OPERATOR_ADDED
        assert added.category == TestCategory.COMPLIANCE

    def test_add_with_unknown_tool_rejected_naming_it(self):
        suite = make_suite(1)
        with pytest.raises(ValidationError, match="ghostTool"):
            edit_test_suite(
                suite,
                [SuiteEdit(op="add", case=case_doc(mocks={"ghostTool": {"x": 1}}))],
                CONFIG,
            )

    def test_modify_to_empty_script_rejected(self):
        suite = make_suite(1)
        with pytest.raises(ValidationError, match="conversation_script"):
            edit_test_suite(
                suite,
                [SuiteEdit(op="modify", case_id=suite[0].id,
                           changes={"conversation_script": []})],
                CONFIG,
            )

    def test_modify_updates_origin_and_content(self):
        suite = make_suite(1)
        edited = edit_test_suite(
            suite,
            [SuiteEdit(op="modify", case_id=suite[0].id, changes={"title": "renamed"})],
            CONFIG,
        )
        assert edited[0].title == "renamed"
        assert edited[0].origin == TestOrigin.OPERATOR_EDITED
        assert edited[0].id == suite[0].id

    def test_unknown_id_rejected(self):
        suite = make_suite(1)
        with pytest.raises(NotFoundError):
            edit_test_suite(suite, [SuiteEdit(op="remove", case_id="ghost")], CONFIG)
        with pytest.raises(NotFoundError):
            edit_test_suite(suite, [SuiteEdit(op="modify", case_id="ghost")], CONFIG)

    def test_duplicate_add_id_rejected(self):
        suite = make_suite(1)
        with pytest.raises(ValidationError, match="duplicate"):
            edit_test_suite(
                suite,
                [SuiteEdit(op="add", case={**case_doc(), "id": suite[0].id})],
                CONFIG,
            )

    def test_malformed_edit_op_rejected(self):
        with pytest.raises(ValidationError):
            SuiteEdit(op="explode")
        with pytest.raises(ValidationError):
            SuiteEdit(op="add")  # missing case
        with pytest.raises(ValidationError):
            SuiteEdit(op="remove")  # missing case_id

    @given(
        st.lists(
            st.sampled_from(["add", "remove", "modify_title", "modify_script"]),
            max_size=12,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_random_edit_sequences_preserve_total_validity(self, ops):
        suite = make_suite(3)
        counter = [0]
        for op in ops:
            counter[0] += 1
            try:
                if op == "add":
                    edit = SuiteEdit(
                        op="add",
                        case={**case_doc(title=f"gen {counter[0]}"),
                              "id": f"rand-{counter[0]}"},
                    )
                elif op == "remove" and suite:
                    edit = SuiteEdit(op="remove", case_id=suite[0].id)
                elif op == "modify_title" and suite:
                    edit = SuiteEdit(op="modify", case_id=suite[-1].id,
                                     changes={"title": f"t{counter[0]}"})
                elif op == "modify_script" and suite:
                    edit = SuiteEdit(op="modify", case_id=suite[-1].id,
                                     changes={"conversation_script": ["hello", "again"]})
                else:
                    continue
                suite = edit_test_suite(suite, [edit], CONFIG)
            except (ValidationError, NotFoundError):
                continue
            for case in suite:
                assert validate_test_case(case, CONFIG) == []
            assert len({c.id for c in suite}) == len(suite)
