"""Simulator tests: scripted conversations, routing detection, interception
totality, and determinism under forked scripts."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptci.errors import ScriptExhaustedError, SimulationInterruptedError, ValidationError
from promptci.model import (
    PromptOrigin,
    PromptVersion,
    TestCase,
    ToolSpec,
    TurnKind,
    UseCaseConfig,
    canonical_json,
)
from promptci.platform import DEFAULT_PROFILE
from promptci.providers import ChatRequest, ChatResponse, ScriptedProvider
from promptci.simulator import (
    EVALUATION_TEMPERATURE,
    OPTIMIZATION_TEMPERATURE,
    RoutingMatch,
    SimulationSettings,
    detect_routing,
    simulate,
)

PROMPT = PromptVersion(version_index=0, text="Help with cancellations.", origin=PromptOrigin.DRAFT)

CONFIG = UseCaseConfig(
    id="uc1",
    name="cancellations",
    requirements="Handle cancellation requests.",
    tools=(
        ToolSpec(name="getProductDetailsForCancel"),
        ToolSpec(name="submitCancellation"),
    ),
    sub_agents=("Billing Agent",),
)


def make_test(script=("I want to cancel",), mocks=None, test_id="t1"):
    return TestCase(
        id=test_id,
        title="cancel flow",
        category="happy_path",
        conversation_script=tuple(script),
        pass_criteria=("The agent checks eligibility before cancelling",),
        mock_overrides=mocks or {},
    )


def run(test, responses=None, responder=None, settings_=None):
    provider = ScriptedProvider(responses=responses or [], responder=responder)
    transcript = simulate(
        test,
        PROMPT,
        DEFAULT_PROFILE,
        CONFIG,
        settings_ or SimulationSettings.evaluation(),
        provider,
    )
    return transcript, provider


class TestDetectRouting:
    def test_marker_in_text(self):
        match = detect_routing("Done. [ROUTE TO: Billing Agent] bye", DEFAULT_PROFILE)
        assert match == RoutingMatch(
            destination="Billing Agent", raw="[ROUTE TO: Billing Agent]"
        )

    def test_lowercase_is_not_a_marker(self):
        assert detect_routing("route to billing", DEFAULT_PROFILE) is None

    def test_first_marker_wins(self):
        match = detect_routing("[ROUTE TO: A][ROUTE TO: B]", DEFAULT_PROFILE)
        assert match.destination == "A"

    def test_destination_whitespace_trimmed(self):
        match = detect_routing("[ROUTE TO:  Billing Agent ]", DEFAULT_PROFILE)
        assert match.destination == "Billing Agent"

    def test_no_marker(self):
        assert detect_routing("All set, anything else?", DEFAULT_PROFILE) is None


class TestSimulationSettings:
    def test_evaluation_pins_temperature_zero(self):
        assert SimulationSettings.evaluation().temperature == EVALUATION_TEMPERATURE
        with pytest.raises(ValidationError):
            SimulationSettings(temperature=0.3, run_kind="evaluation")

    def test_optimization_defaults_and_override(self):
        assert SimulationSettings.optimization().temperature == OPTIMIZATION_TEMPERATURE
        assert SimulationSettings.optimization(temperature=0.7).temperature == 0.7


class TestSimulate:
    def test_tool_call_then_answer_then_text(self):
        test = make_test(mocks={"getProductDetailsForCancel": {"zuoraStatus": "Active"}})
        transcript, _ = run(
            test,
            responses=[
                ChatResponse.of_tool_call("getProductDetailsForCancel", {"account": "A1"}),
                ChatResponse.of_text("You are eligible."),
            ],
        )
        kinds = [t.kind for t in transcript.turns]
        assert kinds == [
            TurnKind.CUSTOMER,
            TurnKind.TOOL_CALL,
            TurnKind.TOOL_RESPONSE,
            TurnKind.ASSISTANT_TEXT,
        ]
        assert transcript.turns[2].payload["value"] == {"zuoraStatus": "Active"}
        assert transcript.completed
        assert transcript.abort_reason is None

    def test_routing_terminates_and_marks_unconsumed(self):
        test = make_test(script=("I want billing", "second message never sent"))
        transcript, _ = run(
            test,
            responses=[ChatResponse.of_text("Transferring you now. [ROUTE TO: Billing Agent]")],
        )
        assert transcript.turns[-1].kind == TurnKind.ROUTING_EVENT
        assert transcript.turns[-1].payload["destination"] == "Billing Agent"
        assert transcript.completed
        assert transcript.unconsumed_script == ("second message never sent",)

    def test_unmocked_tool_aborts_with_reason(self):
        test = make_test(mocks={})  # no mock for the called tool
        transcript, _ = run(
            test,
            responses=[ChatResponse.of_tool_call("submitCancellation", {})],
        )
        assert not transcript.completed
        assert transcript.abort_reason == "unmocked_tool:submitCancellation"
        # The call itself is still on the record for the judge to see.
        assert transcript.turns[-1].kind == TurnKind.TOOL_CALL

    def test_turn_budget_guards_tool_loops(self):
        test = make_test(mocks={"getProductDetailsForCancel": {"zuoraStatus": "Active"}})
        transcript, provider = run(
            test,
            responder=lambda req: ChatResponse.of_tool_call(
                "getProductDetailsForCancel", {}, call_id=f"c{len(req.messages)}"
            ),
            settings_=SimulationSettings(
                temperature=0.0, max_model_turns_per_user_turn=3, run_kind="evaluation"
            ),
        )
        assert not transcript.completed
        assert transcript.abort_reason == "turn_budget_exceeded"
        assert len(transcript.tool_calls()) == 3

    def test_multiple_calls_in_one_response_interleave(self):
        test = make_test(
            mocks={
                "getProductDetailsForCancel": {"zuoraStatus": "Active"},
                "submitCancellation": {"ok": True},
            }
        )
        response = ChatResponse(
            kind="tool_call",
            tool_calls=(
                ChatResponse.of_tool_call("getProductDetailsForCancel", {}, "c1").tool_calls[0],
                ChatResponse.of_tool_call("submitCancellation", {}, "c2").tool_calls[0],
            ),
        )
        transcript, _ = run(test, responses=[response, ChatResponse.of_text("done")])
        kinds = [t.kind for t in transcript.turns]
        assert kinds == [
            TurnKind.CUSTOMER,
            TurnKind.TOOL_CALL,
            TurnKind.TOOL_RESPONSE,
            TurnKind.TOOL_CALL,
            TurnKind.TOOL_RESPONSE,
            TurnKind.ASSISTANT_TEXT,
        ]

    def test_multi_utterance_script_all_consumed(self):
        test = make_test(script=("hi", "cancel please", "thanks"))
        transcript, _ = run(
            test,
            responses=[
                ChatResponse.of_text("Hello!"),
                ChatResponse.of_text("Checking."),
                ChatResponse.of_text("Welcome."),
            ],
        )
        assert transcript.completed
        assert transcript.unconsumed_script == ()
        customers = [t for t in transcript.turns if t.kind == TurnKind.CUSTOMER]
        assert [t.payload["text"] for t in customers] == ["hi", "cancel please", "thanks"]

    def test_provider_failure_interrupts_with_partial_transcript(self):
        test = make_test(script=("hi", "second"))

        calls = []

        def responder(request):
            calls.append(1)
            if len(calls) == 2:
                raise ScriptExhaustedError("script ran dry")
            return ChatResponse.of_text("Hello!")

        with pytest.raises(SimulationInterruptedError) as err:
            run(test, responder=responder)
        partial = err.value.partial_transcript
        assert partial is not None
        assert not partial.completed
        assert partial.abort_reason == "provider_failure"

    def test_requests_carry_configured_temperature_and_tools(self):
        test = make_test()
        _, provider = run(
            test,
            responses=[ChatResponse.of_text("ok")],
            settings_=SimulationSettings.optimization(),
        )
        request = provider.requests[0]
        assert request.temperature == OPTIMIZATION_TEMPERATURE
        declared = {d["name"] for d in request.tool_declarations}
        assert declared == {"getProductDetailsForCancel", "submitCancellation"}

    def test_system_prompt_is_backend_plus_frontend(self):
        test = make_test()
        _, provider = run(test, responses=[ChatResponse.of_text("ok")])
        system = provider.requests[0].system_prompt
        assert system.startswith(DEFAULT_PROFILE.backend_prompt)
        assert system.endswith(PROMPT.text)
        assert "\n\n" in system

    def test_tool_history_is_replayed_to_the_model(self):
        test = make_test(mocks={"getProductDetailsForCancel": {"zuoraStatus": "Active"}})
        _, provider = run(
            test,
            responses=[
                ChatResponse.of_tool_call("getProductDetailsForCancel", {}, "c1"),
                ChatResponse.of_text("eligible"),
            ],
        )
        final_request = provider.requests[-1]
        roles = [m.role for m in final_request.messages]
        assert roles == ["user", "assistant", "tool"]
        assert final_request.messages[-1].tool_call_ref == "c1"
        assert canonical_json({"zuoraStatus": "Active"}) == final_request.messages[-1].content


RESPONSE_POOL = st.sampled_from(
    [
        ("text", "Sure, let me check."),
        ("text", "Transferring. [ROUTE TO: Billing Agent]"),
        ("tool", "getProductDetailsForCancel"),
        ("tool", "submitCancellation"),
    ]
)


class TestDeterminism:
    @given(st.lists(RESPONSE_POOL, min_size=1, max_size=6), st.integers(1, 3))
    @settings(max_examples=100, deadline=None)
    def test_forked_scripts_produce_identical_transcripts(self, plan, n_utterances):
        responses = []
        for kind, value in plan:
            if kind == "text":
                responses.append(ChatResponse.of_text(value))
            else:
                responses.append(ChatResponse.of_tool_call(value, {}, f"c{len(responses)}"))
        # Pad with plain text so the script never exhausts mid-conversation.
        responses.extend(ChatResponse.of_text("ok") for _ in range(n_utterances + 8))
        test = make_test(
            script=tuple(f"message {i}" for i in range(n_utterances)),
            mocks={
                "getProductDetailsForCancel": {"zuoraStatus": "Active"},
                "submitCancellation": {"ok": True},
            },
        )
        base = ScriptedProvider(responses=responses)
        settings_ = SimulationSettings.evaluation()
        first = simulate(test, PROMPT, DEFAULT_PROFILE, CONFIG, settings_, base.fork())
        second = simulate(test, PROMPT, DEFAULT_PROFILE, CONFIG, settings_, base.fork())
        assert first.to_dict() == second.to_dict()

    @given(st.lists(RESPONSE_POOL, min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_mock_fidelity(self, plan):
        mocks = {
            "getProductDetailsForCancel": {"zuoraStatus": "Active", "total": 12},
            "submitCancellation": {"ok": True},
        }
        responses = []
        for kind, value in plan:
            if kind == "text":
                responses.append(ChatResponse.of_text(value))
            else:
                responses.append(ChatResponse.of_tool_call(value, {}, f"c{len(responses)}"))
        responses.extend(ChatResponse.of_text("ok") for _ in range(10))
        test = make_test(mocks=mocks)
        transcript = simulate(
            test,
            PROMPT,
            DEFAULT_PROFILE,
            CONFIG,
            SimulationSettings.evaluation(),
            ScriptedProvider(responses=responses),
        )
        responses_by_call = {
            t.payload["call_id"]: t.payload["value"]
            for t in transcript.turns
            if t.kind == TurnKind.TOOL_RESPONSE
        }
        for turn in transcript.tool_calls():
            call_id = turn.payload["call_id"]
            if call_id in responses_by_call:
                expected = mocks[turn.payload["tool_name"]]
                assert canonical_json(responses_by_call[call_id]) == canonical_json(expected)
