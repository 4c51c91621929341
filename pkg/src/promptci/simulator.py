"""Conversation simulator.

Replays one test case's scripted customer utterances against the composed
system prompt. Tool calls are intercepted and answered from the test's mock
overrides; no real tool ever executes. Assistant text is scanned for the
platform routing marker, which terminates the conversation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ProviderError, SimulationInterruptedError, ValidationError
from .model import (
    PlatformProfile,
    PromptVersion,
    TestCase,
    Transcript,
    Turn,
    UseCaseConfig,
    canonical_json,
    compose_system_prompt,
)
from .providers import ChatMessage, ChatRequest, declare_tools

EVALUATION_TEMPERATURE = 0.0
OPTIMIZATION_TEMPERATURE = 0.3

DEFAULT_MAX_MODEL_TURNS = 8  # consecutive completions per user turn


@dataclass(frozen=True)
class SimulationSettings:
    temperature: float
    max_model_turns_per_user_turn: int = DEFAULT_MAX_MODEL_TURNS
    run_kind: str = "evaluation"

    def __post_init__(self):
        if self.run_kind not in ("evaluation", "optimization"):
            raise ValidationError(f"unknown run_kind {self.run_kind!r}")
        if self.run_kind == "evaluation" and self.temperature != EVALUATION_TEMPERATURE:
            raise ValidationError("evaluation runs must use temperature 0")
        if self.max_model_turns_per_user_turn < 1:
            raise ValidationError("max_model_turns_per_user_turn must be >= 1")

    @classmethod
    def evaluation(cls, max_model_turns: int = DEFAULT_MAX_MODEL_TURNS) -> "SimulationSettings":
        return cls(
            temperature=EVALUATION_TEMPERATURE,
            max_model_turns_per_user_turn=max_model_turns,
            run_kind="evaluation",
        )

    @classmethod
    def optimization(
        cls,
        temperature: float = OPTIMIZATION_TEMPERATURE,
        max_model_turns: int = DEFAULT_MAX_MODEL_TURNS,
    ) -> "SimulationSettings":
        return cls(
            temperature=temperature,
            max_model_turns_per_user_turn=max_model_turns,
            run_kind="optimization",
        )


@dataclass(frozen=True)
class RoutingMatch:
    destination: str
    raw: str


def detect_routing(assistant_text: str, profile: PlatformProfile) -> RoutingMatch | None:
    """First routing marker in the text, or None. The destination is the
    captured group with surrounding whitespace trimmed."""
    match = re.search(profile.routing_marker_pattern, assistant_text)
    if match is None:
        return None
    destination = match.group(1) if match.groups() else match.group(0)
    return RoutingMatch(destination=destination.strip(), raw=match.group(0))


def simulate(
    test: TestCase,
    prompt: PromptVersion,
    profile: PlatformProfile,
    config: UseCaseConfig,
    settings: SimulationSettings,
    provider,
) -> Transcript:
    system_prompt = compose_system_prompt(profile, prompt)
    declarations = declare_tools(config.tools)
    messages: list[ChatMessage] = []
    turns: list[Turn] = []
    script = list(test.conversation_script)

    def finish(completed: bool, abort_reason: str | None, consumed: int) -> Transcript:
        return Transcript(
            test_case_id=test.id,
            prompt_version_index=prompt.version_index,
            turns=tuple(turns),
            completed=completed,
            abort_reason=abort_reason,
            unconsumed_script=tuple(script[consumed:]),
        )

    for index, utterance in enumerate(script):
        turns.append(Turn.customer(utterance))
        messages.append(ChatMessage(role="user", content=utterance))
        completions = 0
        while True:
            if completions >= settings.max_model_turns_per_user_turn:
                return finish(False, "turn_budget_exceeded", index + 1)
            request = ChatRequest(
                system_prompt=system_prompt,
                messages=tuple(messages),
                tool_declarations=declarations,
                temperature=settings.temperature,
            )
            try:
                response = provider.complete(request)
            except ProviderError as exc:
                raise SimulationInterruptedError(
                    f"provider failed during test {test.id}: {exc}",
                    partial_transcript=finish(False, "provider_failure", index + 1),
                ) from exc
            completions += 1

            if response.kind == "tool_call":
                for call in response.tool_calls:
                    turns.append(Turn.tool_call(call.tool_name, call.arguments, call.call_id))
                    mock = test.mock_overrides.get(call.tool_name)
                    if mock is None:
                        return finish(False, f"unmocked_tool:{call.tool_name}", index + 1)
                    turns.append(Turn.tool_response(call.call_id, mock))
                    messages.append(
                        ChatMessage(
                            role="assistant",
                            content=canonical_json(
                                {
                                    "tool_call": {
                                        "tool_name": call.tool_name,
                                        "arguments": dict(call.arguments),
                                        "call_id": call.call_id,
                                    }
                                }
                            ),
                        )
                    )
                    messages.append(
                        ChatMessage(
                            role="tool",
                            content=canonical_json(mock),
                            tool_call_ref=call.call_id,
                        )
                    )
                continue  # tool answered; ask the model again

            text = response.text or ""
            turns.append(Turn.assistant(text))
            messages.append(ChatMessage(role="assistant", content=text))
            routed = detect_routing(text, profile)
            if routed is not None:
                turns.append(Turn.routing(routed.destination, routed.raw))
                # Routing is terminal: control moved to another agent, so the
                # rest of the script is recorded as unconsumed, not replayed.
                return finish(True, None, index + 1)
            break  # plain text ends this user turn

    return finish(True, None, len(script))
